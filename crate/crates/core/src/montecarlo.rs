//! Link-level Monte Carlo: transmit `y = H·q(P·s) + n`, decode per user and
//! count symbol errors.
//!
//! Every trial draws its randomness from substreams of `(seed, trial)`, and
//! trials are aggregated by integer addition, so results do not depend on how
//! rayon schedules the work or how many threads it has.

use rayon::prelude::*;

use crate::channel::{
    nearest_neighbor_decode, one_bit_quantize, sample_channel, sample_symbols, ChannelRealization,
    SymbolVector, SystemConfig,
};
use crate::error::{domain, Result};
use crate::numerics::{complex_gaussian, CVector, RngStream};
use crate::precoding::{Precoder, PrecodingContext, SpectralShaper};

/// Two-sided 95% standard normal quantile.
const Z95: f64 = 1.959_963_984_540_054;
const TRIALS_PER_TASK: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelMode {
    /// One channel realization shared by all trials.
    Fixed,
    /// A fresh channel per trial.
    #[default]
    PerTrial,
}

/// Monte Carlo symbol error rate with a 95% Wilson interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SerEstimate {
    pub ser: f64,
    pub symbol_errors: u64,
    pub symbols_tested: u64,
    pub trials: u64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub per_user_ser: Option<Vec<f64>>,
}

impl SerEstimate {
    pub fn from_counts(per_user_errors: &[u64], trials: u64) -> Result<Self> {
        let users = per_user_errors.len() as u64;
        let symbols_tested = users * trials;
        let symbol_errors: u64 = per_user_errors.iter().sum();
        let (ci_low, ci_high) = confidence_interval(symbol_errors, symbols_tested)?;
        Ok(Self {
            ser: symbol_errors as f64 / symbols_tested as f64,
            symbol_errors,
            symbols_tested,
            trials,
            ci_low,
            ci_high,
            per_user_ser: Some(per_user_errors.iter().map(|&e| e as f64 / trials as f64).collect()),
        })
    }

    /// Binomial standard deviation of the estimate around probability `p`.
    pub fn binomial_sd(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.symbols_tested as f64).sqrt()
    }

    pub fn overlaps(&self, other: &SerEstimate) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

/// Wilson score 95% interval for `errors` successes out of `n`.
pub fn confidence_interval(errors: u64, n: u64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(domain("confidence interval needs at least one trial"));
    }
    if errors > n {
        return Err(domain(format!("{errors} errors out of {n} trials")));
    }
    let nf = n as f64;
    let p = errors as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let low = if errors == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let high = if errors == n { 1.0 } else { (center + half).clamp(p, 1.0) };
    Ok((low, high))
}

/// `H·q(v) + n` for an already precoded vector `v`, noise from `stream`.
pub fn transmit_precoded(
    channel: &ChannelRealization,
    precoded: &CVector,
    noise_variance: f64,
    stream: RngStream,
) -> Result<CVector> {
    if precoded.len() != channel.n_antennas() {
        return Err(domain(format!(
            "precoded vector has length {}, channel has {} antennas",
            precoded.len(),
            channel.n_antennas()
        )));
    }
    if !noise_variance.is_finite() || noise_variance < 0.0 {
        return Err(domain(format!("noise variance must be non-negative, got {noise_variance}")));
    }
    let mut y = channel.matrix() * one_bit_quantize(precoded);
    if noise_variance > 0.0 {
        let mut rng = stream.rng();
        for yk in y.iter_mut() {
            *yk += complex_gaussian(&mut rng, noise_variance);
        }
    }
    Ok(y)
}

/// One use of the downlink: `y = H·q(P·s) + n`.
pub fn transmit_once(
    channel: &ChannelRealization,
    precoder: &Precoder,
    symbols: &SymbolVector,
    noise_variance: f64,
    stream: RngStream,
) -> Result<CVector> {
    if precoder.n_antennas() != channel.n_antennas()
        || precoder.n_users() != channel.n_users()
        || symbols.len() != channel.n_users()
    {
        return Err(domain(format!(
            "shape mismatch: H is {}x{}, P is {}x{}, s has {} entries",
            channel.n_users(),
            channel.n_antennas(),
            precoder.n_antennas(),
            precoder.n_users(),
            symbols.len()
        )));
    }
    transmit_precoded(channel, &precoder.apply(symbols), noise_variance, stream)
}

/// Random streams used by one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialStreams {
    pub channel: RngStream,
    pub symbols: RngStream,
    pub noise: RngStream,
}

impl TrialStreams {
    pub fn new(seed: u64, trial: u64, mode: ChannelMode) -> Self {
        let base = RngStream::new(seed, trial);
        let channel = match mode {
            ChannelMode::PerTrial => base.substream(0),
            ChannelMode::Fixed => fixed_channel_stream(seed),
        };
        Self { channel, symbols: base.substream(1), noise: base.substream(2) }
    }
}

fn fixed_channel_stream(seed: u64) -> RngStream {
    RngStream::new(seed, u64::MAX).substream(0)
}

/// Runs `trials` trials for several shapers at once. Every shaper sees the
/// same channels, symbols and noise, and the estimate for a shaper does not
/// depend on which other shapers share the batch.
pub fn estimate_ser_batch(
    cfg: &SystemConfig,
    shapers: &[SpectralShaper],
    trials: u64,
    mode: ChannelMode,
) -> Result<Vec<SerEstimate>> {
    cfg.validate()?;
    if trials == 0 {
        return Err(domain("at least one trial is required"));
    }
    let users = cfg.n_users;
    let fixed = match mode {
        ChannelMode::Fixed => Some(sample_channel(cfg, fixed_channel_stream(cfg.seed))?),
        ChannelMode::PerTrial => None,
    };
    let tasks = trials.div_ceil(TRIALS_PER_TASK);
    let partials: Vec<Vec<u64>> = (0..tasks)
        .into_par_iter()
        .map(|task| {
            let mut counts = vec![0u64; shapers.len() * users];
            let end = ((task + 1) * TRIALS_PER_TASK).min(trials);
            for trial in task * TRIALS_PER_TASK..end {
                let streams = TrialStreams::new(cfg.seed, trial, mode);
                let owned;
                let channel = match &fixed {
                    Some(h) => h,
                    None => {
                        owned = sample_channel(cfg, streams.channel)?;
                        &owned
                    }
                };
                let symbols = sample_symbols(users, streams.symbols)?;
                let ctx = PrecodingContext::new(channel);
                for (i, shaper) in shapers.iter().enumerate() {
                    let precoded = ctx.precode(shaper, &symbols)?;
                    let y = transmit_precoded(channel, &precoded, cfg.noise_variance, streams.noise)?;
                    let decoded = nearest_neighbor_decode(&y);
                    let row = &mut counts[i * users..(i + 1) * users];
                    for (k, (a, b)) in decoded.as_vector().iter().zip(symbols.as_vector().iter()).enumerate() {
                        if a != b {
                            row[k] += 1;
                        }
                    }
                }
            }
            Ok(counts)
        })
        .collect::<Result<_>>()?;

    let mut totals = vec![0u64; shapers.len() * users];
    for partial in &partials {
        for (t, p) in totals.iter_mut().zip(partial) {
            *t += p;
        }
    }
    totals
        .chunks(users)
        .map(|row| SerEstimate::from_counts(row, trials))
        .collect()
}

pub fn estimate_ser(
    cfg: &SystemConfig,
    f: &SpectralShaper,
    trials: u64,
    mode: ChannelMode,
) -> Result<SerEstimate> {
    let mut out = estimate_ser_batch(cfg, std::slice::from_ref(f), trials, mode)?;
    Ok(out.remove(0))
}
