//! Householder-dice reformulations of the downlink.
//!
//! Haar-distributed singular vectors are generated one reflector at a time,
//! which turns `y = H·q(P·s) + n` into a chain of vector operations and
//! finally into the per-draw scalar model `ŷ = T_s·s + T_g·g₂ + n`. Nothing
//! here materializes an N×N unitary.

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::asymptotics::{asymptotic_constants, MarchenkoPastur};
use crate::channel::{
    nearest_neighbor_decode, one_bit_quantize, sample_channel, sample_symbols, SymbolVector,
    SystemConfig,
};
use crate::error::{domain, Error, Result};
use crate::montecarlo::{transmit_precoded, SerEstimate};
use crate::numerics::{
    complex_gaussian, complex_gaussian_vector, max_abs_diff, tridiagonal_eigenvalues, CMatrix,
    CVector, GeneralizedReflector, Reflector, RngStream, C64,
};
use crate::precoding::{PrecodingContext, SpectralShaper};
use crate::stats::{self, TestOutcome};

/// Fewest samples per side accepted by [`distribution_match_test`].
pub const MIN_MATCH_SAMPLES: usize = 1000;
const MAX_RESAMPLES: u64 = 16;
const RESAMPLE_OFFSET: u64 = 1 << 32;

/// Where the singular values `D` of a draw come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectrumSource {
    /// SVD of a freshly sampled channel.
    #[default]
    SampledChannel,
    /// The same law as `SampledChannel`, drawn from the bidiagonal Laguerre
    /// model so that only a K×K tridiagonal eigenproblem is solved.
    BidiagonalLaguerre,
    /// K i.i.d. eigenvalues from the Marchenko–Pastur law.
    MarchenkoPasturIid,
}

/// Singular values of one draw, in descending order.
pub fn sample_singular_values(
    cfg: &SystemConfig,
    source: SpectrumSource,
    stream: RngStream,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (k, n) = (cfg.n_users, cfg.n_antennas);
    let mut d: Vec<f64> = match source {
        SpectrumSource::SampledChannel => {
            // Eigenvalues of the K×K Gram matrix are far cheaper than an SVD
            // of the K×N channel and accurate enough away from rank deficiency.
            let gram = sample_channel(cfg, stream)?.gram();
            gram.symmetric_eigenvalues()
                .iter()
                .map(|&lambda| lambda.max(0.0).sqrt())
                .collect()
        }
        SpectrumSource::BidiagonalLaguerre => {
            // Lower bidiagonal B with B[i,i]² ~ Γ(N − i) and B[i+1,i]² ~ Γ(K − 1 − i);
            // eig(BBᵀ)/N has the law of eig(HHᴴ).
            let mut rng = stream.rng();
            let mut chi = |shape: usize| -> Result<f64> {
                let g = Gamma::new(shape as f64, 1.0).map_err(|e| domain(e.to_string()))?;
                Ok(g.sample(&mut rng).sqrt())
            };
            let main: Vec<f64> = (0..k).map(|i| chi(n - i)).collect::<Result<_>>()?;
            let sub: Vec<f64> = (0..k - 1).map(|i| chi(k - 1 - i)).collect::<Result<_>>()?;
            let diag: Vec<f64> = (0..k)
                .map(|i| main[i] * main[i] + if i > 0 { sub[i - 1] * sub[i - 1] } else { 0.0 })
                .collect();
            let off: Vec<f64> = (0..k - 1).map(|i| main[i] * sub[i]).collect();
            tridiagonal_eigenvalues(&diag, &off)?
                .into_iter()
                .map(|lambda| (lambda.max(0.0) / n as f64).sqrt())
                .collect()
        }
        SpectrumSource::MarchenkoPasturIid => {
            let mp = MarchenkoPastur::new(cfg.gamma())?;
            let mut rng = stream.rng();
            (0..k).map(|_| mp.sample(&mut rng).sqrt()).collect()
        }
    };
    d.sort_by(|a, b| b.total_cmp(a));
    Ok(d)
}

/// Runs `draw`, moving to a fresh substream whenever a reflector meets the
/// zero vector.
fn with_resampling<T>(stream: RngStream, what: &str, mut draw: impl FnMut(RngStream) -> Result<T>) -> Result<T> {
    let mut current = stream;
    for attempt in 0..=MAX_RESAMPLES {
        match draw(current) {
            Err(Error::ZeroVector) => {
                log::warn!("{what}: zero vector at a reflector input on attempt {attempt}, resampling");
                current = stream.substream(RESAMPLE_OFFSET + attempt);
            }
            other => return other,
        }
    }
    Err(Error::ZeroVector)
}

fn shaped(f: &SpectralShaper, d: &[f64]) -> Result<Vec<f64>> {
    d.iter().map(|&x| f.eval(x)).collect()
}

/// `f(D)ᵀ x`: scales the first K entries of a length-N vector, zeros the rest.
fn shape_up(fd: &[f64], x: &CVector, n: usize) -> CVector {
    let mut out = CVector::zeros(n);
    for (k, &w) in fd.iter().enumerate() {
        out[k] = x[k] * w;
    }
    out
}

/// `D x` for `x` of length N: the first K entries scaled by `d`.
fn shape_down(d: &[f64], x: &CVector) -> CVector {
    CVector::from_iterator(d.len(), d.iter().enumerate().map(|(k, &w)| x[k] * w))
}

fn tail(x: &CVector) -> CVector {
    x.rows(1, x.len() - 1).into_owned()
}

/// Haar-distributed m×m unitary from the reflector recursion
/// `Q_k = R(g)·(1 ⊕ Q_{k−1})·R(e₁)ᴴ`, starting from a uniform phase.
pub fn haar_sample(m: usize, stream: RngStream) -> Result<CMatrix> {
    if m == 0 {
        return Err(domain("Haar matrix dimension must be positive"));
    }
    with_resampling(stream, "haar_sample", |st| {
        let mut rng = st.rng();
        let g = complex_gaussian(&mut rng, 1.0);
        if g.norm() == 0.0 {
            return Err(Error::ZeroVector);
        }
        let mut q = CMatrix::from_element(1, 1, g / g.norm());
        for size in 2..=m {
            let r = Reflector::new(&complex_gaussian_vector(&mut rng, size, 1.0))?;
            let mut next = CMatrix::zeros(size, size);
            next[(0, 0)] = C64::new(1.0, 0.0);
            next.view_mut((1, 1), (size - 1, size - 1)).copy_from(&q);
            for c in 0..size {
                let col = r.apply(&next.column(c).into_owned());
                // R(e₁)ᴴ = diag(1, −1, …, −1) acts on the right by negating columns 2..size.
                let sign = if c == 0 { 1.0 } else { -1.0 };
                next.set_column(c, &(col * C64::new(sign, 0.0)));
            }
            q = next;
        }
        Ok(q)
    })
}

/// The intermediate vectors of the iterative construction.
#[derive(Debug, Clone)]
pub struct HdTrace {
    pub s1: CVector,
    pub s2: CVector,
    pub s3: CVector,
    pub v1: CVector,
    pub v2: CVector,
    pub y_tilde: CVector,
    pub s: SymbolVector,
    pub d: Vec<f64>,
    /// Largest deviation of a norm that the reflectors must preserve.
    pub isometry_defect: f64,
}

/// One draw of `(ỹ, s)` by applying every random unitary as a reflector.
///
/// Substreams of `stream`: 0 spectrum, 1 symbols, 2 `g₁`, 3 `g₂`, 4 `z₁`,
/// 5 `z₂`, 6 noise.
pub fn hd_iterative_draw(
    cfg: &SystemConfig,
    f: &SpectralShaper,
    source: SpectrumSource,
    stream: RngStream,
) -> Result<HdTrace> {
    cfg.validate()?;
    with_resampling(stream, "hd_iterative_draw", |st| hd_iterative_once(cfg, f, source, st))
}

fn hd_iterative_once(
    cfg: &SystemConfig,
    f: &SpectralShaper,
    source: SpectrumSource,
    st: RngStream,
) -> Result<HdTrace> {
    let (k, n) = (cfg.n_users, cfg.n_antennas);
    let d = sample_singular_values(cfg, source, st.substream(0))?;
    let fd = shaped(f, &d)?;
    let s = sample_symbols(k, st.substream(1))?;
    let g1 = complex_gaussian_vector(&mut st.substream(2).rng(), k, 1.0);
    let g2 = complex_gaussian_vector(&mut st.substream(3).rng(), k, 1.0);
    let z1 = complex_gaussian_vector(&mut st.substream(4).rng(), n, 1.0);
    let z2 = complex_gaussian_vector(&mut st.substream(5).rng(), n, 1.0);
    let noise = complex_gaussian_vector(&mut st.substream(6).rng(), k, cfg.noise_variance);

    let sv = s.as_vector();
    let r_s = Reflector::new(sv)?;
    let r_g1 = Reflector::new(&g1)?;
    let r_z1 = Reflector::new(&z1)?;

    let rotated_s = r_s.apply_adjoint(sv);
    let s1 = shape_up(&fd, &r_g1.apply(&rotated_s), n);

    let r_s1 = Reflector::new(&s1)?;
    let s2 = one_bit_quantize(&r_z1.apply(&r_s1.apply_adjoint(&s1)));
    let v1 = r_z1.apply_adjoint(&s2);

    let r2_v1 = GeneralizedReflector::new(2, &v1)?;
    let r2_z2 = GeneralizedReflector::new(2, &z2)?;
    let folded_v1 = r2_v1.apply_adjoint(&v1);
    let s3 = shape_down(&d, &r_s1.apply(&r2_z2.apply(&folded_v1)));
    let v2 = r_g1.apply_adjoint(&s3);

    let r2_v2 = GeneralizedReflector::new(2, &v2)?;
    let r2_g2 = GeneralizedReflector::new(2, &g2)?;
    let y_tilde = r_s.apply(&r2_g2.apply(&r2_v2.apply_adjoint(&v2))) + noise;

    let root_n = (n as f64).sqrt();
    let isometry_defect = [
        (rotated_s.norm() - sv.norm()).abs(),
        (sv.norm() - (k as f64).sqrt()).abs(),
        (folded_v1.norm() - v1.norm()).abs(),
        (v1.norm() - root_n).abs(),
        (s2.norm() - root_n).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    Ok(HdTrace { s1, s2, s3, v1, v2, y_tilde, s, d, isometry_defect })
}

/// One draw of the closed-form scalar model `ŷ = T_s·s + T_g·g₂ + n`,
/// together with the randomness it was built from.
#[derive(Debug, Clone)]
pub struct EquivalentDraw {
    pub t_s: C64,
    pub t_g: f64,
    pub c_1: C64,
    pub c_2: f64,
    pub s_tilde_1: CVector,
    pub y_hat: CVector,
    pub s: SymbolVector,
    pub d: Vec<f64>,
    pub g1: CVector,
    pub g2: CVector,
    pub z1: CVector,
    pub z2: CVector,
    pub noise: CVector,
}

/// Samples `(ŷ, s)` with the same substream layout as [`hd_iterative_draw`].
pub fn equivalent_model_draw(
    cfg: &SystemConfig,
    f: &SpectralShaper,
    source: SpectrumSource,
    stream: RngStream,
) -> Result<EquivalentDraw> {
    cfg.validate()?;
    with_resampling(stream, "equivalent_model_draw", |st| equivalent_once(cfg, f, source, st))
}

fn equivalent_once(
    cfg: &SystemConfig,
    f: &SpectralShaper,
    source: SpectrumSource,
    st: RngStream,
) -> Result<EquivalentDraw> {
    let (k, n) = (cfg.n_users, cfg.n_antennas);
    let d = sample_singular_values(cfg, source, st.substream(0))?;
    let fd = shaped(f, &d)?;
    let s = sample_symbols(k, st.substream(1))?;
    let g1 = complex_gaussian_vector(&mut st.substream(2).rng(), k, 1.0);
    let g2 = complex_gaussian_vector(&mut st.substream(3).rng(), k, 1.0);
    let z1 = complex_gaussian_vector(&mut st.substream(4).rng(), n, 1.0);
    let z2 = complex_gaussian_vector(&mut st.substream(5).rng(), n, 1.0);
    let noise = complex_gaussian_vector(&mut st.substream(6).rng(), k, cfg.noise_variance);

    let sv = s.as_vector();
    let (s_norm, g1_norm) = (sv.norm(), g1.norm());
    if g1_norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let s_tilde_1 = shape_up(&fd, &g1, n) * C64::new(s_norm / g1_norm, 0.0);
    let s1_norm = s_tilde_1.norm();
    let z1_norm = z1.norm();
    if s1_norm == 0.0 || z1_norm == 0.0 {
        return Err(Error::ZeroVector);
    }

    let q_z1 = one_bit_quantize(&z1);
    let c_1 = z1.dotc(&q_z1) / (s1_norm * z1_norm);
    let z2_tail = tail(&z2);
    let z2_tail_norm = z2_tail.norm();
    if z2_tail_norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let c_2 = Reflector::new(&z1)?.tail_adjoint(&q_z1).norm() / z2_tail_norm;

    let mixed = &s_tilde_1 * c_1 + Reflector::new(&s_tilde_1)?.tail_apply(&z2_tail) * C64::new(c_2, 0.0);
    let w = shape_down(&d, &mixed);

    let rotated_g2 = Reflector::new(sv)?.apply_adjoint(&g2);
    let g2_tail_norm = tail(&rotated_g2).norm();
    if g2_tail_norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let t_g = Reflector::new(&g1)?.tail_adjoint(&w).norm() / g2_tail_norm;
    let t_s = g1.dotc(&w) / (g1_norm * s_norm) - rotated_g2[0] * (t_g / s_norm);

    let y_hat = sv * t_s + &g2 * C64::new(t_g, 0.0) + &noise;
    Ok(EquivalentDraw { t_s, t_g, c_1, c_2, s_tilde_1, y_hat, s, d, g1, g2, z1, z2, noise })
}

/// The quadratic forms `g₁ᴴ f₁(D) f₂(D)ᵀ g₁ / K` and `g₁ᴴ f₁(D) f₂(D)ᵀ g₂ / K`
/// with `f₁ = f` and `f₂ = d·f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticForms {
    pub diagonal: f64,
    pub cross: C64,
}

pub fn quadratic_forms(draw: &EquivalentDraw, f: &SpectralShaper) -> Result<QuadraticForms> {
    let k = draw.d.len() as f64;
    let mut diagonal = 0.0;
    let mut cross = C64::new(0.0, 0.0);
    for (i, &d) in draw.d.iter().enumerate() {
        let fd = f.eval(d)?;
        let weight = fd * d * fd;
        diagonal += draw.g1[i].norm_sqr() * weight;
        cross += draw.g1[i].conj() * draw.g2[i] * weight;
    }
    Ok(QuadraticForms { diagonal: diagonal / k, cross: cross / k })
}

/// A received scalar and the symbol that was sent to that user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceivedSample {
    pub received: C64,
    pub symbol: C64,
}

/// Which construction produces per-user samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleModel {
    /// The physical chain `H·q(P·s) + n`.
    Direct,
    Equivalent(SpectrumSource),
    HouseholderDice(SpectrumSource),
}

impl SampleModel {
    fn tag(&self) -> u64 {
        match self {
            Self::Direct => 0,
            Self::Equivalent(_) => 1,
            Self::HouseholderDice(_) => 2,
        }
    }

    fn draw(&self, cfg: &SystemConfig, f: &SpectralShaper, stream: RngStream) -> Result<(CVector, SymbolVector)> {
        match *self {
            Self::Direct => {
                let channel = sample_channel(cfg, stream.substream(0))?;
                let s = sample_symbols(cfg.n_users, stream.substream(1))?;
                let precoded = PrecodingContext::new(&channel).precode(f, &s)?;
                let y = transmit_precoded(&channel, &precoded, cfg.noise_variance, stream.substream(2))?;
                Ok((y, s))
            }
            Self::Equivalent(source) => {
                let draw = equivalent_model_draw(cfg, f, source, stream)?;
                Ok((draw.y_hat, draw.s))
            }
            Self::HouseholderDice(source) => {
                let trace = hd_iterative_draw(cfg, f, source, stream)?;
                Ok((trace.y_tilde, trace.s))
            }
        }
    }
}

/// `count` samples, one per independent draw, cycling through the users.
///
/// Taking every user of a draw would give correlated samples (they share the
/// channel), which two-sample tests do not tolerate.
pub fn per_user_samples(
    model: SampleModel,
    cfg: &SystemConfig,
    f: &SpectralShaper,
    count: usize,
    seed: u64,
) -> Result<Vec<ReceivedSample>> {
    cfg.validate()?;
    let k = cfg.n_users;
    (0..count as u64)
        .into_par_iter()
        .map(|j| {
            let stream = RngStream::new(seed, j).substream(model.tag());
            let (y, s) = model.draw(cfg, f, stream)?;
            let user = (j % k as u64) as usize;
            Ok(ReceivedSample { received: y[user], symbol: s.as_vector()[user] })
        })
        .collect()
}

/// Symbol error rate of pooled samples under the quadrant decision.
pub fn pooled_ser(samples: &[ReceivedSample]) -> Result<SerEstimate> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let received = CVector::from_iterator(samples.len(), samples.iter().map(|x| x.received));
    let decoded = nearest_neighbor_decode(&received);
    let errors = decoded
        .as_vector()
        .iter()
        .zip(samples)
        .filter(|(a, b)| **a != b.symbol)
        .count() as u64;
    SerEstimate::from_counts(&[errors], samples.len() as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubTest {
    pub name: &'static str,
    pub statistic: f64,
    pub p_value: f64,
}

/// Outcome of a Bonferroni-corrected family of two-sample tests.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub level: f64,
    pub samples_a: usize,
    pub samples_b: usize,
    pub tests: Vec<SubTest>,
    pub passed: bool,
}

impl MatchReport {
    fn new(level: f64, samples_a: usize, samples_b: usize, tests: Vec<SubTest>) -> Self {
        let threshold = level / tests.len() as f64;
        let passed = tests.iter().all(|t| t.p_value >= threshold);
        Self { level, samples_a, samples_b, tests, passed }
    }

    pub fn min_p_value(&self) -> f64 {
        self.tests.iter().map(|t| t.p_value).fold(1.0, f64::min)
    }
}

fn sub(name: &'static str, outcome: TestOutcome) -> SubTest {
    SubTest { name, statistic: outcome.statistic, p_value: outcome.p_value }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(domain(format!("test level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

/// Compares two sets of received samples after undoing the symbol phase:
/// KS on the real and imaginary parts, plus mean and variance of the real part.
pub fn distribution_match_test(
    samples_a: &[ReceivedSample],
    samples_b: &[ReceivedSample],
    level: f64,
) -> Result<MatchReport> {
    check_level(level)?;
    let got = samples_a.len().min(samples_b.len());
    if got < MIN_MATCH_SAMPLES {
        return Err(Error::InsufficientSamples { needed: MIN_MATCH_SAMPLES, got });
    }
    let derotate = |set: &[ReceivedSample]| -> (Vec<f64>, Vec<f64>) {
        set.iter()
            .map(|x| {
                let z = x.received * (x.symbol / x.symbol.norm()).conj();
                (z.re, z.im)
            })
            .unzip()
    };
    let (re_a, im_a) = derotate(samples_a);
    let (re_b, im_b) = derotate(samples_b);
    let tests = vec![
        sub("ks_real", stats::ks_two_sample(&re_a, &re_b)?),
        sub("ks_imag", stats::ks_two_sample(&im_a, &im_b)?),
        sub("mean_real", stats::mean_test(&re_a, &re_b)),
        sub("variance_real", stats::variance_test(&re_a, &re_b)),
    ];
    Ok(MatchReport::new(level, samples_a.len(), samples_b.len(), tests))
}

/// One size of a [`convergence_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n_users: usize,
    pub n_antennas: usize,
    pub draws: usize,
    pub t_s_limit: f64,
    pub t_g_limit: f64,
    pub median_t_s_error: f64,
    pub max_t_s_error: f64,
    pub median_t_g_error: f64,
    pub max_t_g_error: f64,
}

/// Relative distance of the sampled `T_s` (complex modulus) and `T_g` from
/// their large-system limits, for a sequence of growing systems at one ratio.
pub fn convergence_report(
    configs: &[SystemConfig],
    f: &SpectralShaper,
    draws: usize,
    source: SpectrumSource,
) -> Result<Vec<ConvergenceRow>> {
    let first = configs.first().ok_or_else(|| domain("convergence report needs at least one size"))?;
    if draws == 0 {
        return Err(domain("convergence report needs at least one draw per size"));
    }
    for pair in configs.windows(2) {
        if pair[1].n_users <= pair[0].n_users {
            return Err(domain("system sizes must be strictly increasing"));
        }
    }
    for cfg in configs {
        cfg.validate()?;
        if ((cfg.gamma() - first.gamma()) / first.gamma()).abs() > 1e-9 {
            return Err(domain(format!(
                "antenna-to-user ratio must be fixed, got {} and {}",
                first.gamma(),
                cfg.gamma()
            )));
        }
    }
    configs
        .iter()
        .map(|cfg| {
            let limits = asymptotic_constants(f, cfg.gamma(), cfg.noise_variance)?;
            let errors: Vec<(f64, f64)> = (0..draws as u64)
                .into_par_iter()
                .map(|j| {
                    let stream = RngStream::new(cfg.seed, j).substream(cfg.n_users as u64);
                    let draw = equivalent_model_draw(cfg, f, source, stream)?;
                    Ok((
                        (draw.t_s - limits.t_s).norm() / limits.t_s,
                        (draw.t_g - limits.t_g).abs() / limits.t_g,
                    ))
                })
                .collect::<Result<_>>()?;
            let (ts, tg): (Vec<f64>, Vec<f64>) = errors.into_iter().unzip();
            Ok(ConvergenceRow {
                n_users: cfg.n_users,
                n_antennas: cfg.n_antennas,
                draws,
                t_s_limit: limits.t_s,
                t_g_limit: limits.t_g,
                median_t_s_error: stats::median(&ts),
                max_t_s_error: ts.iter().copied().fold(0.0, f64::max),
                median_t_g_error: stats::median(&tg),
                max_t_g_error: tg.iter().copied().fold(0.0, f64::max),
            })
        })
        .collect()
}

/// Results of the Haar sampler checks.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarReport {
    pub dimension: usize,
    pub draws: usize,
    /// Largest `‖QᴴQ − I‖_max` seen.
    pub unitarity_error: f64,
    /// Sample mean of `|Q₁₁|²`; its expectation is `1/m`.
    pub mean_corner_power: f64,
    /// Standard error of that mean under the Haar law.
    pub corner_power_se: f64,
    /// Two-sample test of the first columns of `Q` and `Q₀·Q` for a fixed unitary `Q₀`.
    pub invariance: MatchReport,
}

impl HaarReport {
    pub fn corner_power_z(&self) -> f64 {
        (self.mean_corner_power - 1.0 / self.dimension as f64) / self.corner_power_se
    }
}

pub fn haar_check(m: usize, draws: usize, level: f64, seed: u64) -> Result<HaarReport> {
    check_level(level)?;
    if m < 2 {
        return Err(domain("the Haar invariance check needs dimension at least 2"));
    }
    if draws < MIN_MATCH_SAMPLES {
        return Err(Error::InsufficientSamples { needed: MIN_MATCH_SAMPLES, got: draws });
    }
    let fixed = haar_sample(m, RngStream::new(seed, u64::MAX).substream(0))?;
    let identity = CMatrix::identity(m, m);
    let columns: Vec<(f64, CVector, CVector)> = (0..draws as u64)
        .into_par_iter()
        .map(|j| {
            let base = RngStream::new(seed, j);
            let plain = haar_sample(m, base.substream(0))?;
            let other = haar_sample(m, base.substream(1))?;
            let error = max_abs_diff(&(plain.adjoint() * &plain), &identity)
                .max(max_abs_diff(&(other.adjoint() * &other), &identity));
            Ok((error, plain.column(0).into_owned(), &fixed * other.column(0)))
        })
        .collect::<Result<_>>()?;

    let unitarity_error = columns.iter().map(|c| c.0).fold(0.0, f64::max);
    let powers: Vec<f64> = columns.iter().map(|c| c.1[0].norm_sqr()).collect();
    let mf = m as f64;
    let corner_power_se = ((mf - 1.0) / (mf * mf * (mf + 1.0)) / draws as f64).sqrt();

    let parts: [(&'static str, fn(&CVector) -> f64); 4] = [
        ("ks_first_real", |x| x[0].re),
        ("ks_first_imag", |x| x[0].im),
        ("ks_second_real", |x| x[1].re),
        ("ks_first_power", |x| x[0].norm_sqr()),
    ];
    let tests = parts
        .iter()
        .map(|&(name, part)| {
            let plain: Vec<f64> = columns.iter().map(|c| part(&c.1)).collect();
            let rotated: Vec<f64> = columns.iter().map(|c| part(&c.2)).collect();
            Ok(sub(name, stats::ks_two_sample(&plain, &rotated)?))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(HaarReport {
        dimension: m,
        draws,
        unitarity_error,
        mean_corner_power: stats::mean(&powers),
        corner_power_se,
        invariance: MatchReport::new(level, draws, draws, tests),
    })
}

/// Helper for tests and reports: `C₁·‖s̃₁‖·‖z₁‖/N`, which tends to `√(2/π)`.
pub fn normalized_c1(draw: &EquivalentDraw) -> C64 {
    draw.c_1 * (draw.s_tilde_1.norm() * draw.z1.norm() / draw.z1.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::asymptotic_constants;
    use crate::numerics::reflector;
    use std::f64::consts::FRAC_2_PI;

    fn cfg(k: usize, gamma: f64, sigma2: f64, seed: u64) -> SystemConfig {
        SystemConfig::with_gamma(k, gamma, sigma2, seed).unwrap()
    }

    #[test]
    fn haar_sample_is_unitary() {
        for m in [1, 2, 16, 64] {
            let q = haar_sample(m, RngStream::new(5, m as u64)).unwrap();
            let err = max_abs_diff(&(q.adjoint() * &q), &CMatrix::identity(m, m));
            assert!(err < 1e-10, "m = {m}: {err}");
        }
        let scalar = haar_sample(1, RngStream::new(1, 1)).unwrap();
        assert!((scalar[(0, 0)].norm() - 1.0).abs() < 1e-15);
        assert!(haar_sample(0, RngStream::new(1, 1)).is_err());
        assert_eq!(
            haar_sample(6, RngStream::new(3, 3)).unwrap(),
            haar_sample(6, RngStream::new(3, 3)).unwrap()
        );
    }

    #[test]
    fn haar_reference_reflector_is_diagonal() {
        let mut e1 = CVector::zeros(4);
        e1[0] = C64::new(1.0, 0.0);
        let r = reflector(&e1).unwrap();
        let mut expected = -CMatrix::identity(4, 4);
        expected[(0, 0)] = C64::new(1.0, 0.0);
        assert!(max_abs_diff(&r, &expected) < 1e-15);
    }

    #[test]
    fn haar_corner_power_and_invariance() {
        let report = haar_check(8, 10_000, 0.01, 17).unwrap();
        assert!(report.unitarity_error < 1e-10);
        assert!(report.corner_power_z().abs() < 3.0, "{}", report.corner_power_z());
        assert!(report.invariance.passed, "{:?}", report.invariance);
        assert!(haar_check(1, 10_000, 0.01, 1).is_err());
        assert!(haar_check(4, 10, 0.01, 1).is_err());
    }

    #[test]
    fn laguerre_spectrum_matches_trace_moments() {
        // E Σλ = K and E Σλ² = K(1 + K/N) for a complex Wishart matrix scaled by 1/N.
        let c = cfg(10, 3.0, 0.0, 2);
        for source in [SpectrumSource::SampledChannel, SpectrumSource::BidiagonalLaguerre] {
            let draws = 4000;
            let (mut first, mut second) = (0.0, 0.0);
            for j in 0..draws {
                let d = sample_singular_values(&c, source, RngStream::new(9, j)).unwrap();
                assert!(d.windows(2).all(|w| w[0] >= w[1]));
                first += d.iter().map(|x| x * x).sum::<f64>();
                second += d.iter().map(|x| x.powi(4)).sum::<f64>();
            }
            let (first, second) = (first / draws as f64, second / draws as f64);
            assert!((first - 10.0).abs() < 0.05, "{source:?}: {first}");
            let expected = 10.0 * (1.0 + 10.0 / 30.0);
            assert!((second - expected).abs() / expected < 0.02, "{source:?}: {second}");
        }
    }

    #[test]
    fn hd_trace_invariants() {
        let c = cfg(16, 4.0, 0.1, 3);
        for j in 0..20 {
            let trace = hd_iterative_draw(&c, &SpectralShaper::Zf, SpectrumSource::default(), RngStream::new(3, j)).unwrap();
            assert!(trace.isometry_defect < 1e-10);
            assert!((trace.s2.norm_squared() - 64.0).abs() < 1e-10);
            assert!(trace.s2.iter().all(|x| (x.norm() - 1.0).abs() < 1e-12));
            assert!(trace.s3.norm() <= trace.d[0] * 8.0 + 1e-10);
            assert_eq!(trace.y_tilde.len(), 16);
            assert_eq!(trace.v1.len(), 64);
            assert_eq!(trace.v2.len(), 16);
        }
    }

    #[test]
    fn equivalent_draw_structure() {
        let c = cfg(12, 3.0, 0.2, 4);
        let f = SpectralShaper::rzf(0.3).unwrap();
        let draw = equivalent_model_draw(&c, &f, SpectrumSource::default(), RngStream::new(4, 0)).unwrap();
        assert!(draw.t_g >= 0.0 && draw.c_2 >= 0.0);
        let rebuilt = draw.s.as_vector() * draw.t_s + &draw.g2 * C64::new(draw.t_g, 0.0) + &draw.noise;
        assert!((rebuilt - &draw.y_hat).norm() < 1e-12);
        let scale = draw.s.as_vector().norm() / draw.g1.norm();
        for (i, &d) in draw.d.iter().enumerate() {
            assert!((draw.s_tilde_1[i] - draw.g1[i] * (scale * f.eval(d).unwrap())).norm() < 1e-12);
        }
        assert!(draw.s_tilde_1.rows(12, 24).iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn c1_normalization_tends_to_sqrt_two_over_pi() {
        let c = cfg(2000, 4.0, 0.0, 6);
        let draw =
            equivalent_model_draw(&c, &SpectralShaper::Zf, SpectrumSource::BidiagonalLaguerre, RngStream::new(6, 0))
                .unwrap();
        let value = normalized_c1(&draw);
        assert!((value.re - FRAC_2_PI.sqrt()).abs() / FRAC_2_PI.sqrt() < 0.02, "{value}");
    }

    #[test]
    fn large_system_constants_and_quadratic_forms() {
        let c = cfg(2000, 4.0, 0.0, 7);
        let f = SpectralShaper::Zf;
        let limits = asymptotic_constants(&f, 4.0, 0.0).unwrap();
        let mp = MarchenkoPastur::new(4.0).unwrap();
        let expected_diag = mp.expect(|x| x.sqrt() / x, 512).unwrap();
        let cross_sd = (mp.expect(|x| 1.0 / x, 512).unwrap() / 2000.0).sqrt();
        let mut ts = Vec::new();
        let mut tg = Vec::new();
        let mut diagonal = Vec::new();
        for j in 0..20 {
            let draw = equivalent_model_draw(&c, &f, SpectrumSource::BidiagonalLaguerre, RngStream::new(7, j)).unwrap();
            ts.push(draw.t_s.re);
            tg.push(draw.t_g);
            let forms = quadratic_forms(&draw, &f).unwrap();
            diagonal.push(forms.diagonal);
            assert!(forms.cross.norm() < 3.0 * cross_sd);
        }
        assert!((stats::median(&diagonal) - expected_diag).abs() / expected_diag < 0.02);
        assert!((stats::median(&ts) - limits.t_s).abs() / limits.t_s < 0.02);
        assert!((stats::median(&tg) - limits.t_g).abs() / limits.t_g < 0.02);
    }

    #[test]
    fn mf_noise_gain_is_near_one_at_ratio_six() {
        let limits = asymptotic_constants(&SpectralShaper::Mf, 6.0, 0.0).unwrap();
        assert!((limits.t_g - 1.0).abs() < 1e-12);
        let c = cfg(400, 6.0, 0.0, 8);
        let tg: Vec<f64> = (0..10)
            .map(|j| equivalent_model_draw(&c, &SpectralShaper::Mf, SpectrumSource::BidiagonalLaguerre, RngStream::new(8, j)).unwrap().t_g)
            .collect();
        assert!((stats::median(&tg) - 1.0).abs() < 0.03);
    }

    #[test]
    fn match_test_basics() {
        let c = cfg(8, 4.0, 0.1, 9);
        let a = per_user_samples(SampleModel::Direct, &c, &SpectralShaper::Zf, 1000, 1).unwrap();
        let same = distribution_match_test(&a, &a, 0.01).unwrap();
        assert!(same.passed);
        assert_eq!(same.tests[0].statistic, 0.0);
        assert!(matches!(
            distribution_match_test(&a[..999], &a, 0.01),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(distribution_match_test(&a, &a, 1.5).is_err());
    }

    #[test]
    fn convergence_report_guards() {
        let f = SpectralShaper::Zf;
        assert!(convergence_report(&[], &f, 5, SpectrumSource::default()).is_err());
        let shrinking = [cfg(20, 4.0, 0.0, 1), cfg(10, 4.0, 0.0, 1)];
        assert!(convergence_report(&shrinking, &f, 5, SpectrumSource::default()).is_err());
        let mixed = [cfg(10, 4.0, 0.0, 1), cfg(20, 2.0, 0.0, 1)];
        assert!(convergence_report(&mixed, &f, 5, SpectrumSource::default()).is_err());
        let rows = convergence_report(&[cfg(10, 4.0, 0.0, 1), cfg(40, 4.0, 0.0, 1)], &f, 5, SpectrumSource::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.median_t_s_error <= r.max_t_s_error));
    }
}
