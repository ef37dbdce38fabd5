//! The subcommands. Each builds its rows first and writes once at the end.

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use onebit_core::asymptotics::{
    asymptotic_constants, optimal_shaper, snr_opt_closed, snr_opt_unscaled_rho, snr_zf_closed,
};
use onebit_core::channel::SystemConfig;
use onebit_core::equivalence::{
    convergence_report, distribution_match_test, haar_check, per_user_samples, pooled_ser, MatchReport,
    SampleModel, SpectrumSource,
};
use onebit_core::montecarlo::{estimate_ser_batch, ChannelMode, SerEstimate};
use onebit_core::precoding::{optimal_rho, SpectralShaper};
use onebit_core::stats::count_ascents;

use crate::args::{
    sigma2_from_snr_db, snr_db_from_sigma2, Command, Format, PrecoderChoice, Settings, Source, Variable,
};
use crate::format::{emit, json_document, json_float, Cell, Table};

pub const SIMULATION_HEADER: &[&str] = &[
    "gamma", "K", "N", "sigma2", "snr_db", "precoder", "ser_sim", "ci_low", "ci_high", "ser_asym", "trials", "seed",
];
const ASYMPTOTIC_HEADER: &[&str] =
    &["precoder", "gamma", "sigma2", "snr_db", "rho", "t_s", "t_g", "snr", "snr_eff_db", "sep"];
const OPTIMAL_HEADER: &[&str] = &[
    "gamma",
    "sigma2",
    "rho_star",
    "rho_hat",
    "snr_opt_closed",
    "snr_opt_quadrature",
    "difference",
    "snr_zf",
    "opt_over_zf",
    "snr_opt_unscaled_rho",
];

const SNR_NOTE: &str = "snr_db is the transmit SNR 10*log10(1/sigma2)";
const UNSCALED_NOTE: &str = "snr_opt_unscaled_rho evaluates the closed form with rho_star where rho_hat = gamma*rho_star \
belongs; it does not match the quadrature optimum and is shown for comparison only";
const DEFAULT_USERS: usize = 100;
const DEFAULT_TRIALS: u64 = 1000;

/// Whether a command's checks held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    CheckFailed,
}

pub fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Asymptotic(s) => asymptotic(s.resolve()?),
        Command::Simulate(s) => grid_command(s.resolve()?, true),
        Command::Sweep(s) => grid_command(s.resolve()?, false),
        Command::Optimal(s) => optimal(s.resolve()?),
        Command::Equivalence(s) => equivalence(s.resolve()?),
        Command::HaarTest(s) => haar(s.resolve()?),
    }
}

fn label(choice: PrecoderChoice) -> &'static str {
    match choice {
        PrecoderChoice::Mf => "mf",
        PrecoderChoice::Zf => "zf",
        PrecoderChoice::Rzf => "rzf",
        PrecoderChoice::Opt => "opt",
    }
}

fn shaper(choice: PrecoderChoice, gamma: f64, sigma2: f64, rho: Option<f64>) -> Result<SpectralShaper> {
    Ok(match choice {
        PrecoderChoice::Mf => SpectralShaper::Mf,
        PrecoderChoice::Zf => SpectralShaper::Zf,
        PrecoderChoice::Rzf => SpectralShaper::rzf(rho.context("--precoder rzf needs --rho")?)?,
        PrecoderChoice::Opt => optimal_shaper(gamma, sigma2)?,
    })
}

fn precoders(s: &Settings) -> Vec<PrecoderChoice> {
    s.precoder.clone().unwrap_or_else(|| vec![PrecoderChoice::Zf])
}

fn write_table(s: &Settings, table: &Table, metadata: Value) -> Result<()> {
    let text = match s.format() {
        Format::Csv => table.to_csv()?,
        Format::Json => json_document(metadata, "rows", table.json_rows())?,
    };
    emit(&text, s.output.as_deref())
}

fn json_only(s: &Settings, command: &str) -> Result<()> {
    if s.format == Some(Format::Csv) {
        bail!("{command} writes a JSON report; --format csv is not available");
    }
    Ok(())
}

fn asymptotic(s: Settings) -> Result<Outcome> {
    let gamma = s.gamma_required()?;
    let sigma2 = s.noise_variance(0.0)?;
    let mut table = Table::new(ASYMPTOTIC_HEADER);
    for choice in precoders(&s) {
        let f = shaper(choice, gamma, sigma2, s.rho)?;
        let c = asymptotic_constants(&f, gamma, sigma2)?;
        let rho = match f {
            SpectralShaper::Rzf { rho } => Cell::Float(rho),
            _ => Cell::Empty,
        };
        table.push(vec![
            Cell::Text(label(choice).into()),
            Cell::Float(gamma),
            Cell::Float(sigma2),
            Cell::Float(snr_db_from_sigma2(sigma2)),
            rho,
            Cell::Float(c.t_s),
            Cell::Float(c.t_g),
            Cell::Float(c.snr),
            Cell::Float(10.0 * c.snr.log10()),
            Cell::Float(c.sep),
        ]);
    }
    if s.format() == Format::Csv {
        eprintln!("note: {SNR_NOTE}");
    }
    write_table(&s, &table, json!({ "command": "asymptotic", "snr_convention": SNR_NOTE }))?;
    Ok(Outcome::Passed)
}

/// One grid point: `(γ, σ², transmit SNR in dB)`.
fn grid_points(s: &Settings) -> Result<Vec<(f64, f64, f64)>> {
    match (s.variable, &s.grid) {
        (None, None) => {
            let sigma2 = s.noise_variance(0.0)?;
            Ok(vec![(s.gamma_required()?, sigma2, snr_db_from_sigma2(sigma2))])
        }
        (Some(_), None) => bail!("--variable needs --grid"),
        (None, Some(_)) => bail!("--grid needs --variable"),
        (Some(variable), Some(grid)) => {
            if grid.is_empty() {
                bail!("--grid must not be empty");
            }
            if grid.iter().any(|x| !x.is_finite()) {
                bail!("--grid values must be finite");
            }
            if grid.windows(2).any(|w| w[1] <= w[0]) {
                bail!("--grid must be strictly increasing");
            }
            match variable {
                Variable::Gamma => {
                    let sigma2 = s.noise_variance(0.0)?;
                    Ok(grid.iter().map(|&g| (g, sigma2, snr_db_from_sigma2(sigma2))).collect())
                }
                Variable::SnrDb => {
                    if s.sigma2.is_some() || s.snr_db.is_some() {
                        bail!("--variable snr_db sets the noise level; drop --sigma2/--snr-db");
                    }
                    let gamma = s.gamma_required()?;
                    Ok(grid.iter().map(|&db| (gamma, sigma2_from_snr_db(db), db)).collect())
                }
            }
        }
    }
}

fn grid_command(s: Settings, simulate: bool) -> Result<Outcome> {
    let users = s.users.unwrap_or(DEFAULT_USERS);
    let seed = s.seed();
    let trials = s.trials.unwrap_or(DEFAULT_TRIALS);
    let choices = precoders(&s);
    let mut table = Table::new(SIMULATION_HEADER);
    for (gamma, sigma2, snr_db) in grid_points(&s)? {
        let cfg = SystemConfig::with_gamma(users, gamma, sigma2, seed)?;
        let shapers = choices
            .iter()
            .map(|&c| shaper(c, cfg.gamma(), sigma2, s.rho))
            .collect::<Result<Vec<_>>>()?;
        let estimates: Vec<Option<SerEstimate>> = if simulate {
            estimate_ser_batch(&cfg, &shapers, trials, ChannelMode::PerTrial)?
                .into_iter()
                .map(Some)
                .collect()
        } else {
            vec![None; shapers.len()]
        };
        for ((choice, f), estimate) in choices.iter().zip(&shapers).zip(estimates) {
            let asym = asymptotic_constants(f, cfg.gamma(), sigma2)?;
            let (ser, low, high, trial_cell) = match estimate {
                Some(e) => (Cell::Float(e.ser), Cell::Float(e.ci_low), Cell::Float(e.ci_high), Cell::Int(trials)),
                None => (Cell::Empty, Cell::Empty, Cell::Empty, Cell::Empty),
            };
            table.push(vec![
                Cell::Float(cfg.gamma()),
                Cell::Int(cfg.n_users as u64),
                Cell::Int(cfg.n_antennas as u64),
                Cell::Float(sigma2),
                Cell::Float(snr_db),
                Cell::Text(label(*choice).into()),
                ser,
                low,
                high,
                Cell::Float(asym.sep),
                trial_cell,
                Cell::Int(seed),
            ]);
        }
    }
    if s.format() == Format::Csv {
        eprintln!("note: {SNR_NOTE}");
    }
    let metadata = json!({
        "command": if simulate { "simulate" } else { "sweep" },
        "snr_convention": SNR_NOTE,
        "channel_mode": "per_trial",
        "confidence_interval": "wilson_95",
        "seed": seed,
    });
    write_table(&s, &table, metadata)?;
    Ok(Outcome::Passed)
}

fn optimal(s: Settings) -> Result<Outcome> {
    let gamma = s.gamma_required()?;
    let sigma2 = s.noise_variance(0.0)?;
    let rho = optimal_rho(gamma, sigma2)?;
    let closed = snr_opt_closed(gamma, sigma2)?;
    let quadrature = asymptotic_constants(&optimal_shaper(gamma, sigma2)?, gamma, sigma2)?.snr;
    let zf = snr_zf_closed(gamma, sigma2)?;
    let mut table = Table::new(OPTIMAL_HEADER);
    table.push(vec![
        Cell::Float(gamma),
        Cell::Float(sigma2),
        Cell::Float(rho),
        Cell::Float(gamma * rho),
        Cell::Float(closed),
        Cell::Float(quadrature),
        Cell::Float((closed - quadrature).abs()),
        Cell::Float(zf),
        Cell::Float(closed / zf),
        Cell::Float(snr_opt_unscaled_rho(gamma, sigma2)?),
    ]);
    if s.format() == Format::Csv {
        eprintln!("note: {UNSCALED_NOTE}");
    }
    write_table(&s, &table, json!({ "command": "optimal", "note": UNSCALED_NOTE }))?;
    Ok(Outcome::Passed)
}

fn spectrum(source: Source) -> SpectrumSource {
    match source {
        Source::Sampled => SpectrumSource::SampledChannel,
        Source::Laguerre => SpectrumSource::BidiagonalLaguerre,
        Source::Mp => SpectrumSource::MarchenkoPasturIid,
    }
}

fn match_json(report: &MatchReport) -> Value {
    json!({
        "passed": report.passed,
        "level": report.level,
        "samples_a": report.samples_a,
        "samples_b": report.samples_b,
        "tests": report.tests.iter().map(|t| json!({
            "name": t.name,
            "statistic": json_float(t.statistic),
            "p_value": json_float(t.p_value),
        })).collect::<Vec<_>>(),
    })
}

fn ser_json(e: &SerEstimate) -> Value {
    json!({
        "ser": json_float(e.ser),
        "ci_low": json_float(e.ci_low),
        "ci_high": json_float(e.ci_high),
        "errors": e.symbol_errors,
        "symbols": e.symbols_tested,
    })
}

fn equivalence(s: Settings) -> Result<Outcome> {
    json_only(&s, "equivalence")?;
    let users = s.users.unwrap_or(32);
    let gamma = s.gamma.unwrap_or(4.0);
    let sigma2 = s.noise_variance(0.1)?;
    let samples = s.samples.unwrap_or(10_000);
    let level = s.level.unwrap_or(0.01);
    let seed = s.seed();
    let source = spectrum(s.source.unwrap_or(Source::Sampled));
    let cfg = SystemConfig::with_gamma(users, gamma, sigma2, seed)?;

    let mut passed = true;
    let mut matches = Vec::new();
    for choice in precoders(&s) {
        let f = shaper(choice, cfg.gamma(), sigma2, s.rho)?;
        let direct = per_user_samples(SampleModel::Direct, &cfg, &f, samples, seed)?;
        let direct_ser = pooled_ser(&direct)?;
        for (name, model) in [
            ("equivalent", SampleModel::Equivalent(source)),
            ("householder_dice", SampleModel::HouseholderDice(source)),
        ] {
            let other = per_user_samples(model, &cfg, &f, samples, seed)?;
            let report = distribution_match_test(&direct, &other, level)?;
            let other_ser = pooled_ser(&other)?;
            let overlap = direct_ser.overlaps(&other_ser);
            passed &= report.passed && overlap;
            matches.push(json!({
                "precoder": label(choice),
                "comparison": format!("direct_vs_{name}"),
                "distribution": match_json(&report),
                "ser_direct": ser_json(&direct_ser),
                "ser_model": ser_json(&other_ser),
                "ser_intervals_overlap": overlap,
            }));
        }
    }

    let convergence = match &s.sizes {
        None => Value::Null,
        Some(sizes) => {
            let draws = s.draws.unwrap_or(20);
            let source = spectrum(s.source.unwrap_or(Source::Laguerre));
            let configs = sizes
                .iter()
                .map(|&k| SystemConfig::with_gamma(k, gamma, sigma2, seed))
                .collect::<onebit_core::Result<Vec<_>>>()?;
            let mut tables = Vec::new();
            for choice in precoders(&s) {
                let f = shaper(choice, gamma, sigma2, s.rho)?;
                let rows = convergence_report(&configs, &f, draws, source)?;
                let ts: Vec<f64> = rows.iter().map(|r| r.median_t_s_error).collect();
                let tg: Vec<f64> = rows.iter().map(|r| r.median_t_g_error).collect();
                let (ascents_ts, ascents_tg) = (count_ascents(&ts), count_ascents(&tg));
                passed &= ascents_ts <= 1 && ascents_tg <= 1;
                tables.push(json!({
                    "precoder": label(choice),
                    "t_s_ascents": ascents_ts,
                    "t_g_ascents": ascents_tg,
                    "rows": rows.iter().map(|r| json!({
                        "K": r.n_users,
                        "N": r.n_antennas,
                        "draws": r.draws,
                        "t_s_limit": json_float(r.t_s_limit),
                        "t_g_limit": json_float(r.t_g_limit),
                        "median_t_s_error": json_float(r.median_t_s_error),
                        "max_t_s_error": json_float(r.max_t_s_error),
                        "median_t_g_error": json_float(r.median_t_g_error),
                        "max_t_g_error": json_float(r.max_t_g_error),
                    })).collect::<Vec<_>>(),
                }));
            }
            Value::Array(tables)
        }
    };

    let metadata = json!({
        "command": "equivalence",
        "K": cfg.n_users,
        "N": cfg.n_antennas,
        "gamma": json_float(cfg.gamma()),
        "sigma2": json_float(sigma2),
        "samples": samples,
        "level": level,
        "seed": seed,
        "passed": passed,
    });
    let body = json!({ "matches": matches, "convergence": convergence });
    emit(&json_document(metadata, "report", body)?, s.output.as_deref())?;
    Ok(verdict(&s, passed))
}

fn haar(s: Settings) -> Result<Outcome> {
    json_only(&s, "haar-test")?;
    let m = s.dim.unwrap_or(4);
    let draws = s.draws.unwrap_or(10_000);
    let level = s.level.unwrap_or(0.01);
    let seed = s.seed();
    let report = haar_check(m, draws, level, seed)?;
    let z = report.corner_power_z();
    let passed = report.unitarity_error <= 1e-10 && z.abs() <= 3.0 && report.invariance.passed;
    let metadata = json!({ "command": "haar-test", "dim": m, "draws": draws, "seed": seed, "passed": passed });
    let body = json!({
        "unitarity_error": json_float(report.unitarity_error),
        "mean_corner_power": json_float(report.mean_corner_power),
        "expected_corner_power": json_float(1.0 / m as f64),
        "corner_power_z": json_float(z),
        "invariance": match_json(&report.invariance),
    });
    emit(&json_document(metadata, "report", body)?, s.output.as_deref())?;
    Ok(verdict(&s, passed))
}

fn verdict(s: &Settings, passed: bool) -> Outcome {
    if s.check && !passed {
        Outcome::CheckFailed
    } else {
        Outcome::Passed
    }
}
