//! Command-line definitions and the JSON config file that mirrors them.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "onebit", version, about = "One-bit precoding: asymptotic SEP, Monte Carlo SER and equivalence checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Large-system constants, SNR and SEP of a precoder
    Asymptotic(Settings),
    /// Monte Carlo SER next to the asymptotic prediction
    Simulate(Settings),
    /// Asymptotic SEP curve over a grid, without simulation
    Sweep(Settings),
    /// The SNR-optimal precoder and its closed form
    Optimal(Settings),
    /// Distribution checks of the equivalent scalar model
    Equivalence(Settings),
    /// Unitarity, moment and invariance checks of the Haar sampler
    HaarTest(Settings),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecoderChoice {
    Mf,
    Zf,
    Rzf,
    Opt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Gamma,
    #[value(name = "snr_db")]
    SnrDb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Singular values of a sampled channel
    Sampled,
    /// Bidiagonal Laguerre model (same law, cheap at large K)
    Laguerre,
    /// i.i.d. Marchenko–Pastur eigenvalues
    Mp,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

fn one_or_many<'de, D, T>(de: D) -> std::result::Result<Option<Vec<T>>, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Deserialize<'de>,
{
    Ok(Option::<OneOrMany<T>>::deserialize(de)?.map(|v| match v {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(xs) => xs,
    }))
}

/// Every option a command can take. The config file uses the same keys
/// (snake_case); values given on the command line win.
#[derive(Debug, Clone, Default, clap::Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Antenna-to-user ratio N/K
    #[arg(short = 'g', long)]
    pub gamma: Option<f64>,
    /// Number of users K
    #[arg(short = 'K', long)]
    pub users: Option<usize>,
    /// Noise variance per user
    #[arg(long, conflicts_with = "snr_db")]
    pub sigma2: Option<f64>,
    /// Transmit SNR 1/σ² in dB
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    /// Precoders, comma separated
    #[arg(long, value_enum, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    pub precoder: Option<Vec<PrecoderChoice>>,
    /// Regularization for `rzf`
    #[arg(long)]
    pub rho: Option<f64>,
    /// Monte Carlo trials per grid point
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write to this file instead of stdout
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Swept quantity for simulate and sweep
    #[arg(long, value_enum)]
    pub variable: Option<Variable>,
    /// Strictly increasing grid values, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid: Option<Vec<f64>>,
    /// Increasing user counts for the convergence table
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Samples per side in the distribution match test
    #[arg(long)]
    pub samples: Option<usize>,
    /// Draws per size in the convergence table, or Haar draws
    #[arg(long)]
    pub draws: Option<usize>,
    /// Test level before the Bonferroni correction
    #[arg(long)]
    pub level: Option<f64>,
    /// Matrix dimension for haar-test
    #[arg(long)]
    pub dim: Option<usize>,
    /// Singular-value source for the equivalent model
    #[arg(long, value_enum)]
    pub source: Option<Source>,
    /// Exit with status 2 when a check fails
    #[arg(long)]
    pub check: bool,
    /// JSON file with default values for any of these options
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Settings {
    /// Fills unset options from `--config`, if given.
    pub fn resolve(self) -> Result<Self> {
        match self.config.clone() {
            Some(path) => Ok(self.over(load_config(&path)?)),
            None => Ok(self),
        }
    }

    fn over(self, file: Settings) -> Self {
        let noise_from_flags = self.sigma2.is_some() || self.snr_db.is_some();
        Settings {
            gamma: self.gamma.or(file.gamma),
            users: self.users.or(file.users),
            sigma2: if noise_from_flags { self.sigma2 } else { file.sigma2 },
            snr_db: if noise_from_flags { self.snr_db } else { file.snr_db },
            precoder: self.precoder.or(file.precoder),
            rho: self.rho.or(file.rho),
            trials: self.trials.or(file.trials),
            seed: self.seed.or(file.seed),
            output: self.output.or(file.output),
            format: self.format.or(file.format),
            variable: self.variable.or(file.variable),
            grid: self.grid.or(file.grid),
            sizes: self.sizes.or(file.sizes),
            samples: self.samples.or(file.samples),
            draws: self.draws.or(file.draws),
            level: self.level.or(file.level),
            dim: self.dim.or(file.dim),
            source: self.source.or(file.source),
            check: self.check || file.check,
            config: self.config,
        }
    }

    /// σ² from `--sigma2` or `--snr-db`, or `default` when neither is set.
    pub fn noise_variance(&self, default: f64) -> Result<f64> {
        match (self.sigma2, self.snr_db) {
            (Some(_), Some(_)) => bail!("give either sigma2 or snr_db, not both"),
            (Some(s), None) => Ok(s),
            (None, Some(db)) => Ok(sigma2_from_snr_db(db)),
            (None, None) => Ok(default),
        }
    }

    pub fn gamma_required(&self) -> Result<f64> {
        self.gamma.context("--gamma is required")
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or_default()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }
}

fn load_config(path: &Path) -> Result<Settings> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let settings: Settings =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if settings.sigma2.is_some() && settings.snr_db.is_some() {
        bail!("config {} sets both sigma2 and snr_db", path.display());
    }
    Ok(settings)
}

/// Transmit-SNR convention: `snr_db = 10·log10(1/σ²)`.
pub fn sigma2_from_snr_db(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

pub fn snr_db_from_sigma2(sigma2: f64) -> f64 {
    -10.0 * sigma2.log10()
}
