//! Spectrally shaped linear precoders `P = V f(D)ᵀ Uᴴ`, the direct RZF form
//! `Hᴴ(HHᴴ + ρI)⁻¹`, and the SNR-optimal regularization.

use std::f64::consts::FRAC_2_PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, SymmetricEigen};

use crate::channel::{ChannelRealization, SvdFactors, SymbolVector, DEGENERACY_THRESHOLD};
use crate::error::{domain, Error, Result};
use crate::numerics::{CMatrix, CVector, C64};

type ShaperFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The function `f` applied to the channel's singular values.
#[derive(Clone)]
pub enum SpectralShaper {
    /// Matched filter, `f(x) = x`.
    Mf,
    /// Zero forcing, `f(x) = 1/x`.
    Zf,
    /// Regularized zero forcing, `f(x) = x/(x² + ρ)`.
    Rzf { rho: f64 },
    /// Any positive continuous map; assumed unbounded near zero.
    Custom { name: String, f: ShaperFn },
}

impl fmt::Debug for SpectralShaper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mf => write!(f, "Mf"),
            Self::Zf => write!(f, "Zf"),
            Self::Rzf { rho } => write!(f, "Rzf {{ rho: {rho} }}"),
            Self::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl SpectralShaper {
    pub fn rzf(rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho <= 0.0 {
            return Err(domain(format!("RZF regularization must be positive, got {rho}")));
        }
        Ok(Self::Rzf { rho })
    }

    pub fn custom<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::Custom { name: name.into(), f: Arc::new(f) }
    }

    /// `α·f` as a custom shaper.
    pub fn scaled(&self, alpha: f64) -> Self {
        let base = self.clone();
        Self::custom(format!("{alpha}*{}", self.label()), move |x| {
            alpha * base.eval(x).unwrap_or(f64::NAN)
        })
    }

    pub fn label(&self) -> String {
        match self {
            Self::Mf => "mf".into(),
            Self::Zf => "zf".into(),
            Self::Rzf { rho } => format!("rzf({rho})"),
            Self::Custom { name, .. } => name.clone(),
        }
    }

    /// Whether a near-zero singular value should be rejected.
    pub fn diverges_at_zero(&self) -> bool {
        matches!(self, Self::Zf | Self::Custom { .. })
    }

    /// `f(d)` for `d > 0`.
    pub fn eval(&self, d: f64) -> Result<f64> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(domain(format!("shaper argument must be positive and finite, got {d}")));
        }
        let value = match self {
            Self::Mf => d,
            Self::Zf => 1.0 / d,
            Self::Rzf { rho } => d / (d * d + rho),
            Self::Custom { f, .. } => f(d),
        };
        if !value.is_finite() || value <= 0.0 {
            return Err(Error::Evaluation(format!(
                "shaper {} returned {value} at {d}",
                self.label()
            )));
        }
        Ok(value)
    }
}

/// Evaluates `f(d)`.
pub fn shaper_eval(f: &SpectralShaper, d: f64) -> Result<f64> {
    f.eval(d)
}

/// An N×K precoding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    p: CMatrix,
}

impl Precoder {
    pub fn from_matrix(p: CMatrix) -> Result<Self> {
        if p.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(domain("precoder has non-finite entries"));
        }
        Ok(Self { p })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.p
    }

    pub fn n_antennas(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.p.ncols()
    }

    pub fn apply(&self, s: &SymbolVector) -> CVector {
        &self.p * s.as_vector()
    }
}

fn degenerate(index: usize, d: &[f64]) -> Error {
    let ratio = if d[0] > 0.0 { d[index] / d[0] } else { 0.0 };
    Error::DegenerateChannel { index, ratio }
}

/// `P = Σₖ f(dₖ)·vₖ·uₖᴴ` over the first K columns of `V`.
pub fn build_precoder(factors: &SvdFactors, f: &SpectralShaper) -> Result<Precoder> {
    if f.diverges_at_zero() {
        if let Some(index) = factors.degenerate_index() {
            return Err(degenerate(index, &factors.d));
        }
    }
    let k = factors.n_users();
    let mut left = factors.v.columns(0, k).into_owned();
    for (j, &dj) in factors.d.iter().enumerate() {
        // MF and RZF vanish at zero; a diverging shaper was rejected above.
        let fj = if dj > 0.0 { f.eval(dj)? } else { 0.0 };
        left.column_mut(j).scale_mut(fj);
    }
    Precoder::from_matrix(left * factors.u.adjoint())
}

fn regularized_cholesky(gram: &CMatrix, rho: f64) -> Result<Cholesky<C64, nalgebra::Dyn>> {
    let k = gram.nrows();
    let mut a = gram.clone();
    for i in 0..k {
        a[(i, i)] += C64::new(rho, 0.0);
    }
    Cholesky::new(a).ok_or_else(|| {
        // Report the smallest diagonal as the offending user.
        let index = (0..k)
            .min_by(|&i, &j| gram[(i, i)].re.partial_cmp(&gram[(j, j)].re).unwrap())
            .unwrap_or(0);
        Error::DegenerateChannel { index, ratio: 0.0 }
    })
}

/// `Hᴴ(HHᴴ + ρI)⁻¹` via a Cholesky solve.
pub fn rzf_direct(channel: &ChannelRealization, rho: f64) -> Result<Precoder> {
    if !rho.is_finite() || rho <= 0.0 {
        return Err(domain(format!("RZF regularization must be positive, got {rho}")));
    }
    let k = channel.n_users();
    let chol = regularized_cholesky(&channel.gram(), rho)?;
    let x = chol.solve(&CMatrix::identity(k, k));
    Precoder::from_matrix(channel.matrix().adjoint() * x)
}

/// `ρ* = (1 − 2/π + σ²) / ((2/π)·γ)`.
pub fn optimal_rho(gamma: f64, sigma2: f64) -> Result<f64> {
    if !gamma.is_finite() || gamma <= 1.0 {
        return Err(domain(format!("antenna-to-user ratio must exceed 1, got {gamma}")));
    }
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(domain(format!("noise variance must be non-negative, got {sigma2}")));
    }
    Ok((1.0 - FRAC_2_PI + sigma2) / (FRAC_2_PI * gamma))
}

/// Computes `P·s` for one channel without forming `P`, sharing the Gram
/// matrix and its factorizations across shapers.
///
/// Uses `V f(D)ᵀ Uᴴ = Hᴴ·U diag(f(dₖ)/dₖ) Uᴴ`, so only K×K work is needed
/// beyond the Gram product.
pub struct PrecodingContext<'a> {
    channel: &'a ChannelRealization,
    gram: OnceLock<CMatrix>,
    eigen: OnceLock<SymmetricEigen<C64, nalgebra::Dyn>>,
}

impl<'a> PrecodingContext<'a> {
    pub fn new(channel: &'a ChannelRealization) -> Self {
        Self { channel, gram: OnceLock::new(), eigen: OnceLock::new() }
    }

    pub fn channel(&self) -> &ChannelRealization {
        self.channel
    }

    fn gram(&self) -> &CMatrix {
        self.gram.get_or_init(|| self.channel.gram())
    }

    pub fn precode(&self, f: &SpectralShaper, s: &SymbolVector) -> Result<CVector> {
        let h = self.channel.matrix();
        if s.len() != h.nrows() {
            return Err(domain(format!(
                "symbol vector has length {}, channel serves {} users",
                s.len(),
                h.nrows()
            )));
        }
        let s = s.as_vector();
        let weighted = match f {
            SpectralShaper::Mf => s.clone(),
            SpectralShaper::Zf => {
                let gram = self.gram();
                let chol = regularized_cholesky(gram, 0.0)?;
                let l = chol.l_dirty();
                let top = (0..gram.nrows()).map(|i| gram[(i, i)].re).fold(0.0, f64::max);
                for i in 0..gram.nrows() {
                    let pivot = l[(i, i)].norm_sqr();
                    if pivot < DEGENERACY_THRESHOLD * DEGENERACY_THRESHOLD * top {
                        return Err(Error::DegenerateChannel { index: i, ratio: (pivot / top).sqrt() });
                    }
                }
                chol.solve(s)
            }
            SpectralShaper::Rzf { rho } => regularized_cholesky(self.gram(), *rho)?.solve(s),
            SpectralShaper::Custom { .. } => {
                let eigen = self
                    .eigen
                    .get_or_init(|| SymmetricEigen::new(self.gram().clone()));
                let top = eigen.eigenvalues.iter().copied().fold(0.0, f64::max);
                let mut coeffs = eigen.eigenvectors.adjoint() * s;
                for (i, &lambda) in eigen.eigenvalues.iter().enumerate() {
                    if !(lambda > DEGENERACY_THRESHOLD * DEGENERACY_THRESHOLD * top) {
                        return Err(Error::DegenerateChannel {
                            index: i,
                            ratio: (lambda.max(0.0) / top).sqrt(),
                        });
                    }
                    let d = lambda.sqrt();
                    coeffs[i] *= C64::new(f.eval(d)? / d, 0.0);
                }
                &eigen.eigenvectors * coeffs
            }
        };
        Ok(h.adjoint() * weighted)
    }
}
