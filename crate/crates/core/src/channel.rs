//! Downlink model: Rayleigh channel sampling, SVD, QPSK symbols, the one-bit
//! quantizer and per-user nearest-neighbor decoding.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::SVD;
use rand::Rng;

use crate::error::{domain, Result};
use crate::numerics::{complex_gaussian, CMatrix, CVector, Reflector, RngStream, C64};

/// Relative size below which a singular value counts as numerically zero.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

/// Dimensions, noise level and seed of one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemConfig {
    pub n_antennas: usize,
    pub n_users: usize,
    /// Per-user noise variance σ²; zero is the noiseless case.
    pub noise_variance: f64,
    pub seed: u64,
}

impl SystemConfig {
    pub fn new(n_antennas: usize, n_users: usize, noise_variance: f64, seed: u64) -> Result<Self> {
        let cfg = Self { n_antennas, n_users, noise_variance, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds a configuration with `N = round(γ·K)` antennas.
    pub fn with_gamma(n_users: usize, gamma: f64, noise_variance: f64, seed: u64) -> Result<Self> {
        if !gamma.is_finite() || gamma <= 1.0 {
            return Err(domain(format!("antenna-to-user ratio must exceed 1, got {gamma}")));
        }
        let n_antennas = (gamma * n_users as f64).round() as usize;
        Self::new(n_antennas, n_users, noise_variance, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(domain("at least one user is required"));
        }
        if self.n_antennas <= self.n_users {
            return Err(domain(format!(
                "need more antennas than users, got N = {} and K = {}",
                self.n_antennas, self.n_users
            )));
        }
        if !self.noise_variance.is_finite() || self.noise_variance < 0.0 {
            return Err(domain(format!(
                "noise variance must be finite and non-negative, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    /// Antenna-to-user ratio γ = N/K.
    pub fn gamma(&self) -> f64 {
        self.n_antennas as f64 / self.n_users as f64
    }
}

/// A K×N channel matrix `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    h: CMatrix,
}

impl ChannelRealization {
    pub fn from_matrix(h: CMatrix) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(domain("channel matrix must be non-empty"));
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(domain("channel matrix has non-finite entries"));
        }
        Ok(Self { h })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.h
    }

    pub fn n_users(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_antennas(&self) -> usize {
        self.h.ncols()
    }

    /// The K×K Gram matrix `H·Hᴴ` (full Hermitian).
    pub fn gram(&self) -> CMatrix {
        let k = self.n_users();
        let n = self.n_antennas();
        let data = self.h.as_slice();
        let mut g_re = vec![0.0; k * k];
        let mut g_im = vec![0.0; k * k];
        let mut col_re = vec![0.0; k];
        let mut col_im = vec![0.0; k];
        // Rank-one updates with split real/imaginary storage keep the inner
        // loop a plain axpy.
        for col in 0..n {
            for (i, z) in data[col * k..(col + 1) * k].iter().enumerate() {
                col_re[i] = z.re;
                col_im[i] = z.im;
            }
            for j in 0..k {
                let (bre, bim) = (col_re[j], col_im[j]);
                let re = &mut g_re[j * k + j..(j + 1) * k];
                let im = &mut g_im[j * k + j..(j + 1) * k];
                let are = &col_re[j..];
                let aim = &col_im[j..];
                for i in 0..re.len() {
                    re[i] += are[i] * bre + aim[i] * bim;
                    im[i] += aim[i] * bre - are[i] * bim;
                }
            }
        }
        CMatrix::from_fn(k, k, |i, j| {
            if i >= j {
                C64::new(g_re[j * k + i], g_im[j * k + i])
            } else {
                C64::new(g_re[i * k + j], -g_im[i * k + j])
            }
        })
    }
}

/// Draws `H` with i.i.d. `CN(0, 1/N)` entries.
pub fn sample_channel(cfg: &SystemConfig, stream: RngStream) -> Result<ChannelRealization> {
    cfg.validate()?;
    let variance = 1.0 / cfg.n_antennas as f64;
    let mut rng = stream.rng();
    let h = CMatrix::from_fn(cfg.n_users, cfg.n_antennas, |_, _| complex_gaussian(&mut rng, variance));
    Ok(ChannelRealization { h })
}

/// `H = U·[diag(d) 0]·Vᴴ` with `d` sorted in descending order and `V`
/// completed to a full N×N unitary.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: CMatrix,
    pub d: Vec<f64>,
    pub v: CMatrix,
}

impl SvdFactors {
    pub fn n_users(&self) -> usize {
        self.d.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.v.nrows()
    }

    /// Index of the first singular value below `1e-12·d₁`, if any.
    pub fn degenerate_index(&self) -> Option<usize> {
        let top = self.d.first().copied().unwrap_or(0.0);
        self.d
            .iter()
            .position(|&dk| !(dk >= DEGENERACY_THRESHOLD * top) || top == 0.0)
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate_index().is_some()
    }

    /// `U·[diag(d) 0]·Vᴴ`.
    pub fn reconstruct(&self) -> CMatrix {
        let k = self.n_users();
        let mut scaled = self.u.clone();
        for (j, &dj) in self.d.iter().enumerate() {
            scaled.column_mut(j).scale_mut(dj);
        }
        scaled * self.v.columns(0, k).adjoint()
    }
}

/// Singular value decomposition of `H`. Numerically rank-deficient channels
/// are returned as-is; check [`SvdFactors::degenerate_index`].
pub fn svd(channel: &ChannelRealization) -> Result<SvdFactors> {
    let k = channel.n_users();
    let n = channel.n_antennas();
    if k > n {
        return Err(domain(format!("expected a wide channel, got {k}x{n}")));
    }
    let decomposition = SVD::try_new(channel.h.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| domain("SVD did not converge"))?;
    let u = decomposition.u.ok_or_else(|| domain("SVD returned no left factor"))?;
    let v_t = decomposition.v_t.ok_or_else(|| domain("SVD returned no right factor"))?;
    let d = decomposition.singular_values.iter().copied().collect();
    let v = complete_unitary(&v_t.adjoint())?;
    Ok(SvdFactors { u, d, v })
}

/// Singular values only, descending.
pub fn singular_values(channel: &ChannelRealization) -> Result<Vec<f64>> {
    let decomposition = SVD::try_new(channel.h.clone(), false, false, f64::EPSILON, 0)
        .ok_or_else(|| domain("SVD did not converge"))?;
    Ok(decomposition.singular_values.iter().copied().collect())
}

/// Extends the orthonormal columns of `basis` (N×K) to an N×N unitary whose
/// first K columns are exactly those of `basis`, by chaining generalized
/// reflectors `R₁(a₁)·R₂(a₂)⋯R_K(a_K)`.
fn complete_unitary(basis: &CMatrix) -> Result<CMatrix> {
    let (n, k) = basis.shape();
    let mut reflectors: Vec<Reflector> = Vec::with_capacity(k);
    for j in 0..k {
        let mut a = basis.column(j).into_owned();
        for (i, r) in reflectors.iter().enumerate() {
            let tail = a.rows(i, n - i).into_owned();
            let mapped = r.apply_adjoint(&tail);
            a.rows_mut(i, n - i).copy_from(&mapped);
        }
        reflectors.push(Reflector::new(&a.rows(j, n - j).into_owned())?);
    }
    let mut q = CMatrix::identity(n, n);
    for (i, r) in reflectors.iter().enumerate().rev() {
        for c in 0..n {
            let tail = q.view((i, c), (n - i, 1)).column(0).into_owned();
            let mapped = r.apply(&tail);
            q.view_mut((i, c), (n - i, 1)).copy_from(&mapped);
        }
    }
    Ok(q)
}

/// A QPSK symbol vector with entries in `{(±1 ± j)/√2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolVector {
    s: CVector,
}

impl SymbolVector {
    /// Validates that every entry is a QPSK point.
    pub fn new(s: CVector) -> Result<Self> {
        let ok = s.iter().all(|z| {
            (z.re.abs() - FRAC_1_SQRT_2).abs() < 1e-12 && (z.im.abs() - FRAC_1_SQRT_2).abs() < 1e-12
        });
        if !ok {
            return Err(domain("symbol vector has entries outside the QPSK constellation"));
        }
        Ok(Self { s })
    }

    pub fn as_vector(&self) -> &CVector {
        &self.s
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn into_vector(self) -> CVector {
        self.s
    }
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn qpsk_point(re_bit: bool, im_bit: bool) -> C64 {
    C64::new(
        if re_bit { -FRAC_1_SQRT_2 } else { FRAC_1_SQRT_2 },
        if im_bit { -FRAC_1_SQRT_2 } else { FRAC_1_SQRT_2 },
    )
}

pub fn sample_symbols(k: usize, stream: RngStream) -> Result<SymbolVector> {
    if k == 0 {
        return Err(domain("symbol vector length must be positive"));
    }
    let mut rng = stream.rng();
    let s = CVector::from_fn(k, |_, _| {
        let bits: u8 = rng.random();
        qpsk_point(bits & 1 == 1, bits & 2 == 2)
    });
    Ok(SymbolVector { s })
}

/// One-bit DAC: `(√2/2)·(sign Re vᵢ + j·sign Im vᵢ)` with `sign(0) = +1`.
pub fn one_bit_quantize(v: &CVector) -> CVector {
    v.map(|z| C64::new(FRAC_1_SQRT_2 * sign(z.re), FRAC_1_SQRT_2 * sign(z.im)))
}

/// Per-user quadrant decision; the QPSK nearest point.
pub fn nearest_neighbor_decode(y: &CVector) -> SymbolVector {
    SymbolVector { s: one_bit_quantize(y) }
}
