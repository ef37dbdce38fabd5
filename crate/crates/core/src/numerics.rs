//! Shared mathematical kernel: the Gaussian tail, complex unitary reflectors,
//! Gauss–Chebyshev quadrature and seeded random streams.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Error, Result};

pub type C64 = Complex<f64>;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

/// Standard normal upper-tail probability `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(domain(format!("q_function needs a finite argument, got {x}")));
    }
    Ok(0.5 * libm::erfc(x * FRAC_1_SQRT_2))
}

/// A unitary reflector `R(v)` kept in factored form.
///
/// With `v₁/‖v‖ = r·e^{jθ}` and `u = v/‖v‖ + e^{jθ}e₁`,
/// `R(v) = -e^{jθ}(I - u uᴴ/(1 + r))`. It maps `e₁` to `v/‖v‖` and
/// `R(v)ᴴ v = ‖v‖ e₁`. The first column is `v/‖v‖`; the remaining columns
/// form `B(v)`, an orthonormal basis of the complement of `v`.
#[derive(Debug, Clone)]
pub struct Reflector {
    u: CVector,
    phase: C64,
    denom: f64,
}

impl Reflector {
    pub fn new(v: &CVector) -> Result<Self> {
        let norm = v.norm();
        if v.is_empty() || norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        if !norm.is_finite() {
            return Err(domain("reflector input must be finite"));
        }
        let lead = v[0] / norm;
        let r = lead.norm();
        let unit_phase = if lead == C64::new(0.0, 0.0) {
            C64::new(1.0, 0.0)
        } else {
            lead / r
        };
        let mut u = v.unscale(norm);
        u[0] += unit_phase;
        Ok(Self { u, phase: -unit_phase, denom: 1.0 + r })
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    fn project_out(&self, x: &CVector) -> CVector {
        let coeff = self.u.dotc(x) / self.denom;
        x - &self.u * coeff
    }

    /// `R(v)·x`.
    pub fn apply(&self, x: &CVector) -> CVector {
        self.project_out(x) * self.phase
    }

    /// `R(v)ᴴ·x`.
    pub fn apply_adjoint(&self, x: &CVector) -> CVector {
        self.project_out(x) * self.phase.conj()
    }

    /// `B(v)ᴴ·w`: `R(v)ᴴ w` without its first entry.
    pub fn tail_adjoint(&self, w: &CVector) -> CVector {
        let full = self.apply_adjoint(w);
        full.rows(1, full.len() - 1).into_owned()
    }

    /// `B(v)·x` for `x` of length `m − 1`, i.e. `R(v)·[0; x]`.
    pub fn tail_apply(&self, x: &CVector) -> CVector {
        let mut padded = CVector::zeros(x.len() + 1);
        padded.rows_mut(1, x.len()).copy_from(x);
        self.apply(&padded)
    }

    pub fn to_matrix(&self) -> CMatrix {
        let m = self.dim();
        let mut out = CMatrix::identity(m, m);
        let uh = self.u.adjoint();
        out -= (&self.u * uh).unscale(self.denom);
        out * self.phase
    }
}

/// Generalized reflector `R_k(v) = I_{k−1} ⊕ R(v[k:m])`, with `k` 1-based.
#[derive(Debug, Clone)]
pub struct GeneralizedReflector {
    skip: usize,
    inner: Reflector,
}

impl GeneralizedReflector {
    pub fn new(k: usize, v: &CVector) -> Result<Self> {
        let m = v.len();
        if k == 0 || k > m {
            return Err(domain(format!("generalized reflector index {k} outside 1..={m}")));
        }
        let skip = k - 1;
        let tail = v.rows(skip, m - skip).into_owned();
        Ok(Self { skip, inner: Reflector::new(&tail)? })
    }

    pub fn dim(&self) -> usize {
        self.skip + self.inner.dim()
    }

    fn act(&self, x: &CVector, adjoint: bool) -> CVector {
        let len = self.inner.dim();
        let tail = x.rows(self.skip, len).into_owned();
        let mapped = if adjoint {
            self.inner.apply_adjoint(&tail)
        } else {
            self.inner.apply(&tail)
        };
        let mut out = x.clone();
        out.rows_mut(self.skip, len).copy_from(&mapped);
        out
    }

    pub fn apply(&self, x: &CVector) -> CVector {
        self.act(x, false)
    }

    pub fn apply_adjoint(&self, x: &CVector) -> CVector {
        self.act(x, true)
    }

    pub fn to_matrix(&self) -> CMatrix {
        let m = self.dim();
        let mut out = CMatrix::identity(m, m);
        let len = self.inner.dim();
        out.view_mut((self.skip, self.skip), (len, len))
            .copy_from(&self.inner.to_matrix());
        out
    }
}

/// Dense `R(v)`.
pub fn reflector(v: &CVector) -> Result<CMatrix> {
    Ok(Reflector::new(v)?.to_matrix())
}

/// Dense `R_k(v)`, `k` 1-based.
pub fn generalized_reflector(k: usize, v: &CVector) -> Result<CMatrix> {
    Ok(GeneralizedReflector::new(k, v)?.to_matrix())
}

/// `B(v)ᴴ·w`, computed matrix-free.
pub fn reflector_tail_apply(v: &CVector, w: &CVector) -> Result<CVector> {
    if v.len() < 2 {
        return Err(domain("reflector_tail_apply needs vectors of length at least 2"));
    }
    if v.len() != w.len() {
        return Err(domain(format!(
            "length mismatch: v has {}, w has {}",
            v.len(),
            w.len()
        )));
    }
    Ok(Reflector::new(v)?.tail_adjoint(w))
}

/// Gauss–Chebyshev rule of the second kind: `Σ wᵢ g(tᵢ) ≈ ∫₋₁¹ √(1−t²) g(t) dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * g(t))
            .sum()
    }
}

pub fn chebyshev_rule(order: usize) -> Result<QuadratureRule> {
    if order == 0 {
        return Err(domain("quadrature order must be positive"));
    }
    let step = PI / (order + 1) as f64;
    let (nodes, weights) = (1..=order)
        .map(|i| {
            let angle = i as f64 * step;
            let s = angle.sin();
            (angle.cos(), step * s * s)
        })
        .unzip();
    Ok(QuadratureRule { nodes, weights })
}

/// Descriptor of a reproducible random stream.
///
/// Equal `(master_seed, stream_index)` pairs always yield the same sequence.
/// Streams are ChaCha8 generators keyed by the seed and selected by the
/// 64-bit stream id, so distinct indices never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub const fn new(master_seed: u64, stream_index: u64) -> Self {
        Self { master_seed, stream_index }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }

    /// A child stream keyed by this stream and `index`; children of distinct
    /// parents or with distinct indices are distinct streams.
    pub fn substream(&self, index: u64) -> Self {
        let key = splitmix64(self.master_seed ^ splitmix64(self.stream_index.wrapping_add(1)));
        Self { master_seed: key, stream_index: index }
    }
}

/// One draw from `CN(0, variance)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let scale = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * scale, im * scale)
}

/// A vector with i.i.d. `CN(0, variance)` entries.
pub fn complex_gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, variance: f64) -> CVector {
    CVector::from_fn(len, |_, _| complex_gaussian(rng, variance))
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `diag` and
/// off-diagonal `off` (`off[i]` couples rows `i` and `i + 1`), by implicit QL
/// with Wilkinson shifts. Returned in ascending order.
pub fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 || off.len() + 1 != n {
        return Err(domain(format!(
            "tridiagonal matrix needs n ≥ 1 diagonal and n − 1 off-diagonal entries, got {} and {}",
            n,
            off.len()
        )));
    }
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    for l in 0..n {
        let mut iterations = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let scale = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * scale {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > 60 {
                return Err(Error::Evaluation("tridiagonal QL did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Largest entrywise modulus of `a − b`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
