//! Large-system predictions: the Marchenko–Pastur law, the scalar-model
//! constants `T̄s`, `T̄g`, the resulting SNR and SEP, and the closed forms for
//! MF, ZF and the optimal RZF shaper.

use std::f64::consts::{FRAC_2_PI, PI};

use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::numerics::{chebyshev_rule, q_function};
use crate::precoding::{optimal_rho, SpectralShaper};

pub const DEFAULT_QUADRATURE_ORDER: usize = 512;
/// Largest change allowed when the quadrature order is doubled.
pub const QUADRATURE_SELF_CHECK: f64 = 1e-10;
const MAX_QUADRATURE_ORDER: usize = 1 << 17;

/// Limiting eigenvalue law of `HHᴴ` for ratio `c = K/N = 1/γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchenkoPastur {
    c: f64,
    a: f64,
    b: f64,
}

impl MarchenkoPastur {
    /// Law for antenna-to-user ratio `γ > 1`.
    pub fn new(gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Self::from_ratio(1.0 / gamma)
    }

    pub fn from_ratio(c: f64) -> Result<Self> {
        if !(c > 0.0 && c < 1.0) {
            return Err(domain(format!("Marchenko-Pastur ratio must lie in (0, 1), got {c}")));
        }
        let root = c.sqrt();
        Ok(Self { c, a: (1.0 - root).powi(2), b: (1.0 + root).powi(2) })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn gamma(&self) -> f64 {
        1.0 / self.c
    }

    /// Lower support edge `(1 − √c)²`.
    pub fn a(&self) -> f64 {
        self.a
    }

    /// Upper support edge `(1 + √c)²`.
    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= self.a || x >= self.b {
            return 0.0;
        }
        ((x - self.a) * (self.b - x)).sqrt() / (2.0 * PI * self.c * x)
    }

    /// `P(λ ≤ x)`, integrated in the angle variable `x = (a+b)/2 − (b−a)/2·cos φ`
    /// where the integrand is smooth.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.a {
            return 0.0;
        }
        if x >= self.b {
            return 1.0;
        }
        let mid = 0.5 * (self.a + self.b);
        let half = 0.5 * (self.b - self.a);
        let end = ((mid - x) / half).clamp(-1.0, 1.0).acos();
        let integrand = |phi: f64| {
            let s = phi.sin();
            half * half * s * s / (2.0 * PI * self.c * (mid - half * phi.cos()))
        };
        let n = 2048;
        let h = end / n as f64;
        let mut acc = integrand(0.0) + integrand(end);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * integrand(i as f64 * h);
        }
        (acc * h / 3.0).clamp(0.0, 1.0)
    }

    fn expect_at_order<G: FnMut(f64) -> f64>(&self, g: &mut G, order: usize) -> Result<f64> {
        let rule = chebyshev_rule(order)?;
        let mid = 0.5 * (self.a + self.b);
        let half = 0.5 * (self.b - self.a);
        let scale = half * half / (2.0 * PI * self.c);
        let mut acc = 0.0;
        for (&t, &w) in rule.nodes().iter().zip(rule.weights()) {
            let x = mid + half * t;
            let value = g(x);
            if !value.is_finite() {
                return Err(Error::Evaluation(format!("integrand is {value} at λ = {x}")));
            }
            acc += w * value / x;
        }
        Ok(acc * scale)
    }

    /// `E[g(λ)]` by Gauss–Chebyshev quadrature of the given order; the order
    /// is doubled until successive results agree to `1e-10` (relative to
    /// `max(1, |E|)`).
    pub fn expect<G: FnMut(f64) -> f64>(&self, mut g: G, order: usize) -> Result<f64> {
        let mut order = order.max(1);
        let mut current = self.expect_at_order(&mut g, order)?;
        while order < MAX_QUADRATURE_ORDER {
            let refined = self.expect_at_order(&mut g, 2 * order)?;
            if (refined - current).abs() < QUADRATURE_SELF_CHECK * refined.abs().max(1.0) {
                return Ok(refined);
            }
            order *= 2;
            current = refined;
        }
        Err(Error::Evaluation(format!(
            "quadrature did not settle below order {MAX_QUADRATURE_ORDER}"
        )))
    }

    /// One eigenvalue drawn from the law by rejection from a uniform proposal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let ceiling = self.density_ceiling();
        loop {
            let x = self.a + (self.b - self.a) * rng.random::<f64>();
            if rng.random::<f64>() * ceiling <= self.pdf(x) {
                return x;
            }
        }
    }

    fn density_ceiling(&self) -> f64 {
        let steps = 2000;
        let peak = (1..steps)
            .map(|i| self.pdf(self.a + (self.b - self.a) * i as f64 / steps as f64))
            .fold(0.0, f64::max);
        1.05 * peak
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !gamma.is_finite() || gamma <= 1.0 {
        return Err(domain(format!("antenna-to-user ratio must exceed 1, got {gamma}")));
    }
    Ok(())
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(domain(format!("noise variance must be non-negative, got {sigma2}")));
    }
    Ok(())
}

pub fn mp_pdf(mp: &MarchenkoPastur, x: f64) -> f64 {
    mp.pdf(x)
}

pub fn mp_expect<G: FnMut(f64) -> f64>(mp: &MarchenkoPastur, g: G, order: usize) -> Result<f64> {
    mp.expect(g, order)
}

/// The scalar model `ȳ = T̄s·s + T̄g·g + n` and its SNR and SEP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticConstants {
    pub t_s: f64,
    pub t_g: f64,
    pub snr: f64,
    pub sep: f64,
}

impl AsymptoticConstants {
    fn from_moments(gamma: f64, sigma2: f64, e_f2: f64, e_df: f64, e_df2: f64) -> Result<Self> {
        if !(e_f2 > 0.0) {
            return Err(Error::Evaluation(format!("E[f²] must be positive, got {e_f2}")));
        }
        let var = (e_df2 - e_df * e_df).max(0.0);
        let t_s = (2.0 * gamma / (PI * e_f2)).sqrt() * e_df;
        let t_g = (2.0 * gamma * var / (PI * e_f2) + 1.0 - FRAC_2_PI).sqrt();
        let snr = t_s * t_s / (t_g * t_g + sigma2);
        Ok(Self { t_s, t_g, snr, sep: asymptotic_sep(snr)? })
    }
}

/// `T̄s`, `T̄g`, SNR and SEP for shaper `f` at ratio `γ` and noise `σ²`.
pub fn asymptotic_constants(f: &SpectralShaper, gamma: f64, sigma2: f64) -> Result<AsymptoticConstants> {
    asymptotic_constants_with_order(f, gamma, sigma2, DEFAULT_QUADRATURE_ORDER)
}

pub fn asymptotic_constants_with_order(
    f: &SpectralShaper,
    gamma: f64,
    sigma2: f64,
    order: usize,
) -> Result<AsymptoticConstants> {
    check_sigma2(sigma2)?;
    let mp = MarchenkoPastur::new(gamma)?;
    let shaped = |lambda: f64| f.eval(lambda.sqrt()).unwrap_or(f64::NAN);
    let e_f2 = mp.expect(|x| shaped(x).powi(2), order)?;
    let e_df = mp.expect(|x| x.sqrt() * shaped(x), order)?;
    let e_df2 = mp.expect(|x| x * shaped(x).powi(2), order)?;
    AsymptoticConstants::from_moments(gamma, sigma2, e_f2, e_df, e_df2)
}

/// `min(1, 2·Q(√SNR))`.
pub fn asymptotic_sep(snr: f64) -> Result<f64> {
    if !(snr >= 0.0) {
        return Err(domain(format!("SNR must be non-negative, got {snr}")));
    }
    if snr.is_infinite() {
        return Ok(0.0);
    }
    Ok((2.0 * q_function(snr.sqrt())?).min(1.0))
}

/// `(2/π)γ / (1 + σ²)`.
pub fn snr_mf_closed(gamma: f64, sigma2: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_sigma2(sigma2)?;
    Ok(FRAC_2_PI * gamma / (1.0 + sigma2))
}

/// `(2/π)(γ − 1) / (1 − 2/π + σ²)`.
pub fn snr_zf_closed(gamma: f64, sigma2: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_sigma2(sigma2)?;
    Ok(FRAC_2_PI * (gamma - 1.0) / (1.0 - FRAC_2_PI + sigma2))
}

fn snr_opt_formula(rho: f64, gamma: f64) -> f64 {
    let u = rho + gamma - 1.0;
    ((u * u + 4.0 * rho).sqrt() + u) / (2.0 * rho) - 1.0
}

/// SNR of the optimal shaper, `(√(û² + 4ρ̂) + û)/(2ρ̂) − 1` with `ρ̂ = γρ*`
/// and `û = ρ̂ + γ − 1`. Equals `m/(1 − m)` for `m = E[λ/(λ + ρ*)]`.
pub fn snr_opt_closed(gamma: f64, sigma2: f64) -> Result<f64> {
    let rho_hat = gamma * optimal_rho(gamma, sigma2)?;
    Ok(snr_opt_formula(rho_hat, gamma))
}

/// The same expression evaluated with `ρ*` in place of `γρ*`. It does not
/// match the quadrature optimum; kept so reports can show the discrepancy.
pub fn snr_opt_unscaled_rho(gamma: f64, sigma2: f64) -> Result<f64> {
    let rho = optimal_rho(gamma, sigma2)?;
    Ok(snr_opt_formula(rho, gamma))
}

/// RZF with `ρ = ρ*(γ, σ²)`, the SNR-maximizing shaper (scale fixed to 1).
pub fn optimal_shaper(gamma: f64, sigma2: f64) -> Result<SpectralShaper> {
    SpectralShaper::rzf(optimal_rho(gamma, sigma2)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn pdf_values() {
        let mp = MarchenkoPastur::new(4.0).unwrap();
        assert_eq!(mp.a(), 0.25);
        assert_eq!(mp.b(), 2.25);
        assert_eq!(mp.pdf(mp.a()), 0.0);
        assert_eq!(mp.pdf(mp.b()), 0.0);
        assert_eq!(mp.pdf(-1.0), 0.0);
        assert!((mp_pdf(&mp, 1.0) - 0.9375f64.sqrt() / (PI / 2.0)).abs() < 1e-15);
        assert!((mp.pdf(1.0) - 0.616_404_444_061_499_8).abs() < 1e-14);
    }

    #[test]
    fn normalization_and_moments() {
        for &gamma in &[1.1, 2.0, 4.0, 8.0, 32.0] {
            let mp = MarchenkoPastur::new(gamma).unwrap();
            let c = 1.0 / gamma;
            let order = DEFAULT_QUADRATURE_ORDER;
            assert!((mp_expect(&mp, |_| 1.0, order).unwrap() - 1.0).abs() < 1e-10);
            assert!((mp.expect(|x| x, order).unwrap() - 1.0).abs() < 1e-10);
            assert!((mp.expect(|x| x * x, order).unwrap() - (1.0 + c)).abs() < 1e-10);
            assert!((mp.expect(|x| 1.0 / x, order).unwrap() - 1.0 / (1.0 - c)).abs() < 1e-10);
        }
        let mp = MarchenkoPastur::new(6.0).unwrap();
        assert!((mp.expect(|x| 1.0 / x, 512).unwrap() - 1.2).abs() < 1e-10);
    }

    #[test]
    fn expectation_rejects_non_finite_integrands() {
        let mp = MarchenkoPastur::new(2.0).unwrap();
        assert!(matches!(mp.expect(|_| f64::NAN, 16), Err(Error::Evaluation(_))));
        assert!(MarchenkoPastur::new(1.0).is_err());
        assert!(MarchenkoPastur::from_ratio(1.0).is_err());
    }

    #[test]
    fn cdf_is_consistent_with_quadrature() {
        let mp = MarchenkoPastur::new(3.0).unwrap();
        assert_eq!(mp.cdf(0.0), 0.0);
        assert_eq!(mp.cdf(10.0), 1.0);
        let mid = 0.5 * (mp.a() + mp.b());
        // E[1{λ ≤ x}] by a fine Riemann sum of the pdf as an independent route.
        let n = 200_000;
        let h = (mid - mp.a()) / n as f64;
        let riemann: f64 = (0..n).map(|i| mp.pdf(mp.a() + (i as f64 + 0.5) * h) * h).sum();
        assert!((mp.cdf(mid) - riemann).abs() < 1e-6);
        let grid: Vec<f64> = (0..=50).map(|i| mp.a() + (mp.b() - mp.a()) * i as f64 / 50.0).collect();
        assert!(grid.windows(2).all(|w| mp.cdf(w[0]) <= mp.cdf(w[1])));
    }

    #[test]
    fn sampler_matches_moments() {
        let mp = MarchenkoPastur::new(4.0).unwrap();
        let mut rng = RngStream::new(1, 0).rng();
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| mp.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let second = draws.iter().map(|x| x * x).sum::<f64>() / n as f64;
        // var[λ] = c = 0.25, var[λ²] is below 3, so these bounds exceed 4 sd.
        assert!((mean - 1.0).abs() < 0.005);
        assert!((second - 1.25).abs() < 0.02);
    }

    #[test]
    fn mf_and_zf_constants() {
        let mf = asymptotic_constants(&SpectralShaper::Mf, 6.0, 0.0).unwrap();
        assert!((mf.t_s - (12.0 / PI).sqrt()).abs() < 1e-10);
        assert!((mf.t_g - 1.0).abs() < 1e-10);
        assert!((mf.snr - 12.0 / PI).abs() < 1e-9);
        assert!((mf.snr - 3.819_718_634_205_488).abs() < 1e-9);

        let zf = asymptotic_constants(&SpectralShaper::Zf, 6.0, 0.0).unwrap();
        assert!((zf.t_s - 1.784_124_116_152_771).abs() < 1e-9);
        assert!((zf.t_g - 0.602_810_274_989_087).abs() < 1e-9);
        assert!((zf.snr - 8.759_691_969_420_543).abs() < 1e-8);
        assert!((zf.sep - 3.079_610_581_966_508e-3).abs() < 1e-12);
    }

    #[test]
    fn sep_values() {
        assert_eq!(asymptotic_sep(0.0).unwrap(), 1.0);
        assert!((asymptotic_sep(12.0 / PI).unwrap() - 0.050_652_743_395_233_7).abs() < 1e-12);
        assert!(asymptotic_sep(-1.0).is_err());
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for &gamma in &[2.0, 4.0, 6.0, 8.0] {
            for &sigma2 in &[0.0, 0.1, 1.0] {
                let mf = asymptotic_constants(&SpectralShaper::Mf, gamma, sigma2).unwrap().snr;
                let zf = asymptotic_constants(&SpectralShaper::Zf, gamma, sigma2).unwrap().snr;
                assert!(rel(mf, snr_mf_closed(gamma, sigma2).unwrap()) < 1e-9);
                assert!(rel(zf, snr_zf_closed(gamma, sigma2).unwrap()) < 1e-9);
            }
        }
        assert!(snr_zf_closed(1.0 + 1e-12, 0.0).unwrap() < 1e-11);
        assert!(snr_mf_closed(1.0, 0.0).is_err());
    }

    #[test]
    fn optimal_snr_closed_form() {
        assert!((snr_opt_closed(6.0, 0.0).unwrap() - 8.936_014_022_698_83).abs() < 1e-9);
        assert!((snr_opt_unscaled_rho(6.0, 0.0).unwrap() - 52.753_703_558_402_48).abs() < 1e-9);
        let mp = MarchenkoPastur::new(6.0).unwrap();
        let rho = optimal_rho(6.0, 0.0).unwrap();
        let m = mp.expect(|x| x / (x + rho), 512).unwrap();
        assert!((m - 0.899_356_019_655_819_8).abs() < 1e-10);
        assert!(rel(m / (1.0 - m), snr_opt_closed(6.0, 0.0).unwrap()) < 1e-9);
    }

    #[test]
    fn optimal_dominates_mf_and_zf() {
        for &gamma in &[1.5, 2.0, 4.0, 8.0, 16.0] {
            for &sigma2 in &[0.0, 0.5, 2.0] {
                let opt = snr_opt_closed(gamma, sigma2).unwrap();
                let best = snr_mf_closed(gamma, sigma2)
                    .unwrap()
                    .max(snr_zf_closed(gamma, sigma2).unwrap());
                assert!(opt - best >= -1e-9);
                let quad = asymptotic_constants(&optimal_shaper(gamma, sigma2).unwrap(), gamma, sigma2)
                    .unwrap()
                    .snr;
                assert!(rel(quad, opt) < 1e-8);
            }
        }
        let ratio = snr_opt_closed(50.0, 0.0).unwrap() / snr_zf_closed(50.0, 0.0).unwrap();
        assert!((1.0..=1.02).contains(&ratio), "{ratio}");
    }

    #[test]
    fn optimal_shaper_approaches_zf_for_large_gamma() {
        let gamma = 1e6;
        let shaper = optimal_shaper(gamma, 0.0).unwrap();
        let mp = MarchenkoPastur::new(gamma).unwrap();
        for i in 0..=10 {
            let d = (mp.a() + (mp.b() - mp.a()) * i as f64 / 10.0).sqrt();
            assert!(rel(shaper.eval(d).unwrap(), 1.0 / d) < 1e-5);
        }
    }

    #[test]
    fn scale_invariance() {
        let shapers = [
            SpectralShaper::Mf,
            SpectralShaper::Zf,
            SpectralShaper::rzf(0.3).unwrap(),
        ];
        for f in &shapers {
            let base = asymptotic_constants(f, 3.0, 0.2).unwrap();
            for &alpha in &[1e-3, 1.0, 1e3] {
                let scaled = asymptotic_constants(&f.scaled(alpha), 3.0, 0.2).unwrap();
                assert!((scaled.t_s - base.t_s).abs() <= 1e-12 * base.t_s.max(1.0));
                assert!((scaled.t_g - base.t_g).abs() <= 1e-12 * base.t_g.max(1.0));
                assert!((scaled.snr - base.snr).abs() <= 1e-12 * base.snr.max(1.0));
                assert!((scaled.sep - base.sep).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gamma_guard() {
        assert!(asymptotic_constants(&SpectralShaper::Zf, 1.0, 0.0).is_err());
        assert!(asymptotic_constants(&SpectralShaper::Zf, 2.0, -1.0).is_err());
        assert!(optimal_shaper(0.9, 0.0).is_err());
        assert!(snr_opt_closed(1.0, 0.0).is_err());
    }
}
