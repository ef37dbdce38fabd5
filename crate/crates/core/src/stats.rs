//! Small two-sample statistics used by the equivalence and Haar checks.

use crate::error::{Error, Result};
use crate::numerics::q_function;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestOutcome> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: a.len().min(b.len()) });
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    let p_value = kolmogorov_survival((en + 0.12 + 0.11 / en) * d);
    Ok(TestOutcome { statistic: d, p_value })
}

/// Largest gap between the empirical CDF of `samples` and `cdf`.
pub fn kolmogorov_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let v = sorted(samples);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}

pub fn median(values: &[f64]) -> f64 {
    let v = sorted(values);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Number of adjacent increases in a sequence that should be non-increasing.
pub fn count_ascents(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

fn two_sided(z: f64) -> f64 {
    if !z.is_finite() {
        return if z.is_nan() { 1.0 } else { 0.0 };
    }
    (2.0 * q_function(z.abs()).unwrap_or(0.0)).min(1.0)
}

/// Welch z-test for equal means.
pub fn mean_test(a: &[f64], b: &[f64]) -> TestOutcome {
    let se = (variance(a) / a.len() as f64 + variance(b) / b.len() as f64).sqrt();
    let diff = mean(a) - mean(b);
    let z = if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    TestOutcome { statistic: z, p_value: two_sided(z) }
}

/// Large-sample z-test for equal variances, with standard errors from the
/// fourth central moment so it stays valid for non-Gaussian data.
pub fn variance_test(a: &[f64], b: &[f64]) -> TestOutcome {
    let moments = |v: &[f64]| {
        let m = mean(v);
        let n = v.len() as f64;
        let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
        (m2, ((m4 - m2 * m2).max(0.0) / n))
    };
    let (va, sa) = moments(a);
    let (vb, sb) = moments(b);
    let se = (sa + sb).sqrt();
    let diff = va - vb;
    let z = if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    TestOutcome { statistic: z, p_value: two_sided(z) }
}
