use onebit_core::asymptotics::{asymptotic_constants, optimal_shaper, MarchenkoPastur};
use onebit_core::channel::{one_bit_quantize, sample_channel, sample_symbols, SystemConfig};
use onebit_core::montecarlo::{estimate_ser, estimate_ser_batch, ChannelMode};
use onebit_core::numerics::{RngStream, C64};
use onebit_core::precoding::{optimal_rho, PrecodingContext, SpectralShaper};
use proptest::prelude::*;

#[test]
fn per_user_error_rates_are_homogeneous() {
    let cfg = SystemConfig::with_gamma(64, 4.0, 0.3, 11).unwrap();
    let trials = 2000;
    let est = estimate_ser(&cfg, &SpectralShaper::Zf, trials, ChannelMode::PerTrial).unwrap();
    let sd = (est.ser * (1.0 - est.ser) / trials as f64).sqrt();
    let per_user = est.per_user_ser.as_ref().unwrap();
    assert_eq!(per_user.len(), 64);
    for (k, p) in per_user.iter().enumerate() {
        assert!((p - est.ser).abs() <= 4.0 * sd, "user {k}: {p} vs pooled {}", est.ser);
    }
}

#[test]
fn error_rate_falls_with_noise() {
    let trials = 3000;
    let estimates: Vec<_> = [1.0, 0.3, 0.1, 0.03, 0.01]
        .iter()
        .map(|&sigma2| {
            let cfg = SystemConfig::with_gamma(16, 4.0, sigma2, 12).unwrap();
            estimate_ser(&cfg, &SpectralShaper::Zf, trials, ChannelMode::PerTrial).unwrap()
        })
        .collect();
    let mut breaks = 0;
    for pair in estimates.windows(2) {
        if pair[1].ser > pair[0].ser {
            assert!(pair[0].overlaps(&pair[1]), "{:?} then {:?}", pair[0].ser, pair[1].ser);
            breaks += 1;
        }
    }
    assert!(breaks <= 1);
}

#[test]
fn noiseless_fixed_channel_runs_are_deterministic() {
    let cfg = SystemConfig::with_gamma(8, 3.0, 0.0, 13).unwrap();
    let shapers = [SpectralShaper::Mf, SpectralShaper::Zf];
    let a = estimate_ser_batch(&cfg, &shapers, 200, ChannelMode::Fixed).unwrap();
    let b = estimate_ser_batch(&cfg, &shapers, 200, ChannelMode::Fixed).unwrap();
    assert_eq!(a, b);
}

#[test]
fn optimal_snr_equals_resolvent_ratio() {
    for gamma in [1.5, 2.0, 4.0, 6.0, 8.0, 32.0] {
        for sigma2 in [0.0, 0.1, 1.0, 5.0] {
            let rho = optimal_rho(gamma, sigma2).unwrap();
            let m = MarchenkoPastur::new(gamma).unwrap().expect(|x| x / (x + rho), 512).unwrap();
            let snr = asymptotic_constants(&optimal_shaper(gamma, sigma2).unwrap(), gamma, sigma2).unwrap().snr;
            assert!((snr - m / (1.0 - m)).abs() <= 1e-9 * snr, "γ={gamma} σ²={sigma2}");
        }
    }
}

#[test]
fn scale_invariance_is_exact() {
    for f in [SpectralShaper::Mf, SpectralShaper::Zf, SpectralShaper::rzf(0.2).unwrap()] {
        let base = asymptotic_constants(&f, 4.0, 0.1).unwrap();
        for alpha in [1e-3, 1.0, 1e3] {
            let scaled = asymptotic_constants(&f.scaled(alpha), 4.0, 0.1).unwrap();
            assert!((base.t_s - scaled.t_s).abs() <= 1e-12 * base.t_s);
            assert!((base.t_g - scaled.t_g).abs() <= 1e-12 * base.t_g);
            assert!((base.snr - scaled.snr).abs() <= 1e-12 * base.snr);
            assert!((base.sep - scaled.sep).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn perturbing_the_optimum_never_helps(
        gamma in 1.5f64..16.0,
        sigma2 in 0.0f64..2.0,
        epsilon in -0.3f64..0.3,
        frequency in 0.1f64..6.0,
        phase in 0.0f64..std::f64::consts::TAU,
    ) {
        let rho = optimal_rho(gamma, sigma2).unwrap();
        let best = asymptotic_constants(&optimal_shaper(gamma, sigma2).unwrap(), gamma, sigma2).unwrap().snr;
        let perturbed = SpectralShaper::custom("perturbed", move |x| {
            x / (x * x + rho) * (1.0 + epsilon * (frequency * x + phase).sin())
        });
        let snr = asymptotic_constants(&perturbed, gamma, sigma2).unwrap().snr;
        prop_assert!(snr <= best + 1e-9, "{snr} > {best}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quantized_precoder_output_ignores_positive_scale(seed: u64, alpha in 1e-4f64..1e4, which in 0usize..3) {
        let cfg = SystemConfig::with_gamma(6, 3.0, 0.0, seed).unwrap();
        let channel = sample_channel(&cfg, RngStream::new(seed, 0)).unwrap();
        let symbols = sample_symbols(6, RngStream::new(seed, 1)).unwrap();
        let f = [SpectralShaper::Mf, SpectralShaper::Zf, SpectralShaper::rzf(0.3).unwrap()][which].clone();
        let ctx = PrecodingContext::new(&channel);
        let plain = ctx.precode(&f, &symbols).unwrap();
        let scaled = ctx.precode(&f.scaled(alpha), &symbols).unwrap();
        prop_assert_eq!(one_bit_quantize(&scaled), one_bit_quantize(&plain));
        prop_assert_eq!(one_bit_quantize(&(&plain * C64::new(alpha, 0.0))), one_bit_quantize(&plain));
    }
}
