use onebit_core::asymptotics::{asymptotic_constants, MarchenkoPastur};
use onebit_core::channel::{nearest_neighbor_decode, one_bit_quantize, sample_symbols};
use onebit_core::montecarlo::confidence_interval;
use onebit_core::numerics::{max_abs_diff, q_function, CMatrix, CVector, GeneralizedReflector, Reflector, RngStream, C64};
use onebit_core::precoding::SpectralShaper;
use proptest::prelude::*;

fn complex_vector(max_len: usize) -> impl Strategy<Value = CVector> {
    prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..=max_len)
        .prop_filter("nonzero", |parts| parts.iter().any(|(re, im)| re.hypot(*im) > 1e-3))
        .prop_map(|parts| CVector::from_iterator(parts.len(), parts.into_iter().map(|(re, im)| C64::new(re, im))))
}

fn same_length_pair(max_len: usize) -> impl Strategy<Value = (CVector, CVector, usize)> {
    complex_vector(max_len).prop_flat_map(|v| {
        let m = v.len();
        let x = prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), m)
            .prop_map(|parts| CVector::from_iterator(parts.len(), parts.into_iter().map(|(re, im)| C64::new(re, im))));
        (Just(v), x, 1..=m)
    })
}

fn shaper() -> impl Strategy<Value = SpectralShaper> {
    prop_oneof![
        Just(SpectralShaper::Mf),
        Just(SpectralShaper::Zf),
        (1e-3f64..10.0).prop_map(|rho| SpectralShaper::rzf(rho).unwrap()),
    ]
}

proptest! {
    #[test]
    fn quantizer_is_idempotent_and_unit_modulus(v in complex_vector(32)) {
        let q = one_bit_quantize(&v);
        prop_assert_eq!(&one_bit_quantize(&q), &q);
        for z in q.iter() {
            prop_assert!((z.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn quantizer_ignores_positive_scaling(v in complex_vector(32), alpha in 1e-6f64..1e6) {
        prop_assert_eq!(one_bit_quantize(&(&v * C64::new(alpha, 0.0))), one_bit_quantize(&v));
    }

    #[test]
    fn decoding_inverts_positive_gain(k in 1usize..64, seed: u64, gain in 1e-6f64..1e6) {
        let s = sample_symbols(k, RngStream::new(seed, 0)).unwrap();
        let received = s.as_vector() * C64::new(gain, 0.0);
        let decoded = nearest_neighbor_decode(&received);
        prop_assert_eq!(decoded.as_vector(), s.as_vector());
    }

    #[test]
    fn reflector_maps_first_axis_onto_direction(v in complex_vector(24)) {
        let m = v.len();
        let r = Reflector::new(&v).unwrap();
        let dense = r.to_matrix();
        let mut e1 = CVector::zeros(m);
        e1[0] = C64::new(1.0, 0.0);
        let norm = v.norm();
        prop_assert!((r.apply(&e1) - v.unscale(norm)).camax() < 1e-12);
        prop_assert!((r.apply_adjoint(&v) - &e1 * C64::new(norm, 0.0)).camax() < 1e-12 * norm.max(1.0));
        prop_assert!(max_abs_diff(&(dense.adjoint() * &dense), &CMatrix::identity(m, m)) < 1e-12);
    }

    #[test]
    fn generalized_reflector_fixes_leading_coordinates((v, x, k) in same_length_pair(16)) {
        prop_assume!(v.rows(k - 1, v.len() - k + 1).norm() > 1e-3);
        let r = GeneralizedReflector::new(k, &v).unwrap();
        let y = r.apply(&x);
        for i in 0..k - 1 {
            prop_assert_eq!(y[i], x[i]);
        }
        prop_assert!((y.norm() - x.norm()).abs() < 1e-10 * x.norm().max(1.0));
        prop_assert!((r.apply_adjoint(&y) - &x).camax() < 1e-10 * x.norm().max(1.0));
    }

    #[test]
    fn asymptotic_constants_ignore_shaper_scale(f in shaper(), gamma in 1.2f64..20.0, sigma2 in 0.0f64..2.0, alpha in 1e-3f64..1e3) {
        let base = asymptotic_constants(&f, gamma, sigma2).unwrap();
        let scaled = asymptotic_constants(&f.scaled(alpha), gamma, sigma2).unwrap();
        prop_assert!((base.snr - scaled.snr).abs() <= 1e-9 * base.snr);
        prop_assert!((base.t_s - scaled.t_s).abs() <= 1e-9 * base.t_s);
        prop_assert!((base.t_g - scaled.t_g).abs() <= 1e-9 * base.t_g.max(1e-12));
    }

    #[test]
    fn more_noise_never_helps(f in shaper(), gamma in 1.2f64..20.0, sigma2 in 0.0f64..2.0, extra in 1e-3f64..2.0) {
        let quiet = asymptotic_constants(&f, gamma, sigma2).unwrap();
        let loud = asymptotic_constants(&f, gamma, sigma2 + extra).unwrap();
        prop_assert!(loud.snr < quiet.snr);
        prop_assert!(loud.sep >= quiet.sep);
        prop_assert!((0.0..=1.0).contains(&loud.sep));
    }

    #[test]
    fn marchenko_pastur_cdf_is_monotone(gamma in 1.05f64..50.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let mp = MarchenkoPastur::new(gamma).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let span = mp.b() - mp.a();
        let (x, y) = (mp.a() + lo * span, mp.a() + hi * span);
        prop_assert!(mp.cdf(x) <= mp.cdf(y) + 1e-12);
        prop_assert!((0.0..=1.0).contains(&mp.cdf(x)));
    }

    #[test]
    fn q_function_is_a_decreasing_tail(x in -8.0f64..8.0, step in 1e-3f64..4.0) {
        let here = q_function(x).unwrap();
        prop_assert!((0.0..=1.0).contains(&here));
        prop_assert!(q_function(x + step).unwrap() <= here);
        prop_assert!((here + q_function(-x).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn wilson_interval_contains_estimate(n in 1u64..1_000_000, frac in 0.0f64..=1.0) {
        let errors = ((n as f64) * frac).floor() as u64;
        let (low, high) = confidence_interval(errors, n).unwrap();
        let p = errors as f64 / n as f64;
        prop_assert!(0.0 <= low && low <= p && p <= high && high <= 1.0);
    }

    #[test]
    fn streams_are_reproducible(seed: u64, index: u64, sub: u64) {
        let a = sample_symbols(8, RngStream::new(seed, index).substream(sub)).unwrap();
        let b = sample_symbols(8, RngStream::new(seed, index).substream(sub)).unwrap();
        prop_assert_eq!(a.as_vector(), b.as_vector());
    }
}
