mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;

use spikelasso::diagnostics::{assumption_params, lambda_range, noise_quantile};
use spikelasso::metrics::{conv_performance, f_measure};
use spikelasso::{
    adjoint_apply, forward_model, gram_band, kkt_check, objective, solve_working_set, LassoConfig, SparseActivation,
    Spike, Variant,
};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_identity(seed in any::<u64>(), n in 1usize..4, e in 1usize..4, l in 1usize..9, t in 20usize..80, k in 0usize..8) {
        let mut r = rng(seed);
        let shapes = rand_bank(&mut r, n, e, l, 0.3);
        let a = rand_act(&mut r, n, t, k);
        let y = rand_signal(&mut r, e, t);
        let ha = forward_model(&shapes, &a, t).unwrap();
        let hty = adjoint_apply(&shapes, &y).unwrap();
        let lhs = dot(ha.data(), y.data());
        let rhs = dot(&a.to_dense(), &hty.data);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn forward_is_linear(seed in any::<u64>(), c in -3.0f64..3.0) {
        let mut r = rng(seed);
        let (n, e, t) = (2, 3, 60);
        let shapes = rand_bank(&mut r, n, e, 6, 0.2);
        let a = rand_act(&mut r, n, t, 5);
        let b = rand_act(&mut r, n, t, 5);
        let mut sum = a.to_dense();
        for (x, y) in sum.iter_mut().zip(b.to_dense()) {
            *x = c * *x + y;
        }
        let combo = SparseActivation::from_dense(n, t, &sum).unwrap();
        let lhs = forward_model(&shapes, &combo, t).unwrap();
        let (fa, fb) = (forward_model(&shapes, &a, t).unwrap(), forward_model(&shapes, &b, t).unwrap());
        for i in 0..lhs.data().len() {
            prop_assert!((lhs.data()[i] - (c * fa.data()[i] + fb.data()[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn gram_band_vanishes_outside_lags(seed in any::<u64>(), extra in 0isize..20) {
        let mut r = rng(seed);
        let shapes = rand_bank(&mut r, 3, 2, 5, 0.3);
        let band = gram_band(&shapes);
        let l = 5isize;
        for n in 0..3 {
            for n2 in 0..3 {
                prop_assert_eq!(band.get(n, n2, l + extra), 0.0);
                prop_assert_eq!(band.get(n, n2, -l - extra), 0.0);
            }
        }
        // rho c_upper dominates every off-diagonal autocorrelation
        let p = assumption_params(&shapes);
        for n in 0..3 {
            for lag in 1..l {
                prop_assert!(band.get(n, n, lag).abs() <= p.rho * p.c_upper + 1e-12);
            }
        }
    }

    #[test]
    fn solution_scales_with_signal_and_lambda(seed in any::<u64>(), c in 0.2f64..5.0) {
        let mut r = rng(seed);
        let (n, t) = (2, 80);
        let shapes = rand_bank(&mut r, n, 2, 5, 0.0);
        let truth = rand_act(&mut r, n, t, 4);
        let mut y = forward_model(&shapes, &truth, t).unwrap();
        for v in y.data_mut() { *v += r.gen_range(-0.05..0.05); }
        let mut ys = y.clone();
        for v in ys.data_mut() { *v *= c; }
        let lambda = 0.3;
        let a = solve_working_set(&shapes, &y, &LassoConfig::new(lambda, 1e-10).unwrap(), None, Variant::Convolutional, None).unwrap().0;
        let b = solve_working_set(&shapes, &ys, &LassoConfig::new(c * lambda, c * 1e-10).unwrap(), None, Variant::Convolutional, None).unwrap().0;
        let scaled = SparseActivation::from_unsorted(n, t, a.entries().iter().map(|s| Spike { amplitude: c * s.amplitude, ..*s }).collect()).unwrap();
        prop_assert!(b.max_abs_diff(&scaled) <= 1e-6 * c.max(1.0));
    }

    #[test]
    fn passing_certificate_means_no_better_neighbour(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (n, t) = (2, 60);
        let shapes = rand_bank(&mut r, n, 2, 4, 0.0);
        let truth = rand_act(&mut r, n, t, 4);
        let mut y = forward_model(&shapes, &truth, t).unwrap();
        for v in y.data_mut() { *v += r.gen_range(-0.1..0.1); }
        let cfg = LassoConfig::new(0.2, 1e-9).unwrap();
        let a = solve_working_set(&shapes, &y, &cfg, None, Variant::Convolutional, None).unwrap().0;
        prop_assert!(kkt_check(&shapes, &y, &a, &cfg, None).unwrap().passes(&cfg));
        let f0 = objective(&shapes, &y, &a, cfg.lambda).unwrap();
        for _ in 0..20 {
            let mut d = a.to_dense();
            let i = r.gen_range(0..d.len());
            d[i] += if r.gen_bool(0.5) { 1e-4 } else { -1e-4 };
            let b = SparseActivation::from_dense(n, t, &d).unwrap();
            prop_assert!(objective(&shapes, &y, &b, cfg.lambda).unwrap() >= f0 - 1e-10);
        }
    }

    #[test]
    fn f_measure_is_symmetric(seed in any::<u64>(), tol in 0usize..6) {
        let mut r = rng(seed);
        let x = rand_act(&mut r, 2, 100, 10);
        let y = rand_act(&mut r, 2, 100, 7);
        let (a, b) = (f_measure(&x, &y, tol).unwrap(), f_measure(&y, &x, tol).unwrap());
        prop_assert_eq!(a.true_pos, b.true_pos);
        prop_assert!((a.f - b.f).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&a.f));
    }

    #[test]
    fn conv_performance_is_bounded(seed in any::<u64>(), s in 1usize..40) {
        let mut r = rng(seed);
        let x = rand_act(&mut r, 2, 100, 6);
        let y = rand_act(&mut r, 2, 100, 6);
        let cp = conv_performance(&x, &y, s).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&cp));
    }

    #[test]
    fn lambda_min_grows_with_noise_and_boundary(seed in any::<u64>(), s1 in 0.01f64..1.0, ds in 0.0f64..1.0, b1 in 0.0f64..2.0, db in 0.0f64..2.0) {
        let mut r = rng(seed);
        let shapes = rand_bank(&mut r, 2, 3, 6, 0.0);
        let mut p = assumption_params(&shapes);
        // shrink the couplings until the range exists
        p.rho = 0.1 * p.rho.min(p.c_lower / (4.0 * p.c_upper));
        p.epsilon = 0.0;
        let z = |s: f64| noise_quantile(s, p.c_upper, 2, 1000, 0.05).unwrap();
        let lo = |s: f64, b: f64| lambda_range(&p, z(s), 2.0, b, 1.0).unwrap().lambda_min.unwrap();
        prop_assert!(lo(s1, b1) <= lo(s1 + ds, b1) + 1e-12);
        prop_assert!(lo(s1, b1) <= lo(s1, b1 + db) + 1e-12);
    }
}
