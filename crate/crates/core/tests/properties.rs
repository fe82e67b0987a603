use esvm::harness::{to_json_string, vrf, Quartiles};
use esvm::optimizer::esvm_objective;
use esvm::stein::{feature_row, stein_value};
use esvm::variance::{quadratic_form_apply, trapezoid_kernel};
use esvm::{fit, Criterion, DesignSet, FunctionalSeries, LagWindow, SteinFamily, Trajectory, TrajectoryMeta};
use proptest::prelude::*;

fn series_and_bn() -> impl Strategy<Value = (Vec<f64>, usize)> {
    prop::collection::vec(-50.0f64..50.0, 2..120).prop_flat_map(|v| {
        let n = v.len();
        (Just(v), 1..=n)
    })
}

fn sv(v: &[f64], bn: usize) -> f64 {
    esvm::spectral_variance(&FunctionalSeries::new(v.to_vec()).unwrap(), &LagWindow::trapezoid(bn).unwrap())
        .unwrap()
        .value
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kernel_is_even_and_bounded(u in -1.0f64..=1.0) {
        let w = trapezoid_kernel(u).unwrap();
        prop_assert!((0.0..=1.0).contains(&w));
        prop_assert_eq!(w, trapezoid_kernel(-u).unwrap());
    }

    #[test]
    fn spectral_variance_ignores_shifts((v, bn) in series_and_bn(), c in -1e3f64..1e3) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        prop_assert!(close(sv(&v, bn), sv(&shifted, bn), 1e-8));
    }

    #[test]
    fn spectral_variance_scales_quadratically((v, bn) in series_and_bn(), c in -10.0f64..10.0) {
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        prop_assert!(close(sv(&scaled, bn), c * c * sv(&v, bn), 1e-10));
    }

    #[test]
    fn toeplitz_route_matches_lag_sum((v, bn) in series_and_bn()) {
        let window = LagWindow::trapezoid(bn).unwrap();
        prop_assert!(close(quadratic_form_apply(&v, &window).unwrap(), sv(&v, bn), 1e-10));
    }

    #[test]
    fn unit_window_is_biased_variance(v in prop::collection::vec(-5.0f64..5.0, 2..80)) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let r0 = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        prop_assert!(close(sv(&v, 1), r0, 1e-12));
    }

    #[test]
    fn vrf_of_identical_series_is_one(v in prop::collection::vec(-5.0f64..5.0, 8..80)) {
        let s = FunctionalSeries::new(v).unwrap();
        let w = LagWindow::trapezoid(2).unwrap();
        let r = vrf(&s, &s, &w).unwrap();
        prop_assert!(r.is_none() || r == Some(1.0));
    }

    #[test]
    fn burn_in_composes(n in 3usize..60, a in 0usize..20, b in 0usize..20) {
        prop_assume!(a + b < n);
        let data: Vec<f64> = (0..2 * n).map(|k| k as f64).collect();
        let t = Trajectory::from_flat(data, 2, TrajectoryMeta::default()).unwrap();
        let twice = t.split_burn_in(a).unwrap().split_burn_in(b).unwrap();
        let once = t.split_burn_in(a + b).unwrap();
        prop_assert_eq!(twice.as_flat(), once.as_flat());
        prop_assert_eq!(once.len(), n - a - b);
    }

    #[test]
    fn stein_value_is_linear(
        x in prop::collection::vec(-3.0f64..3.0, 2),
        du in prop::collection::vec(-3.0f64..3.0, 2),
        t1 in prop::collection::vec(-2.0f64..2.0, 6),
        t2 in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        let fam = SteinFamily::SecondOrder { d: 2 };
        let sum: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a + b).collect();
        let lhs = stein_value(&fam, &sum, &x, &du).unwrap();
        let rhs = stein_value(&fam, &t1, &x, &du).unwrap() + stein_value(&fam, &t2, &x, &du).unwrap();
        prop_assert!(close(lhs, rhs, 1e-12));
        let psi = feature_row(&fam, &x, &du).unwrap();
        let dot: f64 = t1.iter().zip(&psi.0).map(|(a, b)| a * b).sum();
        prop_assert!(close(dot, stein_value(&fam, &t1, &x, &du).unwrap(), 1e-12));
    }

    #[test]
    fn constant_feature_column_is_invisible(
        f in prop::collection::vec(-5.0f64..5.0, 30),
        psi in prop::collection::vec(-5.0f64..5.0, 30),
        theta in -3.0f64..3.0,
        extra in -100.0f64..100.0,
    ) {
        let window = LagWindow::trapezoid(5).unwrap();
        let plain = DesignSet::linear(f.clone(), psi.clone(), 1, window.clone()).unwrap();
        let with_const: Vec<f64> = psi.iter().flat_map(|p| [*p, 1.0]).collect();
        let augmented = DesignSet::linear(f, with_const, 2, window).unwrap();
        let a = esvm_objective(&[theta], &plain).unwrap().0;
        let b = esvm_objective(&[theta, extra], &augmented).unwrap().0;
        prop_assert!(close(a, b, 1e-10));
    }

    #[test]
    fn fits_never_increase_the_objective(
        f in prop::collection::vec(-5.0f64..5.0, 40),
        psi in prop::collection::vec(-5.0f64..5.0, 80),
        bn in 1usize..40,
    ) {
        let design = DesignSet::linear(f, psi, 2, LagWindow::trapezoid(bn).unwrap()).unwrap();
        for c in [Criterion::Esvm, Criterion::Evm] {
            let r = fit(&design, c).unwrap();
            prop_assert!(r.objective_at_theta <= r.objective_at_zero + 1e-9 * r.objective_at_zero.abs());
        }
    }

    #[test]
    fn quartiles_are_ordered(v in prop::collection::vec(-1e6f64..1e6, 1..50)) {
        let q = Quartiles::of(&v).unwrap();
        prop_assert!(q.min <= q.q1 && q.q1 <= q.median && q.median <= q.q3 && q.q3 <= q.max);
    }

    #[test]
    fn json_floats_round_trip(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..20)) {
        let text = to_json_string(&v).unwrap();
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(v, back);
    }
}
