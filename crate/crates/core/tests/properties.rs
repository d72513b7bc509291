use brownmap_core::constructions::{f_axis_derivatives, f_eval, inv_abs_sq_dy};
use brownmap_core::dyson::{solve_dyson, SolverOptions};
use brownmap_core::geometry::{kind_from, Kind};
use brownmap_core::model::{AtomMeasure, AtomicProfile};
use brownmap_core::rmt::{apportion, conjugation_defect, sample_spectrum, SampleOptions};
use brownmap_core::spectral::{beta_eval, beta_general, solve_edge_cubic};
use brownmap_core::Complex64;
use proptest::prelude::*;

fn profile_strategy() -> impl Strategy<Value = AtomicProfile> {
    (2usize..5)
        .prop_flat_map(|k| {
            (
                prop::collection::vec(0.1f64..1.0, k),
                prop::collection::vec((-1.5f64..1.5, -1.5f64..1.5), k),
                prop::collection::vec(prop::collection::vec(0.2f64..2.0, k), k),
            )
        })
        .prop_map(|(w, a, s)| {
            let total: f64 = w.iter().sum();
            let w: Vec<f64> = w.iter().map(|x| x / total).collect();
            let a = a.into_iter().map(|(x, y)| Complex64::new(x, y)).collect();
            AtomicProfile::new(w, a, s).unwrap()
        })
}

fn mirror_measure() -> impl Strategy<Value = AtomMeasure> {
    prop::collection::vec((0.1f64..2.0, -2.0f64..2.0, 0.1f64..1.0), 1..4).prop_map(|pairs| {
        let mut atoms = Vec::new();
        let mut masses = Vec::new();
        for (x, y, m) in pairs {
            atoms.push(Complex64::new(x, y));
            atoms.push(Complex64::new(-x, y));
            masses.extend([m, m]);
        }
        AtomMeasure::normalized(atoms, masses).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dyson_averages_agree(p in profile_strategy(), x in -2.0f64..2.0, y in -2.0f64..2.0, eta in 1e-3f64..1.0) {
        let s = solve_dyson(&p, Complex64::new(x, y), eta, &SolverOptions::default()).unwrap();
        let a1 = p.weighted_avg(&s.v1).unwrap();
        let a2 = p.weighted_avg(&s.v2).unwrap();
        prop_assert!((a1 - a2).abs() <= 1e-9 * a1.abs().max(1e-12), "{a1} vs {a2}");
        prop_assert!(s.v1.iter().chain(&s.v2).all(|v| *v > 0.0));
    }

    #[test]
    fn beta_sign_matches_perron_root(p in profile_strategy(), x in -2.5f64..2.5, y in -2.5f64..2.5) {
        let e = beta_eval(&p, Complex64::new(x, y)).unwrap();
        if let Some(lam) = e.lambda_pf {
            if (lam - 1.0).abs() > 1e-9 {
                prop_assert_eq!(e.beta < 0.0, lam > 1.0);
            }
        }
    }

    #[test]
    fn scalar_and_general_beta_agree(w in prop::collection::vec(0.1f64..1.0, 2..5), t in 0.3f64..3.0, x in -2.0f64..2.0, y in -2.0f64..2.0, seed in 0u64..1000) {
        let total: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|v| v / total).collect();
        let a = (0..w.len()).map(|i| Complex64::from_polar(1.0 + 0.1 * i as f64, (seed + 7 * i as u64) as f64)).collect();
        let p = AtomicProfile::scalar(w, a, t).unwrap();
        let z = Complex64::new(x, y);
        let b1 = beta_eval(&p, z).unwrap().beta;
        let b2 = beta_general(&p, z).unwrap().beta;
        prop_assert!((b1 - b2).abs() <= 1e-9 * (1.0 + b1.abs()), "{b1} vs {b2}");
    }

    #[test]
    fn circular_beta(x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let p = AtomicProfile::scalar(vec![1.0], vec![Complex64::new(0.0, 0.0)], 1.0).unwrap();
        let z = Complex64::new(x, y);
        prop_assert!((beta_eval(&p, z).unwrap().beta - (z.norm_sqr() - 1.0)).abs() <= 1e-10 * (1.0 + z.norm_sqr()));
    }

    #[test]
    fn f_is_mirror_symmetric(nu in mirror_measure(), x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let z = Complex64::new(x, y);
        let (a, b) = (f_eval(&nu, z), f_eval(&nu, -z.conj()));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
        let d = f_axis_derivatives(&nu, 3).unwrap();
        prop_assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn axis_derivatives_match_differences(x in 0.3f64..2.0, y in -2.0f64..2.0) {
        let w = Complex64::new(x, y);
        let g = |s: f64| 1.0 / (w + Complex64::new(0.0, s)).norm_sqr();
        let h = 1e-4;
        let d1 = (g(h) - g(-h)) / (2.0 * h);
        let d2 = (g(h) - 2.0 * g(0.0) + g(-h)) / (h * h);
        prop_assert!((inv_abs_sq_dy(w, 1) - d1).abs() <= 1e-5 * (1.0 + d1.abs()));
        prop_assert!((inv_abs_sq_dy(w, 2) - d2).abs() <= 1e-4 * (1.0 + d2.abs()));
    }

    #[test]
    fn edge_cubic_root(c3 in 0.1f64..10.0, c1 in 0.1f64..10.0, beta in -5.0f64..5.0, eta in 1e-10f64..1.0) {
        let x = solve_edge_cubic(c3, c1, beta, eta).unwrap();
        prop_assert!(x > 0.0);
        let scale = c3 * x.powi(3) + (beta * c1 * x).abs() + eta;
        prop_assert!((c3 * x.powi(3) + beta * c1 * x - eta).abs() <= 1e-12 * scale);
    }

    #[test]
    fn apportionment_is_fair(w in prop::collection::vec(0.05f64..1.0, 1..6), n in 40usize..2000) {
        let counts = apportion(&w, n).unwrap();
        let total: f64 = w.iter().sum();
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        for (c, wi) in counts.iter().zip(&w) {
            prop_assert!((*c as f64 - wi / total * n as f64).abs() < 1.0);
        }
    }

    #[test]
    fn kinds_follow_the_taxonomy(k in 2usize..12) {
        prop_assert_eq!(kind_from(Some(k), -1), Kind::Edge(k - 1));
        if k % 2 == 1 {
            prop_assert_eq!(kind_from(Some(k), 1), Kind::Edge(k - 1));
        } else {
            prop_assert_eq!(kind_from(Some(k), 1), Kind::Internal(k / 2));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn real_samples_are_reproducible_and_conjugate_closed(seed in 0u64..10_000, n in 8usize..40) {
        let p = AtomicProfile::scalar(vec![0.5, 0.5], vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)], 1.0).unwrap();
        let a = sample_spectrum(&p, "x2_minus_y2", n, seed, &SampleOptions::default()).unwrap();
        let b = sample_spectrum(&p, "x2_minus_y2", n, seed, &SampleOptions::default()).unwrap();
        prop_assert_eq!(&a.eigenvalues, &b.eigenvalues);
        prop_assert!(conjugation_defect(&a.eigenvalues) < 1e-8);
    }
}
