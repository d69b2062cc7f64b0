use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use stabcv::rng::{stream, Purpose};
use stabcv::weights::{
    optimize_weights, pvalue_from_draws, snr, stabilize, supremum_null_draws, supremum_null_pvalue,
    StabilizationConfig, WeightVector,
};

prop_compose! {
    fn spd(k: usize)(entries in prop::collection::vec(-1.0f64..1.0, k * k), ridge in 0.05f64..1.0)
        -> DMatrix<f64>
    {
        let l = DMatrix::from_row_slice(k, k, &entries);
        &l * l.transpose() + DMatrix::identity(k, k) * ridge
    }
}

fn problem() -> impl Strategy<Value = (DVector<f64>, DMatrix<f64>)> {
    (2usize..=4).prop_flat_map(|k| {
        (
            prop::collection::vec(-2.0f64..2.0, k).prop_map(DVector::from_vec),
            spd(k),
        )
    })
}

/// Brute-force argmax over a grid of the two-endpoint simplex.
fn grid_argmax(psi: &DVector<f64>, rho: &DMatrix<f64>, step: f64) -> f64 {
    let steps = (1.0 / step).round() as usize;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for s in 0..=steps {
        let a = s as f64 * step;
        let num = a * psi[0] + (1.0 - a) * psi[1];
        let var = a * a * rho[(0, 0)]
            + 2.0 * a * (1.0 - a) * rho[(0, 1)]
            + (1.0 - a).powi(2) * rho[(1, 1)];
        let r = num / var.sqrt();
        if r > best.0 {
            best = (r, a);
        }
    }
    best.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn optimum_dominates_vertices_and_reference((psi, rho) in problem()) {
        let k = psi.len();
        let (alpha, value) = optimize_weights(&psi, &rho).unwrap();
        prop_assert!(alpha.as_slice().iter().all(|&a| a >= 0.0));
        prop_assert!((alpha.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!((snr(&alpha, &psi, &rho).unwrap() - value).abs() <= 1e-9);
        for j in 0..k {
            prop_assert!(value >= snr(&WeightVector::vertex(k, j), &psi, &rho).unwrap() - 1e-9);
        }
        prop_assert!(value >= snr(&WeightVector::reference(k), &psi, &rho).unwrap() - 1e-9);
    }

    #[test]
    fn argmax_is_scale_invariant((psi, rho) in problem(), c in 0.01f64..100.0) {
        let (a, _) = optimize_weights(&psi, &rho).unwrap();
        let (b, _) = optimize_weights(&(&psi * c), &rho).unwrap();
        let (d, _) = optimize_weights(&psi, &(&rho * c)).unwrap();
        for j in 0..psi.len() {
            prop_assert!((a.get(j) - b.get(j)).abs() <= 1e-6);
            prop_assert!((a.get(j) - d.get(j)).abs() <= 1e-6);
        }
    }

    #[test]
    fn two_endpoint_optimum_matches_grid(
        psi in prop::collection::vec(-2.0f64..2.0, 2).prop_map(DVector::from_vec),
        rho in spd(2),
    ) {
        let (alpha, _) = optimize_weights(&psi, &rho).unwrap();
        let a = grid_argmax(&psi, &rho, 1e-4);
        prop_assert!((alpha.get(0) - a).abs() <= 1e-3, "optimizer {} grid {}", alpha.get(0), a);
    }

    #[test]
    fn pvalue_is_monotone_in_t(rho in spd(3), seed in any::<u64>()) {
        let cfg = StabilizationConfig::new(WeightVector::reference(3), 1.0, 1000).unwrap();
        let mut last = 1.0;
        for step in 0..40 {
            let t = -1.0 + 0.15 * step as f64;
            let p = supremum_null_pvalue(t, &rho, &cfg, &mut stream(seed, 0, Purpose::Custom(1))).unwrap();
            prop_assert!(p <= last);
            last = p;
        }
    }

    #[test]
    fn stabilize_is_truncated_convex_combination(
        raw in prop::collection::vec(0.0f64..1.0, 2..6),
        p in 1e-4f64..=1.0,
        n in 2usize..100_000,
        c in 1e-3f64..5.0,
    ) {
        prop_assume!(raw.iter().sum::<f64>() > 0.0);
        let k = raw.len();
        let adapt = WeightVector::normalized(raw).unwrap();
        let cfg = StabilizationConfig::new(WeightVector::reference(k), c, 1000).unwrap();
        let stab = stabilize(&adapt, p, n, &cfg).unwrap();
        let lambda = (c * (n as f64).ln() * p).min(1.0);
        if lambda >= 1.0 {
            prop_assert_eq!(&stab, cfg.alpha_ref());
        }
        for j in 0..k {
            let r = 1.0 / k as f64;
            prop_assert!((stab.get(j) - ((1.0 - lambda) * adapt.get(j) + lambda * r)).abs() <= 1e-12);
            prop_assert!(stab.get(j) >= adapt.get(j).min(r) - 1e-15);
            prop_assert!(stab.get(j) <= adapt.get(j).max(r) + 1e-15);
        }
    }
}

#[test]
fn correlated_two_endpoint_example() {
    let psi = DVector::from_vec(vec![0.8, 0.2]);
    let rho = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
    let (alpha, _) = optimize_weights(&psi, &rho).unwrap();
    assert!((alpha.get(0) - grid_argmax(&psi, &rho, 1e-4)).abs() <= 1e-3);
}

#[test]
fn supremum_pvalue_matches_large_monte_carlo() {
    // with rho = I the supremum over the quadrant is |z| inside it and the
    // larger coordinate outside
    let mut rng = stream(17, 0, Purpose::Custom(2));
    let big = 1_000_000;
    let mut hits = 0usize;
    for _ in 0..big {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let s = if z1 > 0.0 && z2 > 0.0 {
            z1.hypot(z2)
        } else {
            z1.max(z2)
        };
        if s >= 1.96 {
            hits += 1;
        }
    }
    let oracle = hits as f64 / big as f64;

    let rho = DMatrix::identity(2, 2);
    let b = 20_000;
    let draws = supremum_null_draws(
        &rho,
        b,
        &WeightVector::reference(2),
        &mut stream(18, 0, Purpose::Custom(3)),
    )
    .unwrap();
    let p = pvalue_from_draws(1.96, &draws);
    let se = (oracle * (1.0 - oracle) / b as f64).sqrt();
    assert!((p - oracle).abs() <= 3.0 * se, "p {p} oracle {oracle}");
}

#[test]
fn correlation_and_covariance_give_same_pvalue() {
    let cov = DMatrix::from_row_slice(2, 2, &[4.0, 0.6, 0.6, 0.25]);
    let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
    let cfg = StabilizationConfig::new(WeightVector::reference(2), 1.0, 2000).unwrap();
    for t in [0.5, 1.5, 2.5] {
        let a = supremum_null_pvalue(t, &cov, &cfg, &mut stream(5, 0, Purpose::Custom(4))).unwrap();
        let b =
            supremum_null_pvalue(t, &corr, &cfg, &mut stream(5, 0, Purpose::Custom(4))).unwrap();
        assert_eq!(a, b, "t = {t}");
    }
}
