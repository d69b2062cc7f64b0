use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use stabcv::dgp::{gen_study1, Study1Config, Study1Scenario};
use stabcv::rng::{stream, Purpose};
use stabcv::tmle::{composite_ic, estimate_all_endpoints, fit_outcome_regression, tmle_ate};
use stabcv::{TrialDataset, WeightVector};

prop_compose! {
    fn dataset()(n in 12usize..80, d in 1usize..4, k in 2usize..4)
        (w in prop::collection::vec(-3.0f64..3.0, n * d),
         y in prop::collection::vec(-5.0f64..5.0, n * k),
         effect in prop::collection::vec(-2.0f64..2.0, k),
         arm in prop::collection::vec(any::<bool>(), n),
         g1 in 0.2f64..0.8,
         n in Just(n), d in Just(d), k in Just(k))
        -> TrialDataset
    {
        let mut arm: Vec<u8> = arm.into_iter().map(u8::from).collect();
        arm[0] = 0; arm[1] = 0; arm[2] = 1; arm[3] = 1;
        let w = DMatrix::from_row_slice(n, d, &w);
        let y = DMatrix::from_fn(n, k, |i, j| {
            y[i * k + j] + effect[j] * f64::from(arm[i]) + 0.5 * w[(i, 0)]
        });
        TrialDataset::new(w, arm, y, g1).unwrap()
    }
}

fn aipw(data: &TrialDataset, k: usize) -> f64 {
    // closed form with an independently solved least-squares fit
    let (n, d) = (data.n(), data.d());
    let x = DMatrix::from_fn(n, d + 2, |i, j| match j {
        0 => 1.0,
        j if j <= d => data.covariates()[(i, j - 1)],
        _ => f64::from(data.arm()[i]),
    });
    let y = data.outcomes().column(k).into_owned();
    let b = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let g = data.propensity();
    let mut total = 0.0;
    for i in 0..n {
        let base = b[0]
            + (0..d)
                .map(|j| b[j + 1] * data.covariates()[(i, j)])
                .sum::<f64>();
        let (q0, q1) = (base, base + b[d + 1]);
        let a = data.arm()[i];
        let (qa, h) = if a == 1 {
            (q1, 1.0 / g)
        } else {
            (q0, -1.0 / (1.0 - g))
        };
        total += h * (data.outcomes()[(i, k)] - qa) + q1 - q0;
    }
    total / n as f64
}

fn sd(x: &DVector<f64>) -> f64 {
    let m = x.mean();
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn tmle_equals_aipw(data in dataset()) {
        for k in 0..data.k() {
            let fit = tmle_ate(&data, k).unwrap();
            prop_assert!((fit.psi - aipw(&data, k)).abs() <= 1e-10);
        }
    }

    #[test]
    fn score_equation_holds(data in dataset()) {
        let est = estimate_all_endpoints(&data).unwrap();
        for k in 0..data.k() {
            let col = est.ic.column(k).into_owned();
            prop_assert!(col.mean().abs() <= 1e-8 * sd(&col).max(1e-300));
        }
    }

    #[test]
    fn composite_variance_is_quadratic_form(
        data in dataset(),
        raw in prop::collection::vec(0.01f64..1.0, 3),
    ) {
        let est = estimate_all_endpoints(&data).unwrap();
        let alpha = WeightVector::normalized(raw[..data.k()].to_vec()).unwrap();
        let ic = composite_ic(&alpha, &est).unwrap();
        let var = sd(&ic).powi(2);
        let quad = (alpha.as_vector().transpose() * &est.rho * alpha.as_vector())[(0, 0)];
        prop_assert!((var - quad).abs() <= 1e-10 * quad.max(1.0));
    }

    #[test]
    fn rho_is_symmetric_psd(data in dataset()) {
        let est = estimate_all_endpoints(&data).unwrap();
        prop_assert_eq!(est.rho.clone(), est.rho.transpose());
        let eig = est.rho.clone().symmetric_eigen();
        prop_assert!(eig.eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn label_swap_antisymmetry(data in dataset()) {
        let flipped_arm: Vec<u8> = data.arm().iter().map(|a| 1 - a).collect();
        let swapped = data
            .with_arm(flipped_arm, 1.0 - data.propensity())
            .unwrap()
            .with_outcomes(-data.outcomes().clone())
            .unwrap();
        for k in 0..data.k() {
            let a = tmle_ate(&data, k).unwrap().psi;
            let b = tmle_ate(&swapped, k).unwrap().psi;
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }
}

#[test]
fn noiseless_fit_recovers_generating_coefficients() {
    let mut cfg = Study1Config::scenario(60, Study1Scenario::S2).unwrap();
    cfg.noise_sd = 0.0;
    let data = gen_study1(&cfg, &mut stream(3, 0, Purpose::Data))
        .unwrap()
        .dataset;
    let b = fit_outcome_regression(&data, 0).unwrap().coefficients;
    for (got, want) in b.iter().zip([1.0, -0.1, 0.6, 1.0]) {
        assert!((got - want).abs() < 1e-10, "{b}");
    }
}

#[test]
fn large_sample_estimate_near_truth() {
    let cfg = Study1Config::scenario(50_000, Study1Scenario::S2).unwrap();
    let data = gen_study1(&cfg, &mut stream(202701, 0, Purpose::Data))
        .unwrap()
        .dataset;
    let fit = tmle_ate(&data, 0).unwrap();
    let se = (fit.ic.iter().map(|x| x * x).sum::<f64>() / data.n() as f64 / data.n() as f64).sqrt();
    assert!((fit.psi - 1.0).abs() <= 3.0 * se, "psi {} se {se}", fit.psi);
}

#[test]
fn independent_noise_endpoints_are_uncorrelated() {
    let cfg = Study1Config::scenario(20_000, Study1Scenario::S1).unwrap();
    let data = gen_study1(&cfg, &mut stream(8, 0, Purpose::Data))
        .unwrap()
        .dataset;
    let rho = estimate_all_endpoints(&data).unwrap().rho;
    let corr = rho[(0, 1)] / (rho[(0, 0)] * rho[(1, 1)]).sqrt();
    assert!(corr.abs() <= 3.0 / (data.n() as f64).sqrt(), "corr {corr}");
}
