use proptest::prelude::*;
use stabcv::cv::{
    fixed_weight_cvtmle, make_folds, pooled_target, run_fold, run_folds, stabilized_cvtmle_test,
    stabilized_cvtmle_with_plan, CvConfig, FoldPlan, Targeting,
};
use stabcv::dgp::{gen_study1, Study1Config};
use stabcv::rng::{stream, Purpose, Streams};
use stabcv::{StabilizationConfig, TrialDataset, WeightVector};

fn trial(seed: u64, n: usize, beta: [f64; 2]) -> TrialDataset {
    let cfg = Study1Config::new(n, beta).unwrap();
    gen_study1(&cfg, &mut stream(seed, 0, Purpose::Data))
        .unwrap()
        .dataset
}

fn cv_config(c: f64, v: usize) -> CvConfig {
    let stab = StabilizationConfig::new(WeightVector::reference(2), c, 1000).unwrap();
    CvConfig::new(stab, v, 0.025).unwrap()
}

fn setup() -> impl Strategy<Value = (TrialDataset, FoldPlan, Streams)> {
    (
        any::<u64>(),
        30usize..120,
        -1.0f64..1.5,
        -1.0f64..1.5,
        2usize..=10,
    )
        .prop_map(|(seed, n, b1, b2, v)| {
            let data = trial(seed, n, [b1, b2]);
            let streams = Streams::new(seed, 1);
            let plan = make_folds(n, v, &mut streams.get(Purpose::Folds)).unwrap();
            (data, plan, streams)
        })
}

fn ic_mean_over_sd(ic: &[f64]) -> f64 {
    let n = ic.len() as f64;
    let m = ic.iter().sum::<f64>() / n;
    let sd = (ic.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    m.abs() / sd
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pooled_score_equation((data, plan, streams) in setup()) {
        let cfg = cv_config(0.25, plan.v_folds());
        let folds = run_folds(&data, &plan, &cfg.stabilization, &streams).unwrap();
        let target = pooled_target(&folds, &data, Targeting::Pooled).unwrap();
        prop_assert!(ic_mean_over_sd(target.ic_cv.as_slice()) <= 1e-8);
    }

    #[test]
    fn fold_specific_targeting_zeroes_each_fold((data, plan, streams) in setup()) {
        let cfg = cv_config(0.25, plan.v_folds());
        let folds = run_folds(&data, &plan, &cfg.stabilization, &streams).unwrap();
        let target = pooled_target(&folds, &data, Targeting::FoldSpecific).unwrap();
        prop_assert!(ic_mean_over_sd(target.ic_cv.as_slice()) <= 1e-8);
        for v in 0..plan.v_folds() {
            let idx = plan.validation(v);
            let m = idx.iter().map(|&i| target.ic_cv[i]).sum::<f64>() / idx.len() as f64;
            let sd = (target.ic_cv.iter().map(|x| x * x).sum::<f64>() / data.n() as f64).sqrt();
            prop_assert!(m.abs() <= 1e-8 * sd.max(1e-300), "fold {} mean {}", v, m);
        }
    }

    #[test]
    fn fold_outputs_are_valid((data, plan, streams) in setup()) {
        let r = stabilized_cvtmle_with_plan(&data, &plan, &cv_config(0.25, plan.v_folds()), &streams).unwrap();
        prop_assert_eq!(r.fold_weights.len(), plan.v_folds());
        for w in &r.fold_weights {
            prop_assert!(w.as_slice().iter().all(|&x| x >= 0.0));
            prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        prop_assert!(r.fold_pvalues.iter().all(|&p| p > 0.0 && p <= 1.0));
        if r.sigma_cv > 0.0 {
            let t = (data.n() as f64).sqrt() * r.psi_cv / r.sigma_cv;
            prop_assert!((t - r.t_cv).abs() <= 1e-12 * t.abs().max(1.0));
        }
        prop_assert_eq!(r.reject, r.t_cv > r.critical);
    }

    #[test]
    fn infinite_c_is_fixed_reference((data, plan, streams) in setup()) {
        let cfg = cv_config(1e12, plan.v_folds());
        let stab = stabilized_cvtmle_with_plan(&data, &plan, &cfg, &streams).unwrap();
        let fixed = fixed_weight_cvtmle(&data, &plan, &WeightVector::reference(2), &cfg).unwrap();
        prop_assert_eq!(stab.t_cv, fixed.t_cv);
        prop_assert_eq!(stab.psi_cv, fixed.psi_cv);
    }

    #[test]
    fn larger_c_moves_toward_reference(
        (data, plan, streams) in setup(),
        c1 in 0.01f64..2.0,
        factor in 1.0f64..10.0,
    ) {
        let lo = stabilized_cvtmle_with_plan(&data, &plan, &cv_config(c1, plan.v_folds()), &streams).unwrap();
        let hi = stabilized_cvtmle_with_plan(&data, &plan, &cv_config(c1 * factor, plan.v_folds()), &streams).unwrap();
        for (a, b) in lo.fold_weights.iter().zip(&hi.fold_weights) {
            for j in 0..2 {
                prop_assert!((b.get(j) - 0.5).abs() <= (a.get(j) - 0.5).abs() + 1e-15);
            }
        }
    }

    #[test]
    fn validation_outcomes_do_not_leak_into_training(
        (data, plan, streams) in setup(),
        bump in -50.0f64..50.0,
    ) {
        let cfg = cv_config(0.25, plan.v_folds());
        let v = 0;
        let i = plan.validation(v)[0];
        let mut y = data.outcomes().clone();
        y[(i, 0)] += bump;
        y[(i, 1)] -= bump;
        let perturbed = data.with_outcomes(y).unwrap();
        let run = |d: &TrialDataset| {
            run_fold(d, &plan, v, &cfg.stabilization, &mut streams.get(Purpose::NullDraws { fold: v as u32 })).unwrap()
        };
        let (a, b) = (run(&data), run(&perturbed));
        prop_assert_eq!(a.summary.alpha_adapt, b.summary.alpha_adapt);
        prop_assert_eq!(a.summary.t_star, b.summary.t_star);
        prop_assert_eq!(a.summary.p_value, b.summary.p_value);
    }
}

#[test]
fn identical_inputs_identical_result() {
    let data = trial(11, 50, [0.8, 0.2]);
    let cfg = cv_config(0.25, 10);
    let a = stabilized_cvtmle_test(&data, &cfg, &Streams::new(202701, 4)).unwrap();
    let b = stabilized_cvtmle_test(&data, &cfg, &Streams::new(202701, 4)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn strong_benefit_rejects_and_harm_rarely_does() {
    let cfg = cv_config(0.25, 10);
    let strong = trial(2, 200, [1.0, 0.5]);
    assert!(
        stabilized_cvtmle_test(&strong, &cfg, &Streams::new(1, 0))
            .unwrap()
            .reject
    );

    let mut rejections = 0;
    for r in 0..100 {
        let data = trial(1000 + r, 100, [-0.5, -0.5]);
        rejections += usize::from(
            stabilized_cvtmle_test(&data, &cfg, &Streams::new(3, r))
                .unwrap()
                .reject,
        );
    }
    assert!(
        rejections <= 2,
        "{rejections} rejections under a harmful effect"
    );
}
