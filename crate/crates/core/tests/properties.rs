mod common;

use dosecurve_core::harness::roc_curve;
use dosecurve_core::inference::{critical_value_from_statistics, rejection_rate};
use dosecurve_core::posterior::{ObjectiveSpec, PriorSet};
use dosecurve_core::shapes::{calibrate_shape, true_med, ShapeFamily};
use dosecurve_core::solver::map_fit;
use dosecurve_core::transform::ModelKind;
use dosecurve_core::SolverOptions;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DOSES: [f64; 5] = [0.0, 0.15, 0.5, 0.8, 1.0];

fn kind_strategy() -> impl Strategy<Value = ModelKind> {
    prop_oneof![Just(ModelKind::Identity), Just(ModelKind::SigmoidEmax)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fits_are_deterministic_and_restart_dominant(data_seed in any::<u64>(), solver_seed in any::<u64>(), kind in kind_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
        let data = common::random_dataset(&mut rng, &DOSES, 0.0, 0.6, 20);
        let tau = if kind == ModelKind::Identity { 3.0 } else { 0.5 };
        let spec = ObjectiveSpec::new(common::grid(&DOSES), kind, PriorSet::standard(tau));
        let opts = |restarts| SolverOptions { restarts, seed: solver_seed, max_iter: 200, ..SolverOptions::default() };
        let first = map_fit(&spec, &data, None, &opts(3)).unwrap();
        let again = map_fit(&spec, &data, None, &opts(3)).unwrap();
        prop_assert_eq!(&first, &again);
        let mut last = f64::NEG_INFINITY;
        for k in 1..=4 {
            let fit = map_fit(&spec, &data, None, &opts(k)).unwrap();
            prop_assert!(fit.objective >= last);
            last = fit.objective;
        }
    }
}

proptest! {
    #[test]
    fn calibration_exceedance_brackets_alpha(
        stats in prop::collection::vec(-1.0f64..1.0, 100..400),
        alpha in 0.02f64..0.5,
    ) {
        prop_assume!(alpha * stats.len() as f64 >= 5.0);
        let c = critical_value_from_statistics(&stats, alpha).unwrap();
        let rate = rejection_rate(&stats, c);
        prop_assert!(rate < alpha);
        prop_assert!(rate >= alpha - 1.0 / stats.len() as f64 - 1e-12);
    }

    #[test]
    fn roc_rates_fall_as_threshold_rises(
        null in prop::collection::vec(-1.0f64..1.0, 1..60),
        alt in prop::collection::vec(-0.5f64..1.5, 1..60),
    ) {
        let mut points = roc_curve(&null, &alt, None).unwrap();
        points.sort_by(|a, b| a.c.partial_cmp(&b.c).unwrap());
        for w in points.windows(2) {
            prop_assert!(w[1].fpr <= w[0].fpr && w[1].tpr <= w[0].tpr);
        }
    }

    #[test]
    fn shape_calibration_round_trips(family in prop::sample::select(ShapeFamily::ALL.to_vec()), shift in -0.03f64..0.03) {
        let target = family.reference_med() + shift;
        prop_assume!(target > 0.02 && target < 0.98);
        if let Ok(spec) = calibrate_shape(family, target, 0.3) {
            prop_assert!((true_med(&spec, 0.3).unwrap() - target).abs() <= 1e-6);
        }
    }
}
