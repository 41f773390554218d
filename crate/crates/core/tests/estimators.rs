use lowrate::distributions::{IncrementModel, Purpose, RngStream};
use lowrate::estimators::{
    estimate, fuse, overshoot_correct, weights_from_sigmas, Denominator, Estimate, EstimatorKind,
    Status,
};
use lowrate::renewal::{simulate_trace, SamplingScheme};
use proptest::prelude::*;

fn ok_estimate(kind: EstimatorKind, value: f64) -> Estimate {
    Estimate {
        kind,
        value,
        n_messages: 1,
        denominator: Denominator::LastSampleTime,
        status: Status::Ok,
        clamped: false,
    }
}

fn models() -> impl Strategy<Value = IncrementModel> {
    prop_oneof![
        (0.5f64..10.0, 0.1f64..10.0)
            .prop_map(|(mu, c)| IncrementModel::gaussian_curved(mu, c).unwrap()),
        (0.2f64..10.0, 0.1f64..5.0).prop_map(|(k, rate)| IncrementModel::gamma(k, rate).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decomposition_through_overshoots(seed in any::<u64>(), model in models(), delta in 0.5f64..80.0, t in 1u64..2000) {
        let tr = simulate_trace(&model, SamplingScheme::one_sided(delta).unwrap(), t, &RngStream::of(seed, 0, 0, Purpose::Walk), true).unwrap();
        let eta: f64 = tr.events.iter().map(|e| e.overshoot.unwrap()).sum();
        let v = |k| estimate(&tr, k).unwrap();
        let tilde = v(EstimatorKind::Tilde).value;
        let check = v(EstimatorKind::Check).value;
        prop_assert!((tilde - (check + eta / t as f64)).abs() <= 1e-9 * (1.0 + tilde.abs()));
        if tr.count() > 0 {
            let bar = v(EstimatorKind::Bar).value;
            let hat = v(EstimatorKind::Hat).value;
            prop_assert!((bar - (hat + eta / tr.last_time() as f64)).abs() <= 1e-9 * (1.0 + bar.abs()));
        } else {
            prop_assert_eq!(v(EstimatorKind::Bar).status, Status::NoSample);
        }
    }

    #[test]
    fn zero_overshoots_make_bar_and_hat_coincide(mu in 1u32..10, mult in 1u32..6, t in 1u64..500) {
        let mu = mu as f64;
        let m = IncrementModel::deterministic(mu).unwrap();
        let tr = simulate_trace(&m, SamplingScheme::one_sided(mu * mult as f64).unwrap(), t, &RngStream::of(1, 0, 0, Purpose::Walk), true).unwrap();
        prop_assert!(tr.events.iter().all(|e| e.overshoot == Some(0.0)));
        if tr.count() > 0 {
            let bar = estimate(&tr, EstimatorKind::Bar).unwrap().value;
            let hat = estimate(&tr, EstimatorKind::Hat).unwrap().value;
            prop_assert_eq!(bar, hat);
            prop_assert!((bar - mu).abs() < 1e-9 * mu);
        }
    }

    #[test]
    fn correction_is_increasing(model in models(), delta in 1.0f64..1e4, x in 0.01f64..50.0, dx in 1e-6f64..10.0) {
        let g = |v| overshoot_correct(&ok_estimate(EstimatorKind::Hat, v), delta, &model).unwrap().value;
        let (a, b) = (g(x), g(x + dx));
        prop_assert!(a > 0.0 && b > a);
    }

    #[test]
    fn fuse_is_affine(values in prop::collection::vec(-100.0f64..100.0, 1..8), a in -5.0f64..5.0, b in -50.0f64..50.0, sigma_seed in 0.1f64..10.0) {
        let sigmas: Vec<f64> = (0..values.len()).map(|i| sigma_seed * (1.0 + i as f64 * 0.37)).collect();
        let w = weights_from_sigmas(&sigmas).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let est: Vec<Estimate> = values.iter().map(|&v| ok_estimate(EstimatorKind::Hat, v)).collect();
        let shifted: Vec<Estimate> = values.iter().map(|&v| ok_estimate(EstimatorKind::Hat, a * v + b)).collect();
        let lhs = fuse(&shifted, &w).unwrap().value;
        let rhs = a * fuse(&est, &w).unwrap().value + b;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
    }
}
