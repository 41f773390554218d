use lowrate::distributions::IncrementModel;
use lowrate::estimators::EstimatorKind;
use lowrate::fusion::{
    message_log_sufficient, network_clt_sample, run_network, Network, SensorSpec, WeightRule,
};
use lowrate::harness::{clt_diagnostic, CltSpec};
use lowrate::renewal::SamplingScheme;
use lowrate::stats::Running;
use proptest::prelude::*;

fn curved_sd(sd: f64) -> IncrementModel {
    IncrementModel::gaussian_curved(4.0, (sd / 4.0).powi(2)).unwrap()
}

fn network(sds: &[f64], thresholds: &[f64]) -> Network {
    let sensors = sds
        .iter()
        .zip(thresholds)
        .enumerate()
        .map(|(k, (&sd, &d))| SensorSpec::new(k as u32, curved_sd(sd), d, None).unwrap())
        .collect();
    Network::new(sensors, WeightRule::InverseVariance, false).unwrap()
}

#[test]
fn fused_variance_matches_weighted_scale() {
    let t = 10_000u64;
    let d = 4.0 * (t as f64).powf(0.7);
    let net = network(&[4.0, 4.0, 8.0, 8.0, 16.0], &[d; 5]);
    let s = network_clt_sample(&net, t, 2000, 41, false).unwrap();
    let v: Running = s.values.iter().copied().collect();
    assert!((v.variance() - 1.0).abs() < 0.1, "{}", v.variance());
}

#[test]
fn heterogeneous_standardized_variance() {
    let t = 100_000u64;
    let d = 4.0 * (t as f64).powf(0.7);
    let net = network(&[4.0, 8.0, 16.0], &[d; 3]);
    let s = network_clt_sample(&net, t, 1000, 42, false).unwrap();
    let v: Running = s.values.iter().copied().collect();
    assert!((v.variance() - 1.0).abs() <= 0.15, "{}", v.variance());
}

#[test]
fn single_sensor_equals_clt_path() {
    let t = 20_000u64;
    let d = 4.0 * (t as f64).powf(0.7);
    let net = network(&[8.0], &[d]);
    let s = network_clt_sample(&net, t, 200, 43, false).unwrap();
    let r = clt_diagnostic(&CltSpec {
        model: curved_sd(8.0),
        scheme: SamplingScheme::one_sided(d).unwrap(),
        t,
        kind: EstimatorKind::Hat,
        reps: 200,
        seed: 43,
        sigma_gamma: None,
    })
    .unwrap();
    assert_eq!(s.values.len(), r.values.len());
    for (a, b) in s.values.iter().zip(&r.values) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn pooled_scale_differs_for_several_sensors() {
    let net = network(&[8.0; 5], &[100.0; 5]);
    let ratio = net.pooled_scale() / net.fused_scale();
    assert!((ratio - 5.0).abs() < 1e-12, "{ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn permutation_leaves_fusion_unchanged(seed in any::<u64>(), rot in 1usize..4) {
        let sds = [4.0, 8.0, 16.0, 6.0];
        let ds = [40.0, 60.0, 90.0, 50.0];
        let net = network(&sds, &ds);
        let mut sensors = net.sensors.clone();
        sensors.rotate_left(rot);
        let permuted = Network::new(sensors, WeightRule::InverseVariance, false).unwrap();
        let a = run_network(&net, &[300, 1000], seed, 0).unwrap();
        let b = run_network(&permuted, &[300, 1000], seed, 0).unwrap();
        for (ca, cb) in a.checkpoints.iter().zip(&b.checkpoints) {
            prop_assert_eq!(ca.total_bits, cb.total_bits);
            for kind in [EstimatorKind::Hat, EstimatorKind::Check, EstimatorKind::GHat, EstimatorKind::GCheck] {
                let (x, y) = (ca.fused(kind).unwrap(), cb.fused(kind).unwrap());
                prop_assert!(x.value == y.value || (x.value - y.value).abs() <= 1e-12 * (1.0 + x.value.abs()));
            }
            for (k, est) in ca.per_sensor.iter().enumerate() {
                let j = (k + sds.len() - rot) % sds.len();
                prop_assert_eq!(est, &cb.per_sensor[j]);
            }
        }
    }

    #[test]
    fn other_thresholds_do_not_touch_a_trace(seed in any::<u64>(), d1 in 5.0f64..200.0) {
        let a = run_network(&network(&[8.0, 8.0], &[50.0, 50.0]), &[800], seed, 3).unwrap();
        let b = run_network(&network(&[8.0, 8.0], &[50.0, d1]), &[800], seed, 3).unwrap();
        prop_assert_eq!(&a.logs[0], &b.logs[0]);
    }

    #[test]
    fn message_logs_suffice(seed in any::<u64>(), rep in 0u64..1000) {
        let sensors = vec![
            SensorSpec::new(0, curved_sd(8.0), 40.0, Some(400.0)).unwrap(),
            SensorSpec::new(1, curved_sd(8.0), 70.0, Some(900.0)).unwrap(),
        ];
        let net = Network::new(sensors, WeightRule::Equal, false).unwrap();
        let run = run_network(&net, &[200, 600], seed, rep).unwrap();
        prop_assert!(message_log_sufficient(&net, &run, seed, rep).unwrap());
        let bits: u64 = run.logs.iter().map(|l| (l.trace.count() + l.squares.as_ref().unwrap().count()) as u64).sum();
        prop_assert_eq!(run.checkpoints[1].total_bits, bits);
    }
}
