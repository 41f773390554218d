use lowrate::distributions::{rho_closed_form, IncrementModel, Purpose, RngStream};
use lowrate::renewal::{
    first_passage, simulate_second_moment_trace, simulate_trace, trace_stats, HittingInterarrival,
    Interarrival, PathWalker, SamplingScheme, TraceKind,
};
use lowrate::stats::Running;
use proptest::prelude::*;
use rayon::prelude::*;

fn curved() -> IncrementModel {
    IncrementModel::gaussian_curved(4.0, 4.0).unwrap()
}

#[test]
fn first_sampling_time_obeys_wald() {
    let delta = 400.0;
    let taus: Running = (0..100_000u64)
        .into_par_iter()
        .map(|rep| {
            let stream = RngStream::of(31, rep, 0, Purpose::Walk);
            let mut w = PathWalker::new(
                &curved(),
                SamplingScheme::one_sided(delta).unwrap(),
                &stream,
            );
            w.next_event(10_000).expect("hit before the horizon").time as f64
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    let expected = (delta + rho_closed_form(&curved()).unwrap()) / 4.0;
    assert!(
        (taus.mean() - expected).abs() <= 3.0 * taus.se(),
        "{} vs {expected}",
        taus.mean()
    );
}

#[test]
fn exponential_first_passage_count() {
    let m = IncrementModel::gamma(1.0, 1.0).unwrap();
    let nu: Running = (0..100_000u64)
        .into_par_iter()
        .map(|rep| {
            let mut s = RngStream::of(32, rep, 0, Purpose::FirstPassage);
            first_passage(&m, 100.0, &mut s).unwrap().index as f64
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    assert!((nu.mean() - 101.0).abs() <= 3.0 * nu.se(), "{}", nu.mean());
}

#[test]
fn second_moment_walk_recovers_e_x2() {
    let (gamma, t) = (1e4, 100_000u64);
    let ratios: Vec<f64> = (0..1000u64)
        .into_par_iter()
        .map(|rep| {
            let z = simulate_second_moment_trace(
                &curved(),
                gamma,
                t,
                &RngStream::of(33, rep, 0, Purpose::Walk),
            )
            .unwrap();
            gamma * z.count() as f64 / z.last_time() as f64
        })
        .collect();
    let mean: Running = ratios.into_iter().collect();
    assert!((mean.mean() / 80.0 - 1.0).abs() < 0.05, "{}", mean.mean());
}

#[test]
fn hitting_interarrival_variance_is_linear_in_threshold() {
    let delta = 1e4;
    let h = HittingInterarrival::new(curved(), delta).unwrap();
    let taus: Running = (0..10_000u64)
        .into_par_iter()
        .map(|rep| {
            let stream = RngStream::of(34, rep, 0, Purpose::Walk);
            let mut w = PathWalker::new(
                &curved(),
                SamplingScheme::one_sided(delta).unwrap(),
                &stream,
            );
            w.next_event(u64::MAX).unwrap().time as f64
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    assert!(
        (taus.variance() / h.approx_variance() - 1.0).abs() < 0.1,
        "{}",
        taus.variance()
    );
}

#[test]
fn exogenous_trace_counts_match_interarrivals() {
    let ia = Interarrival::geometric(20.0).unwrap();
    let stream = RngStream::of(35, 0, 0, Purpose::Walk);
    let tr = simulate_trace(
        &curved(),
        SamplingScheme::Exogenous(ia),
        10_000,
        &stream,
        false,
    )
    .unwrap();
    let fp = first_passage(
        &ia,
        10_000.0,
        &mut stream.with_purpose(Purpose::Interarrival),
    )
    .unwrap();
    assert_eq!(fp.index as usize, tr.count() + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_sided_trace_invariants(seed in any::<u64>(), delta in 1.0f64..200.0, t in 1u64..3000) {
        let tr = simulate_trace(&curved(), SamplingScheme::one_sided(delta).unwrap(), t, &RngStream::of(seed, 0, 0, Purpose::Walk), true).unwrap();
        let mut prev = (0u64, 0.0f64);
        let mut eta_sum = 0.0;
        for e in &tr.events {
            prop_assert!(e.time > prev.0 && e.time <= t);
            let eta = e.overshoot.unwrap();
            prop_assert!(eta >= 0.0);
            let v = e.value.unwrap();
            prop_assert!((v - prev.1 - (delta + eta)).abs() <= 1e-9 * (1.0 + v.abs()));
            eta_sum += eta;
            prev = (e.time, v);
        }
        let st = trace_stats(&tr);
        prop_assert_eq!(st.count, tr.count());
        prop_assert!((st.overshoot_sum.unwrap() - eta_sum).abs() <= 1e-9 * (1.0 + eta_sum));
        prop_assert_eq!(st.last_time, tr.last_time());
        prop_assert_eq!(st.age, t - tr.last_time());
        // recovery identity
        let recovered = tr.count() as f64 * delta + eta_sum;
        prop_assert!((tr.last_value().unwrap() - recovered).abs() <= 1e-9 * (1.0 + recovered.abs()));
    }

    #[test]
    fn two_sided_trace_invariants(seed in any::<u64>(), delta in 1.0f64..60.0) {
        let m = IncrementModel::gaussian(0.5, 8.0).unwrap();
        let tr = simulate_trace(&m, SamplingScheme::two_sided(delta).unwrap(), 2000, &RngStream::of(seed, 0, 0, Purpose::Walk), true).unwrap();
        prop_assert_eq!(tr.kind, TraceKind::TwoSided);
        let mut prev = 0.0;
        for e in &tr.events {
            let inc = e.value.unwrap() - prev;
            prop_assert!((inc.abs() - (delta + e.overshoot.unwrap())).abs() <= 1e-9 * (1.0 + inc.abs()));
            prop_assert_eq!(e.bit, inc >= delta);
            prev = e.value.unwrap();
        }
    }

    #[test]
    fn passage_count_is_events_plus_one(seed in any::<u64>(), delta in 1.0f64..50.0, t in 1u64..2000) {
        let m = IncrementModel::gamma(2.0, 0.5).unwrap();
        let stream = RngStream::of(seed, 1, 0, Purpose::Walk);
        let tr = simulate_trace(&m, SamplingScheme::one_sided(delta).unwrap(), t, &stream, false).unwrap();
        let h = HittingInterarrival::new(m, delta).unwrap();
        let fp = first_passage(&h, t as f64, &mut stream.clone()).unwrap();
        prop_assert_eq!(fp.index as usize, tr.count() + 1);
    }

    #[test]
    fn observation_does_not_change_times(seed in any::<u64>(), delta in 1.0f64..100.0) {
        let s = RngStream::of(seed, 0, 0, Purpose::Walk);
        let a = simulate_trace(&curved(), SamplingScheme::one_sided(delta).unwrap(), 500, &s, true).unwrap();
        let b = simulate_trace(&curved(), SamplingScheme::one_sided(delta).unwrap(), 500, &s, false).unwrap();
        prop_assert_eq!(a.bit_channel(), b);
    }
}
