use lowrate::distributions::{IncrementModel, Purpose, RngStream};
use lowrate::estimators::EstimatorKind;
use lowrate::harness::{ks_distance, re_sweep, ExperimentSpec, SchemeTemplate};

fn spec(
    template: SchemeTemplate,
    grid: Vec<f64>,
    kinds: Vec<EstimatorKind>,
    reps: usize,
    seed: u64,
) -> ExperimentSpec {
    ExperimentSpec {
        id: "test".into(),
        model: IncrementModel::gaussian_curved(4.0, 4.0).unwrap(),
        template,
        delta_grid: grid,
        t: 300,
        estimators: kinds,
        reps,
        seed,
    }
}

#[test]
fn ks_of_normal_draws() {
    let m = IncrementModel::gaussian(0.0, 1.0).unwrap();
    let mut s = RngStream::of(51, 0, 0, Purpose::Walk);
    let xs: Vec<f64> = (0..10_000).map(|_| m.sample(&mut s)).collect();
    let ks = ks_distance(&xs).unwrap();
    assert!(ks < 0.0136, "{ks}");
}

#[test]
fn bar_is_efficient_under_frequent_exponential_sampling() {
    let table = re_sweep(&spec(
        SchemeTemplate::Exponential,
        vec![2.0],
        vec![EstimatorKind::Bar],
        100_000,
        52,
    ))
    .unwrap();
    let row = table.row(EstimatorKind::Bar, 2.0).unwrap();
    assert!(
        (row.re - 1.0).abs() <= 3.0 * row.se_re,
        "{} (se {})",
        row.re,
        row.se_re
    );
}

#[test]
fn bar_and_tilde_coincide_on_divisor_grids() {
    let mut s = spec(
        SchemeTemplate::Deterministic,
        vec![2.0, 3.0, 5.0],
        vec![EstimatorKind::Bar, EstimatorKind::Tilde],
        500,
        53,
    );
    s.t = 300;
    let table = re_sweep(&s).unwrap();
    for d in table.grid() {
        let (b, t) = (
            table.row(EstimatorKind::Bar, d).unwrap(),
            table.row(EstimatorKind::Tilde, d).unwrap(),
        );
        assert!(
            (b.re - t.re).abs() <= 1e-12 * (1.0 + b.re),
            "{d}: {} vs {}",
            b.re,
            t.re
        );
    }
}

#[test]
fn sweep_is_identical_across_thread_counts() {
    let s = spec(
        SchemeTemplate::HittingOneSided,
        vec![2.0, 10.0, 40.0],
        EstimatorKind::DRIFT.to_vec(),
        3000,
        54,
    );
    let csv = |threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let table = pool.install(|| re_sweep(&s)).unwrap();
        let mut out = Vec::new();
        table.write_csv(&mut out).unwrap();
        out
    };
    let one = csv(1);
    assert_eq!(one, csv(3));
    assert_eq!(one, csv(8));
}

#[test]
fn every_row_carries_an_se() {
    let table = re_sweep(&spec(
        SchemeTemplate::Geometric,
        vec![5.0, 20.0],
        vec![EstimatorKind::Bar, EstimatorKind::Tilde],
        2000,
        55,
    ))
    .unwrap();
    for d in table.grid() {
        for k in [EstimatorKind::Bar, EstimatorKind::Tilde] {
            let r = table.row(k, d).unwrap();
            assert!(r.se_re.is_finite() && r.se_re >= 0.0 && r.re >= 0.0);
            assert!((0.0..=1.0).contains(&r.excluded_frac));
        }
    }
}
