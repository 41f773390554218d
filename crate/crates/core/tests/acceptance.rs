//! Acceptance criteria. Each test prints one PASS/FAIL line and then
//! asserts it. Seeds are fixed per criterion.

use std::io::Write;
use std::time::{Duration, Instant};

use lowrate::distributions::{
    ladder_height_moments, rho_closed_form, IncrementModel, Purpose, RngStream,
};
use lowrate::estimators::{estimate, EstimatorKind};
use lowrate::fusion::{network_clt_sample, Network, SensorSpec, WeightRule};
use lowrate::harness::{
    clt_diagnostic, ordering_report, re_sweep, sigma_consistency, CltSpec, ExperimentSpec,
    SchemeTemplate,
};
use lowrate::renewal::{first_passage, simulate_trace, Interarrival, SamplingScheme};
use lowrate::stats::Running;
use lowrate::theory::{
    anscombe_ratio, exogenous_age, lorden_bounds, lr_error_table, wald_residuals, LrFamily,
};
use rayon::prelude::*;

fn verdict(n: u32, name: &str, pass: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let within = elapsed < limit;
    let ok = pass && within;
    let line = format!(
        "criterion {n:>2} {:<4} {name}: {detail} [{:.1}s, limit {}s]\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    // bypass the test harness capture so the line is always shown
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
    assert!(within, "criterion {n} exceeded its runtime limit");
}

fn curved() -> IncrementModel {
    IncrementModel::gaussian_curved(4.0, 4.0).unwrap()
}

#[test]
fn criterion_01_deterministic_exactness() {
    let start = Instant::now();
    let m = IncrementModel::deterministic(4.0).unwrap();
    let tr = simulate_trace(
        &m,
        SamplingScheme::one_sided(8.0).unwrap(),
        7,
        &RngStream::of(1001, 0, 0, Purpose::Walk),
        true,
    )
    .unwrap();
    let v = |k| estimate(&tr, k).unwrap().value;
    let (hat, bar, check, tilde) = (
        v(EstimatorKind::Hat),
        v(EstimatorKind::Bar),
        v(EstimatorKind::Check),
        v(EstimatorKind::Tilde),
    );
    let etas_zero = tr.events.iter().all(|e| e.overshoot == Some(0.0));
    let pass = hat == 4.0 && bar == 4.0 && check == 24.0 / 7.0 && tilde == 24.0 / 7.0 && etas_zero;
    verdict(
        1,
        "deterministic exactness",
        pass,
        start.elapsed(),
        Duration::from_secs(1),
        &format!("hat={hat} bar={bar} check={check} tilde={tilde} all_eta_zero={etas_zero}"),
    );
}

#[test]
fn criterion_02_wald_identities() {
    let start = Instant::now();
    let rep = wald_residuals(&curved(), &[1e4], 100_000, 1002).unwrap();
    let mean = rep.rows_named("wald_mean").next().unwrap().clone();
    let ratio = rep
        .rows_named("wald_variance_ratio")
        .next()
        .unwrap()
        .clone();
    let pass =
        mean.statistic.abs() <= 4.0 * mean.se && (ratio.statistic - 1.0).abs() <= 4.0 * ratio.se;
    verdict(
        2,
        "Wald identities",
        pass,
        start.elapsed(),
        Duration::from_secs(30),
        &format!(
            "mean residual {:.4} (se {:.4}), variance ratio {:.4} (se {:.4})",
            mean.statistic, mean.se, ratio.statistic, ratio.se
        ),
    );
}

#[test]
fn criterion_03_lorden_bounds() {
    let start = Instant::now();
    let gamma = IncrementModel::gamma(1.0, 1.0).unwrap();
    let geo = Interarrival::geometric(20.0).unwrap();
    let mut reports = vec![
        (
            "gamma",
            lorden_bounds(&gamma, &[10.0, 100.0, 1000.0], 100_000, 1003).unwrap(),
        ),
        (
            "curved",
            lorden_bounds(&curved(), &[1e2, 1e3, 1e4], 100_000, 1003).unwrap(),
        ),
        (
            "geometric",
            lorden_bounds(&geo, &[100.0, 1000.0, 10_000.0], 100_000, 1003).unwrap(),
        ),
    ];
    reports.push((
        "geometric traces",
        exogenous_age(&geo, &[100, 1000, 10_000], 100_000, 1003).unwrap(),
    ));
    reports.push((
        "geometric anscombe",
        anscombe_ratio(LrFamily::Geometric, &[(20.0, 2000)], 100_000, 1003).unwrap(),
    ));
    let rows: usize = reports.iter().map(|(_, r)| r.rows.len()).sum();
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|(name, r)| {
            r.rows
                .iter()
                .filter(|row| row.pass != Some(true))
                .map(move |row| format!("{name}/{}@{}", row.check, row.t))
        })
        .collect();
    verdict(
        3,
        "Lorden excess and age bounds",
        failed.is_empty(),
        start.elapsed(),
        Duration::from_secs(60),
        &format!(
            "{} of {rows} bound rows within 3 se; failing: {failed:?}",
            rows - failed.len()
        ),
    );
}

#[test]
fn criterion_04_low_rate_l1_rate() {
    let start = Instant::now();
    let grid = [(100.0, 1_000), (100.0, 10_000), (100.0, 100_000)];
    let hit = lr_error_table(LrFamily::Hitting(curved()), 1.0, &grid, 10_000, 1004).unwrap();
    let exp = lr_error_table(LrFamily::Exponential, 1.0, &grid, 10_000, 1004).unwrap();
    let hs = hit.slope("lr_n", "t").unwrap().clone();
    let es = exp.slope("lr_n", "t").unwrap().clone();
    let stats: Vec<String> = hit
        .rows_named("lr_n")
        .map(|r| format!("{:.5}", r.statistic))
        .collect();
    let pass = hs.slope <= -0.8 && es.slope <= -0.4;
    verdict(
        4,
        "low-rate L1 rate",
        pass,
        start.elapsed(),
        Duration::from_secs(300),
        &format!(
            "hitting t-slope {:.3} (se {:.3}, need <= -0.8; E|dN/t-1| = {stats:?}), exponential t-slope {:.3} (se {:.3}, need <= -0.4)",
            hs.slope, hs.se, es.slope, es.se
        ),
    );
}

#[test]
fn criterion_05_relative_efficiency_orderings() {
    let start = Instant::now();
    let spec = ExperimentSpec {
        id: "fig1".into(),
        model: curved(),
        template: SchemeTemplate::HittingOneSided,
        delta_grid: vec![2.0, 4.0, 6.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 60.0],
        t: 300,
        estimators: EstimatorKind::DRIFT.to_vec(),
        reps: 100_000,
        seed: 1005,
    };
    let table = re_sweep(&spec).unwrap();
    let claims = ordering_report(&table).unwrap();
    let detail: Vec<String> = claims.iter().map(|c| c.to_string()).collect();
    verdict(
        5,
        "relative-efficiency orderings",
        claims.iter().all(|c| c.pass),
        start.elapsed(),
        Duration::from_secs(300),
        &detail.join("; "),
    );
}

#[test]
fn criterion_06_clt_hat_and_gcheck() {
    let start = Instant::now();
    let t = 100_000u64;
    let tf = t as f64;
    let run = |kind, exponent: f64, seed| {
        clt_diagnostic(&CltSpec {
            model: curved(),
            scheme: SamplingScheme::one_sided(4.0 * tf.powf(exponent)).unwrap(),
            t,
            kind,
            reps: 2000,
            seed,
            sigma_gamma: None,
        })
        .unwrap()
    };
    let hat = run(EstimatorKind::Hat, 0.7, 1006);
    let gcheck = run(EstimatorKind::GCheck, 0.4, 1006);
    verdict(
        6,
        "CLT for hat and corrected check",
        hat.ks < 0.05 && gcheck.ks < 0.05,
        start.elapsed(),
        Duration::from_secs(600),
        &format!(
            "hat KS {:.4} (mean {:.3}, var {:.3}); g_check KS {:.4} (mean {:.3}, var {:.3}); need < 0.05",
            hat.ks, hat.mean, hat.variance, gcheck.ks, gcheck.mean, gcheck.variance
        ),
    );
}

#[test]
fn criterion_07_check_root_t_consistency() {
    let start = Instant::now();
    let t = 100_000u64;
    let r = clt_diagnostic(&CltSpec {
        model: curved(),
        scheme: SamplingScheme::one_sided(4.0 * (t as f64).sqrt()).unwrap(),
        t,
        kind: EstimatorKind::Check,
        reps: 2000,
        seed: 1007,
        sigma_gamma: None,
    })
    .unwrap();
    verdict(
        7,
        "root-t consistency of check",
        r.mean.abs() < 1.5,
        start.elapsed(),
        Duration::from_secs(600),
        &format!(
            "mean of sqrt(t)(check - mu)/sigma = {:.4}, need |.| < 1.5",
            r.mean
        ),
    );
}

#[test]
fn criterion_08_sigma_consistency() {
    let start = Instant::now();
    let t = 100_000u64;
    let d = 4.0 * (t as f64).sqrt();
    let r = sigma_consistency(&curved(), d, d, t, 1000, 1008).unwrap();
    verdict(
        8,
        "sigma_hat consistency",
        r.median_rel_error < 0.05,
        start.elapsed(),
        Duration::from_secs(600),
        &format!(
            "median |sigma_hat/8 - 1| = {:.4}, median sigma_hat = {:.4}, clamped {}",
            r.median_rel_error, r.median, r.clamped
        ),
    );
}

#[test]
fn criterion_09_fusion_clt() {
    let start = Instant::now();
    let t = 100_000u64;
    let threshold = 4.0 * (t as f64).powf(0.7);
    let sensors = (0..5)
        .map(|k| SensorSpec::new(k, curved(), threshold, None).unwrap())
        .collect();
    let net = Network::new(sensors, WeightRule::InverseVariance, false).unwrap();
    let s = network_clt_sample(&net, t, 2000, 1009, true).unwrap();
    let ks = lowrate::harness::ks_distance(&s.values).unwrap();
    let var: Running = s.values.iter().copied().collect();
    let pooled: Running = s.pooled_values.iter().copied().collect();
    verdict(
        9,
        "fusion CLT",
        ks < 0.05 && s.sufficiency_failures == 0,
        start.elapsed(),
        Duration::from_secs(600),
        &format!(
            "KS {ks:.4} (need < 0.05), variance {:.3} (pooled-scale variance {:.4}), message-log mismatches {}",
            var.variance(),
            pooled.variance(),
            s.sufficiency_failures
        ),
    );
}

#[test]
fn criterion_10_rho_cross_validation() {
    let start = Instant::now();
    let models = [
        IncrementModel::gamma(0.5, 0.125).unwrap(),
        IncrementModel::gamma(1.0, 0.25).unwrap(),
        IncrementModel::gamma(2.0, 0.5).unwrap(),
        IncrementModel::gaussian_curved(4.0, 1.0).unwrap(),
        curved(),
    ];
    let level = 1e4;
    let reps = 100_000u64;
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let rho = rho_closed_form(m).unwrap();
        let mut ladder_stream = RngStream::of(1010, 0, i as u32, Purpose::Ladder);
        let ladder = ladder_height_moments(m, 1_000_000, &mut ladder_stream).unwrap();
        let overshoots: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let mut s = RngStream::of(1010, rep, i as u32, Purpose::Overshoot);
                first_passage(m, level, &mut s).unwrap().overshoot
            })
            .collect();
        let direct: Running = overshoots.into_iter().collect();
        let z_ladder = (ladder.rho_hat - rho) / ladder.rho_se;
        let z_direct = (direct.mean() - rho) / direct.se();
        let z_pair =
            (ladder.rho_hat - direct.mean()) / (ladder.rho_se.powi(2) + direct.se().powi(2)).sqrt();
        ok &= z_ladder.abs() <= 4.0 && z_direct.abs() <= 4.0 && z_pair.abs() <= 4.0;
        parts.push(format!(
            "{:?}: rho={rho:.4} ladder={:.4} direct={:.4} z=({z_ladder:.2},{z_direct:.2},{z_pair:.2})",
            m.family(),
            ladder.rho_hat,
            direct.mean()
        ));
    }
    verdict(
        10,
        "overshoot constant cross-validation",
        ok,
        start.elapsed(),
        Duration::from_secs(120),
        &parts.join("; "),
    );
}
