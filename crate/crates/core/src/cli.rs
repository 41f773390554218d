//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a check fails or a run errors,
//! 2 on a configuration or usage error.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{CltPlan, ExperimentKind, FusionPlan, RunConfig, VerifyPlan, VerifySteps};
use crate::distributions::{
    gaussian_w_constant, rho_closed_form, IncrementModel, Purpose, RngStream, SERIES_TOL,
};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorKind, Status};
use crate::fusion::{
    message_log_sufficient, run_network, write_network_csv, NetworkRun, NETWORK_CSV_HEADER,
};
use crate::harness::{clt_diagnostic, ks_distance, ordering_report, re_sweep, sigma_consistency};
use crate::renewal::{simulate_trace, write_trace_csv, SamplingScheme, TRACE_CSV_HEADER};
use crate::theory::{
    anscombe_ratio, exogenous_age, lorden_bounds, lr_error_table, wald_residuals, GridReport,
};

/// Overrides the output directory when `--out-dir` is not given.
pub const OUT_DIR_ENV: &str = "LOWRATE_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "lowrate-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "lowrate",
    version,
    about = "Low-rate renewal sampling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Relative-efficiency sweep over sampling periods.
    Sweep(RunArgs),
    /// CLT diagnostic at a single sampling period.
    Clt(RunArgs),
    /// Renewal identities, bounds and convergence rates.
    Verify(RunArgs),
    /// K-sensor one-bit protocol.
    Fusion(RunArgs),
    /// Fast built-in sanity checks.
    Selftest {
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Print the resolved plan without simulating.
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write the event traces of the first N replications (clt only).
    #[arg(long, value_name = "N")]
    dump_traces: Option<u64>,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (kind, args) = match cli.command {
        Command::Sweep(a) => (ExperimentKind::Sweep, a),
        Command::Clt(a) => (ExperimentKind::Clt, a),
        Command::Verify(a) => (ExperimentKind::Verify, a),
        Command::Fusion(a) => (ExperimentKind::Fusion, a),
        Command::Selftest { threads } => {
            return with_threads(threads, || Ok(selftest())).unwrap_or_else(report_error);
        }
    };
    let threads = args.threads;
    with_threads(threads, || execute(kind, &args)).unwrap_or_else(report_error)
}

fn report_error(e: Error) -> i32 {
    eprintln!("error: {e}");
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_CHECK_FAILED,
    }
}

fn with_threads(threads: Option<usize>, f: impl FnOnce() -> Result<i32> + Send) -> Result<i32> {
    match threads {
        None => f(),
        Some(0) => Err(Error::Config {
            key: "--threads".into(),
            reason: "must be >= 1".into(),
        }),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Io(e.to_string()))?
            .install(f),
    }
}

fn execute(kind: ExperimentKind, args: &RunArgs) -> Result<i32> {
    let mut cfg = RunConfig::load(&args.config)?;
    if cfg.kind != kind {
        return Err(Error::Config {
            key: "kind".into(),
            reason: format!(
                "config is \"{}\" but the subcommand is \"{}\"",
                cfg.kind.name(),
                kind.name()
            ),
        });
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.validate()?;
    }
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    match kind {
        ExperimentKind::Sweep => sweep(&cfg, args, &out_dir),
        ExperimentKind::Clt => clt(&cfg.clt_plan()?, args, &out_dir),
        ExperimentKind::Verify => verify(&cfg.verify_plan()?, cfg.reps, cfg.seed, args, &out_dir),
        ExperimentKind::Fusion => fusion(&cfg.network()?, cfg.reps, cfg.seed, args, &out_dir),
    }
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn emit(dir: &Path, name: &str, report: &str) -> Result<()> {
    print!("{report}");
    let path = write_file(dir, name, report.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn sweep(cfg: &RunConfig, args: &RunArgs, out: &Path) -> Result<i32> {
    let spec = cfg.sweep_spec()?;
    let ordering = cfg.sweep.as_ref().is_some_and(|s| s.ordering);
    if args.dry_run {
        println!("plan: sweep \"{}\"", spec.id);
        println!("grid points: {}", spec.delta_grid.len());
        println!("estimators: {}", spec.estimators.len());
        println!("replications per point: {}", spec.reps);
        println!("total simulated increments: {}", spec.planned_increments());
        return Ok(EXIT_OK);
    }
    let table = re_sweep(&spec)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    let path = write_file(out, &format!("{}.csv", spec.id), &csv)?;
    println!("wrote {}", path.display());
    let mut report = String::new();
    for row in &table.rows {
        let _ = writeln!(
            report,
            "{:<8} delta={:<4} delta_emp={:.3} re={:.4} se={:.4} excluded={}",
            row.estimator.name(),
            row.delta_target,
            row.delta_empirical,
            row.re,
            row.se_re,
            row.excluded_frac
        );
    }
    let mut code = EXIT_OK;
    if ordering {
        for claim in ordering_report(&table)? {
            if !claim.pass {
                code = EXIT_CHECK_FAILED;
            }
            let _ = writeln!(report, "{claim}");
        }
    }
    emit(out, &format!("{}_report.txt", spec.id), &report)?;
    Ok(code)
}

fn verdict(report: &mut String, name: &str, value: f64, limit: Option<f64>) -> bool {
    match limit {
        Some(max) => {
            let pass = value < max;
            let _ = writeln!(
                report,
                "{} {name} = {value:.6} (limit {max})",
                if pass { "PASS" } else { "FAIL" }
            );
            pass
        }
        None => {
            let _ = writeln!(report, "{name} = {value:.6}");
            true
        }
    }
}

fn clt(plan: &CltPlan, args: &RunArgs, out: &Path) -> Result<i32> {
    let spec = &plan.spec;
    if args.dry_run {
        println!(
            "plan: clt \"{}\" estimator={} threshold={}",
            plan.id, spec.kind, plan.threshold
        );
        println!("replications: {}", spec.reps);
        println!(
            "total simulated increments: {}",
            spec.reps as u128 * spec.t as u128
        );
        return Ok(EXIT_OK);
    }
    let mut report = String::new();
    let _ = writeln!(
        report,
        "clt {} estimator={} t={} threshold={}",
        plan.id, spec.kind, spec.t, plan.threshold
    );
    let mut ok = true;
    let mut csv = String::from("rep_index,value\n");
    if spec.kind == EstimatorKind::Sigma {
        let gamma = spec.sigma_gamma.unwrap_or(plan.threshold);
        let r = sigma_consistency(
            &spec.model,
            plan.threshold,
            gamma,
            spec.t,
            spec.reps,
            spec.seed,
        )?;
        for (i, v) in r.values.iter().enumerate() {
            let _ = writeln!(csv, "{i},{v}");
        }
        let _ = writeln!(
            report,
            "median sigma_hat = {:.6} (true {})",
            r.median,
            spec.model.sd()
        );
        ok &= verdict(
            &mut report,
            "median relative error",
            r.median_rel_error,
            plan.rel_error_max,
        );
        let _ = writeln!(
            report,
            "clamped = {} exclusions = {}",
            r.clamped, r.exclusions
        );
    } else {
        let r = clt_diagnostic(spec)?;
        for (i, v) in r.values.iter().enumerate() {
            let _ = writeln!(csv, "{i},{v}");
        }
        ok &= verdict(&mut report, "ks distance", r.ks, plan.ks_max);
        ok &= verdict(
            &mut report,
            "|mean standardized|",
            r.mean.abs(),
            plan.mean_abs_max,
        );
        let _ = writeln!(report, "mean = {:.6} variance = {:.6}", r.mean, r.variance);
        let _ = writeln!(
            report,
            "exclusions = {} correction_skipped = {}",
            r.exclusions, r.correction_skipped
        );
    }
    let path = write_file(out, &format!("{}_values.csv", plan.id), csv.as_bytes())?;
    println!("wrote {}", path.display());
    if let Some(n) = args.dump_traces {
        let mut buf = Vec::new();
        writeln!(buf, "{TRACE_CSV_HEADER}")?;
        for rep in 0..n.min(spec.reps as u64) {
            let stream = RngStream::of(spec.seed, rep, 0, Purpose::Walk);
            let tr = simulate_trace(&spec.model, spec.scheme, spec.t, &stream, true)?;
            write_trace_csv(&mut buf, rep, &tr)?;
        }
        let path = write_file(out, &format!("{}_traces.csv", plan.id), &buf)?;
        println!("wrote {}", path.display());
    }
    emit(out, &format!("{}_report.txt", plan.id), &report)?;
    Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn verify(plan: &VerifyPlan, reps: usize, seed: u64, args: &RunArgs, out: &Path) -> Result<i32> {
    if args.dry_run {
        println!("plan: verify \"{}\"", plan.id);
        println!("wald levels: {:?}", plan.wald_levels);
        println!("lorden levels: {:?}", plan.lorden_levels);
        println!("age horizons: {:?}", plan.age_horizons);
        println!("rate tables: {}", plan.rates.len());
        println!("anscombe tables: {}", plan.anscombe.len());
        println!("replications: {reps}");
        return Ok(EXIT_OK);
    }
    let mut report = GridReport::default();
    let step: &(dyn crate::renewal::StepDistribution + Sync) = match &plan.steps {
        VerifySteps::Model(m) => m,
        VerifySteps::Interarrival(ia) => ia,
    };
    if let Some(levels) = &plan.wald_levels {
        report.extend(wald_residuals(step, levels, reps, seed)?);
    }
    if let Some(levels) = &plan.lorden_levels {
        report.extend(lorden_bounds(step, levels, reps, seed)?);
    }
    if let (Some(h), VerifySteps::Interarrival(ia)) = (&plan.age_horizons, &plan.steps) {
        report.extend(exogenous_age(ia, h, reps, seed)?);
    }
    for g in &plan.rates {
        report.extend(lr_error_table(g.family, g.r, &g.grid, g.reps, seed)?);
    }
    for g in &plan.anscombe {
        report.extend(anscombe_ratio(g.family, &g.grid, g.reps, seed)?);
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let path = write_file(out, &format!("{}.csv", plan.id), &csv)?;
    println!("wrote {}", path.display());
    emit(out, &format!("{}_report.txt", plan.id), &report.summary())?;
    Ok(if report.all_pass() {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}

fn fusion(plan: &FusionPlan, reps: usize, seed: u64, args: &RunArgs, out: &Path) -> Result<i32> {
    let net = &plan.network;
    let horizon = *plan.checkpoints.last().expect("validated");
    if args.dry_run {
        println!("plan: fusion \"{}\" sensors={}", plan.id, net.sensors.len());
        println!("checkpoints: {:?}", plan.checkpoints);
        println!("weights: {:?}", net.weights);
        let factor = if plan.check_logs { 2 } else { 1 };
        println!(
            "total simulated increments: {}",
            reps as u128 * net.sensors.len() as u128 * horizon as u128 * factor
        );
        return Ok(EXIT_OK);
    }
    let runs: Vec<(NetworkRun, bool)> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let run = run_network(net, &plan.checkpoints, seed, rep)?;
            let ok = !plan.check_logs || message_log_sufficient(net, &run, seed, rep)?;
            Ok((run, ok))
        })
        .collect::<Result<_>>()?;
    let mut csv = Vec::new();
    writeln!(csv, "{NETWORK_CSV_HEADER}")?;
    for (rep, (run, _)) in runs.iter().enumerate() {
        write_network_csv(&mut csv, rep as u64, run)?;
    }
    let path = write_file(out, &format!("{}.csv", plan.id), &csv)?;
    println!("wrote {}", path.display());

    let mut report = String::new();
    let _ = writeln!(
        report,
        "fusion {} sensors={} weights={:?}",
        plan.id,
        net.sensors.len(),
        net.weights
    );
    let mut ok = true;
    let failures = runs.iter().filter(|(_, s)| !s).count();
    if plan.check_logs {
        let pass = failures == 0;
        ok &= pass;
        let _ = writeln!(
            report,
            "{} message-log sufficiency ({failures} differing replications)",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    let mu = net.mean();
    let root_t = (horizon as f64).sqrt();
    let (scale, pooled) = (net.fused_scale() / root_t, net.pooled_scale() / root_t);
    let mut z = Vec::new();
    let mut zp = Vec::new();
    let mut excluded = 0;
    for (run, _) in &runs {
        let cp = run.checkpoints.last().expect("checkpoint");
        let hat = cp.fused(EstimatorKind::Hat).expect("hat");
        if hat.status == Status::NoSample {
            excluded += 1;
            continue;
        }
        z.push(if scale > 0.0 {
            (hat.value - mu) / scale
        } else {
            0.0
        });
        zp.push(if pooled > 0.0 {
            (hat.value - mu) / pooled
        } else {
            0.0
        });
    }
    if !z.is_empty() {
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len().max(2) - 1) as f64
        };
        ok &= verdict(
            &mut report,
            "ks distance (sum w^2 sigma^2 / t scale)",
            ks_distance(&z)?,
            plan.ks_max,
        );
        let _ = writeln!(
            report,
            "variance, sum w^2 sigma^2 / t scale = {:.6}",
            var(&z)
        );
        let _ = writeln!(
            report,
            "variance, sqrt(K) sigma / sqrt(t) scale = {:.6}",
            var(&zp)
        );
    }
    let _ = writeln!(report, "excluded replications = {excluded}");
    emit(out, &format!("{}_report.txt", plan.id), &report)?;
    Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}

/// Cheap deterministic checks of the core arithmetic.
fn selftest() -> i32 {
    let mut ok = true;
    let mut line = |name: &str, pass: bool| {
        println!("{} {name}", if pass { "PASS" } else { "FAIL" });
        ok &= pass;
    };
    let det = IncrementModel::deterministic(4.0).expect("valid");
    let stream = RngStream::of(0, 0, 0, Purpose::Walk);
    let trace = simulate_trace(
        &det,
        SamplingScheme::one_sided(8.0).expect("valid"),
        7,
        &stream,
        true,
    );
    let exact = trace.is_ok_and(|tr| {
        let v = |k| estimate(&tr, k).map(|e| e.value).unwrap_or(f64::NAN);
        v(EstimatorKind::Hat) == 4.0
            && v(EstimatorKind::Bar) == 4.0
            && v(EstimatorKind::Check) == 24.0 / 7.0
            && v(EstimatorKind::Tilde) == 24.0 / 7.0
    });
    line("deterministic estimators", exact);
    let gamma = IncrementModel::gamma(2.0, 0.5).expect("valid");
    line(
        "gamma overshoot constant",
        rho_closed_form(&gamma).is_ok_and(|r| (r - 3.0).abs() < 1e-12),
    );
    let w = gaussian_w_constant(4.0, SERIES_TOL).unwrap_or(f64::NAN);
    let curved = IncrementModel::gaussian_curved(10.0, 4.0).expect("valid");
    line(
        "gaussian overshoot proportionality",
        rho_closed_form(&curved).is_ok_and(|r| (r / 10.0 - w).abs() < 1e-10),
    );
    line(
        "ks of a point mass",
        ks_distance(&[0.0; 8]).is_ok_and(|d| d == 0.5),
    );
    if ok {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}
