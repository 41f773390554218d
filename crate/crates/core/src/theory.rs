//! Empirical checks of renewal-theoretic identities, bounds and rates.
//!
//! Every check is a Monte Carlo estimate with a standard error. Bound
//! checks are one sided: a row fails only if the estimate exceeds the
//! bound by more than three standard errors.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use crate::distributions::{IncrementModel, Purpose, RngStream};
use crate::error::{Error, Result};
use crate::renewal::{
    first_passage, simulate_trace, HittingInterarrival, Interarrival, SamplingScheme,
    StepDistribution,
};
use crate::stats::{weighted_line_fit, Running, RunningPair};

/// Bound checks fail only beyond this many standard errors.
pub const BOUND_SE: f64 = 3.0;
/// Identity checks (Wald) fail beyond this many standard errors.
pub const IDENTITY_SE: f64 = 4.0;
/// Tolerance on fitted rate exponents.
pub const SLOPE_TOL: f64 = 0.2;
/// Smallest admissible `t / delta` in a rate grid.
pub const MIN_RATIO: f64 = 10.0;
/// Smallest admissible replication count in a rate grid.
pub const MIN_RATE_REPS: usize = 1000;

/// Order `r` of the error and growth exponent `q` of `E|tau - delta|^{r v 2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSpec {
    pub r: f64,
    pub q: f64,
}

impl RateSpec {
    pub fn new(r: f64, q: f64) -> Result<Self> {
        if !(r >= 1.0 && r.is_finite()) {
            return Err(Error::InvalidOrder(r));
        }
        let rr = r.max(2.0);
        if !(q >= 0.0 && q <= rr) {
            return Err(Error::InvalidExperiment(format!(
                "q must lie in [0, {rr}], got {q}"
            )));
        }
        Ok(Self { r, q })
    }

    /// `alpha_r = 2 q / (r v 2) - 1`.
    pub fn alpha(&self) -> f64 {
        2.0 * self.q / self.r.max(2.0) - 1.0
    }

    /// `(delta/t)^r + (delta^alpha / t)^{r/2}`.
    pub fn rate(&self, delta: f64, t: f64) -> f64 {
        (delta / t).powf(self.r) + (delta.powf(self.alpha()) / t).powf(self.r / 2.0)
    }

    /// Slowest log-log slope of [`rate`](Self::rate) in `t` at fixed `delta`.
    pub fn t_exponent(&self) -> f64 {
        -self.r / 2.0
    }

    /// Slowest log-log slope in `delta` at fixed `t / delta`.
    pub fn delta_exponent(&self) -> f64 {
        ((self.alpha() - 1.0) * self.r / 2.0).max(0.0)
    }

    /// The slowest-decaying term in `t`, `(delta^alpha / t)^{r/2}`.
    fn dominant(&self, delta: f64, t: f64) -> f64 {
        (delta.powf(self.alpha()) / t).powf(self.r / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub check: String,
    pub delta: f64,
    pub t: f64,
    pub r: f64,
    pub statistic: f64,
    pub se: f64,
    pub bound_rhs: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub check: String,
    /// `"t"` or `"delta"`.
    pub axis: &'static str,
    pub slope: f64,
    pub se: f64,
    pub predicted: f64,
    /// Pass when `slope <= predicted + SLOPE_TOL`.
    pub pass: bool,
}

/// A table of Monte Carlo checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub slopes: Vec<SlopeFit>,
    pub metadata: Vec<(String, String)>,
}

pub const REPORT_CSV_HEADER: &str = "check_name,delta,t,r,statistic,se,bound_rhs,pass";

impl GridReport {
    /// True when no row or slope check failed.
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false)) && self.slopes.iter().all(|s| s.pass)
    }

    pub fn rows_named<'a>(&'a self, check: &'a str) -> impl Iterator<Item = &'a GridRow> + 'a {
        self.rows.iter().filter(move |r| r.check == check)
    }

    pub fn slope(&self, check: &str, axis: &str) -> Option<&SlopeFit> {
        self.slopes
            .iter()
            .find(|s| s.check == check && s.axis == axis)
    }

    pub fn extend(&mut self, other: GridReport) {
        self.rows.extend(other.rows);
        self.slopes.extend(other.slopes);
        self.metadata.extend(other.metadata);
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{REPORT_CSV_HEADER}")?;
        for row in &self.rows {
            let bound = row.bound_rhs.map(|b| b.to_string()).unwrap_or_default();
            let pass = row.pass.map(|p| p.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{bound},{pass}",
                row.check, row.delta, row.t, row.r, row.statistic, row.se
            )?;
        }
        Ok(())
    }

    /// Plain-text summary with slopes and metadata.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for row in &self.rows {
            let verdict = match row.pass {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "----",
            };
            let bound = row.bound_rhs.map_or("-".to_string(), |b| format!("{b:.6}"));
            let _ = writeln!(
                s,
                "{verdict} {} delta={} t={} stat={:.6} se={:.6} bound={bound}",
                row.check, row.delta, row.t, row.statistic, row.se
            );
        }
        for f in &self.slopes {
            let _ = writeln!(
                s,
                "{} {} slope vs {} = {:.4} (se {:.4}), predicted {:.4}",
                if f.pass { "PASS" } else { "FAIL" },
                f.check,
                f.axis,
                f.slope,
                f.se,
                f.predicted
            );
        }
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "# {k}: {v}");
        }
        s
    }
}

fn bound_row(check: &str, delta: f64, t: f64, acc: &Running, bound: f64) -> GridRow {
    GridRow {
        check: check.to_string(),
        delta,
        t,
        r: 1.0,
        statistic: acc.mean(),
        se: acc.se(),
        bound_rhs: Some(bound),
        pass: Some(acc.mean() <= bound + BOUND_SE * acc.se()),
    }
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidExperiment("level grid is empty".into()));
    }
    if levels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidExperiment(
            "levels must be finite and >= 0".into(),
        ));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidExperiment(
            "levels must be strictly increasing".into(),
        ));
    }
    Ok(())
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < 2 {
        return Err(Error::InvalidExperiment(
            "at least two replications are needed".into(),
        ));
    }
    Ok(())
}

/// First passages of `steps` over `level`, one per replication, in order.
fn passages<D: StepDistribution + Sync + ?Sized>(
    steps: &D,
    level: f64,
    reps: usize,
    seed: u64,
    grid: u32,
) -> Result<Vec<crate::renewal::FirstPassageRecord>> {
    (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut stream = RngStream::new(
                seed,
                crate::distributions::StreamId::new(rep, grid, Purpose::FirstPassage),
            )?;
            first_passage(steps, level, &mut stream)
        })
        .collect()
}

/// Wald identities for the partial sums of `steps` stopped at the first
/// passage over each level: `E[tau_nu - delta nu] = 0` and
/// `E[(tau_nu - delta nu)^2] = Var[tau] E[nu]`.
///
/// `delta` is the exact step mean; the variance is taken from the step law.
pub fn wald_residuals<D: StepDistribution + Sync + ?Sized>(
    steps: &D,
    levels: &[f64],
    reps: usize,
    seed: u64,
) -> Result<GridReport> {
    check_levels(levels)?;
    check_reps(reps)?;
    let delta = steps.drift();
    if !(delta > 0.0) {
        return Err(Error::NonPositiveMean(delta));
    }
    let var = steps
        .step_variance()
        .ok_or_else(|| Error::InvalidExperiment("step variance unavailable".into()))?;
    let mut report = GridReport::default();
    for (g, &level) in levels.iter().enumerate() {
        let recs = passages(steps, level, reps, seed, g as u32)?;
        let mut resid = Running::new();
        let mut pair = RunningPair::new();
        for rec in &recs {
            let d = rec.value - delta * rec.index as f64;
            resid.push(d);
            pair.push(rec.index as f64, d * d);
        }
        let mean_ok = resid.mean().abs() <= IDENTITY_SE * resid.se();
        report.rows.push(GridRow {
            check: "wald_mean".into(),
            delta,
            t: level,
            r: 1.0,
            statistic: resid.mean(),
            se: resid.se(),
            bound_rhs: Some(0.0),
            pass: Some(mean_ok),
        });
        if var > 0.0 {
            let n = recs.len() as f64;
            let ratio_raw = pair.mean_y() / pair.mean_x();
            let lin =
                pair.var_y() - 2.0 * ratio_raw * pair.cov() + ratio_raw * ratio_raw * pair.var_x();
            let ratio = ratio_raw / var;
            let se = (lin.max(0.0) / n).sqrt() / (pair.mean_x() * var);
            report.rows.push(GridRow {
                check: "wald_variance_ratio".into(),
                delta,
                t: level,
                r: 2.0,
                statistic: ratio,
                se,
                bound_rhs: Some(1.0),
                pass: Some((ratio - 1.0).abs() <= IDENTITY_SE * se),
            });
        }
    }
    report.metadata.push(("delta".into(), delta.to_string()));
    report
        .metadata
        .push(("step_variance".into(), var.to_string()));
    Ok(report)
}

/// Lorden's excess bound `E[tau_nu - level] <= E[(X^+)^2] / mu` and, for
/// positive steps viewed as renewal interarrivals, the age bound
/// `E[level - tau_{nu-1}] <= E[tau^2] / delta`.
pub fn lorden_bounds<D: StepDistribution + Sync + ?Sized>(
    steps: &D,
    levels: &[f64],
    reps: usize,
    seed: u64,
) -> Result<GridReport> {
    check_levels(levels)?;
    check_reps(reps)?;
    let mu = steps.drift();
    if !(mu > 0.0) {
        return Err(Error::NonPositiveMean(mu));
    }
    let pos2 = steps
        .positive_second_moment()
        .ok_or_else(|| Error::InvalidExperiment("E[(X+)^2] unavailable in closed form".into()))?;
    let excess_bound = pos2 / mu;
    let age_bound = steps
        .positive_steps()
        .then(|| steps.step_variance().map(|v| (v + mu * mu) / mu))
        .flatten();
    let mut report = GridReport::default();
    for (g, &level) in levels.iter().enumerate() {
        let recs = passages(steps, level, reps, seed, g as u32)?;
        let excess: Running = recs.iter().map(|r| r.overshoot).collect();
        report
            .rows
            .push(bound_row("lorden_excess", mu, level, &excess, excess_bound));
        if let Some(bound) = age_bound {
            let age: Running = recs.iter().map(|r| level - r.previous).collect();
            report
                .rows
                .push(bound_row("renewal_age", mu, level, &age, bound));
        }
    }
    report
        .metadata
        .push(("excess_bound".into(), excess_bound.to_string()));
    if let Some(b) = age_bound {
        report.metadata.push(("age_bound".into(), b.to_string()));
    }
    Ok(report)
}

/// Age bound `E[t - tau(t)] <= E[tau^2] / delta` on simulated exogenous
/// sampling traces.
pub fn exogenous_age(
    ia: &Interarrival,
    horizons: &[u64],
    reps: usize,
    seed: u64,
) -> Result<GridReport> {
    let levels: Vec<f64> = horizons.iter().map(|&t| t as f64).collect();
    check_levels(&levels)?;
    check_reps(reps)?;
    let delta = ia.grid_mean();
    let bound = ia.grid_second_moment() / delta;
    let dummy = IncrementModel::deterministic(0.0)?;
    let scheme = SamplingScheme::Exogenous(*ia);
    let mut report = GridReport::default();
    for (g, &t) in horizons.iter().enumerate() {
        if t == 0 {
            return Err(Error::InvalidExperiment("horizon must be >= 1".into()));
        }
        let ages: Vec<f64> = (0..reps as u64)
            .into_par_iter()
            .map(|rep| {
                let stream = RngStream::of(seed, rep, g as u32, Purpose::Sampling);
                simulate_trace(&dummy, scheme, t, &stream, false)
                    .map(|tr| (t - tr.last_time()) as f64)
            })
            .collect::<Result<_>>()?;
        let acc: Running = ages.into_iter().collect();
        report
            .rows
            .push(bound_row("exogenous_age", delta, t as f64, &acc, bound));
    }
    report
        .metadata
        .push(("grid_rounded".into(), ia.is_rounded().to_string()));
    Ok(report)
}

/// Family of sampling schemes indexed by the mean interarrival `delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrFamily {
    /// One-sided hitting with `Delta = mu delta - rho`, so that the mean
    /// interarrival is `delta` to first order.
    Hitting(IncrementModel),
    Exponential,
    Geometric,
    /// `delta` must be an integer.
    Deterministic,
}

impl LrFamily {
    /// Growth exponent of `Var[tau]` in `delta`.
    pub fn q(&self) -> f64 {
        match self {
            LrFamily::Hitting(_) => 1.0,
            LrFamily::Exponential | LrFamily::Geometric => 2.0,
            LrFamily::Deterministic => 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LrFamily::Hitting(_) => "hitting",
            LrFamily::Exponential => "exponential",
            LrFamily::Geometric => "geometric",
            LrFamily::Deterministic => "deterministic",
        }
    }

    /// The scheme of nominal mean `delta`, its step law and exact (or
    /// first-order) mean interarrival.
    pub fn source(&self, delta: f64) -> Result<LrSource> {
        match *self {
            LrFamily::Hitting(model) => {
                let rho = crate::distributions::rho_closed_form(&model)?;
                let threshold = model.mean() * delta - rho;
                let steps = HittingInterarrival::new(model, threshold)?;
                Ok(LrSource::Hitting(steps))
            }
            LrFamily::Exponential => Ok(LrSource::Exogenous(Interarrival::exponential(delta)?)),
            LrFamily::Geometric => Ok(LrSource::Exogenous(Interarrival::geometric(delta)?)),
            LrFamily::Deterministic => {
                if delta.fract() != 0.0 {
                    return Err(Error::InvalidScheme(format!(
                        "deterministic period must be an integer, got {delta}"
                    )));
                }
                Ok(LrSource::Exogenous(Interarrival::deterministic(
                    delta as u64,
                )?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSource {
    Hitting(HittingInterarrival),
    Exogenous(Interarrival),
}

impl LrSource {
    pub fn delta(&self) -> f64 {
        match self {
            LrSource::Hitting(h) => h.approx_mean(),
            LrSource::Exogenous(ia) => ia.grid_mean(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            LrSource::Hitting(h) => h.positive_second_moment().unwrap_or(f64::NAN),
            LrSource::Exogenous(ia) => ia.grid_second_moment(),
        }
    }

    fn scheme(&self) -> SamplingScheme {
        match *self {
            LrSource::Hitting(h) => SamplingScheme::HittingOneSided {
                threshold: h.threshold,
            },
            LrSource::Exogenous(ia) => SamplingScheme::Exogenous(ia),
        }
    }

    fn model(&self) -> IncrementModel {
        match self {
            LrSource::Hitting(h) => h.model,
            LrSource::Exogenous(_) => IncrementModel::deterministic(0.0).expect("point mass"),
        }
    }

    /// `(N(t), tau(t), nu(t))` for one replication. `nu` is computed by an
    /// independent first-passage run on the same random numbers.
    fn counts(&self, t: u64, stream: &RngStream) -> Result<(u64, u64, u64)> {
        let trace = simulate_trace(&self.model(), self.scheme(), t, stream, false)?;
        let nu = match self {
            LrSource::Hitting(h) => first_passage(h, t as f64, &mut stream.clone())?.index,
            LrSource::Exogenous(ia) => {
                first_passage(
                    ia,
                    t as f64,
                    &mut stream.with_purpose(Purpose::Interarrival),
                )?
                .index
            }
        };
        Ok((trace.count() as u64, trace.last_time(), nu))
    }
}

/// `E|delta nu(t)/t - 1|^r` and `E|delta N(t)/t - 1|^r` over a `(delta, t)`
/// grid, with log-log slope fits against `t` at fixed `delta` and against
/// `delta` at fixed `t / delta`, plus an envelope check
/// `statistic <= C rate(delta, t) + 3 se` with `C` fitted on the first row.
///
/// Each replication asserts `nu(t) = N(t) + 1`.
pub fn lr_error_table(
    family: LrFamily,
    r: f64,
    grid: &[(f64, u64)],
    reps: usize,
    seed: u64,
) -> Result<GridReport> {
    let spec = RateSpec::new(r, family.q())?;
    if grid.is_empty() {
        return Err(Error::InvalidExperiment("rate grid is empty".into()));
    }
    if reps < MIN_RATE_REPS {
        return Err(Error::InvalidExperiment(format!(
            "rate tables need at least {MIN_RATE_REPS} replications, got {reps}"
        )));
    }
    let mut report = GridReport::default();
    let mut sources = Vec::with_capacity(grid.len());
    for &(delta, t) in grid {
        if (t as f64) / delta < MIN_RATIO {
            return Err(Error::InvalidExperiment(format!(
                "t/delta must be >= {MIN_RATIO}, got t={t}, delta={delta}"
            )));
        }
        sources.push(family.source(delta)?);
    }
    let mut mismatches = 0u64;
    for (g, (&(_, t), source)) in grid.iter().zip(&sources).enumerate() {
        let delta = source.delta();
        let counts: Vec<(u64, u64, u64)> = (0..reps as u64)
            .into_par_iter()
            .map(|rep| source.counts(t, &RngStream::of(seed, rep, g as u32, Purpose::Walk)))
            .collect::<Result<_>>()?;
        let tf = t as f64;
        let mut nu_err = Running::new();
        let mut n_err = Running::new();
        for &(n, _, nu) in &counts {
            if nu != n + 1 {
                mismatches += 1;
            }
            nu_err.push((delta * nu as f64 / tf - 1.0).abs().powf(r));
            n_err.push((delta * n as f64 / tf - 1.0).abs().powf(r));
        }
        for (name, acc) in [("lr_nu", &nu_err), ("lr_n", &n_err)] {
            report.rows.push(GridRow {
                check: name.into(),
                delta,
                t: tf,
                r,
                statistic: acc.mean(),
                se: acc.se(),
                bound_rhs: None,
                pass: None,
            });
        }
    }
    if mismatches > 0 {
        return Err(Error::InvalidExperiment(format!(
            "nu(t) = N(t) + 1 failed on {mismatches} replications"
        )));
    }
    for name in ["lr_nu", "lr_n"] {
        apply_envelope(&mut report, name, &spec);
        fit_slopes(&mut report, name, &spec);
    }
    report
        .metadata
        .push(("family".into(), family.name().into()));
    report.metadata.push(("q".into(), spec.q.to_string()));
    report
        .metadata
        .push(("alpha".into(), spec.alpha().to_string()));
    report
        .metadata
        .push(("min_t_over_delta".into(), MIN_RATIO.to_string()));
    report
        .metadata
        .push(("nu_equals_n_plus_one".into(), "all replications".into()));
    if let LrFamily::Exponential = family {
        report.metadata.push(("grid_rounded".into(), "true".into()));
    }
    Ok(report)
}

fn apply_envelope(report: &mut GridReport, name: &str, spec: &RateSpec) {
    let idx: Vec<usize> = (0..report.rows.len())
        .filter(|&i| report.rows[i].check == name)
        .collect();
    let Some(&first) = idx.first() else { return };
    let base = &report.rows[first];
    let c = base.statistic / spec.dominant(base.delta, base.t);
    for &i in &idx {
        let row = &mut report.rows[i];
        let bound = c * spec.dominant(row.delta, row.t);
        row.bound_rhs = Some(bound);
        row.pass = Some(row.statistic <= bound + BOUND_SE * row.se);
    }
}

fn fit_axis(rows: &[&GridRow], x: impl Fn(&GridRow) -> f64) -> Option<(f64, f64)> {
    if rows.len() < 2 || rows.iter().any(|r| !(r.statistic > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = rows.iter().map(|r| x(r).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.statistic.ln()).collect();
    let sds: Vec<f64> = rows.iter().map(|r| r.se / r.statistic).collect();
    weighted_line_fit(&xs, &ys, &sds).map(|f| (f.slope, f.slope_se))
}

fn fit_slopes(report: &mut GridReport, name: &str, spec: &RateSpec) {
    let rows: Vec<&GridRow> = report.rows.iter().filter(|r| r.check == name).collect();
    let mut fits = Vec::new();
    // rows sharing a delta: slope against t
    let mut deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    deltas.dedup();
    for d in &deltas {
        let same: Vec<&GridRow> = rows.iter().copied().filter(|r| r.delta == *d).collect();
        if let Some((slope, se)) = fit_axis(&same, |r| r.t) {
            fits.push(SlopeFit {
                check: name.to_string(),
                axis: "t",
                slope,
                se,
                predicted: spec.t_exponent(),
                pass: slope <= spec.t_exponent() + SLOPE_TOL,
            });
        }
    }
    // rows sharing t/delta: slope against delta
    let mut ratios: Vec<f64> = rows
        .iter()
        .map(|r| (r.t / r.delta * 1e6).round() / 1e6)
        .collect();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    for k in &ratios {
        let same: Vec<&GridRow> = rows
            .iter()
            .copied()
            .filter(|r| ((r.t / r.delta * 1e6).round() / 1e6) == *k)
            .collect();
        if let Some((slope, se)) = fit_axis(&same, |r| r.delta) {
            fits.push(SlopeFit {
                check: name.to_string(),
                axis: "delta",
                slope,
                se,
                predicted: spec.delta_exponent(),
                pass: slope <= spec.delta_exponent() + SLOPE_TOL,
            });
        }
    }
    report.slopes.extend(fits);
}

/// `E|tau(t)/t - 1| = E[age]/t` against `(E[tau^2]/delta)/t`.
pub fn anscombe_ratio(
    family: LrFamily,
    grid: &[(f64, u64)],
    reps: usize,
    seed: u64,
) -> Result<GridReport> {
    if grid.is_empty() {
        return Err(Error::InvalidExperiment("grid is empty".into()));
    }
    check_reps(reps)?;
    let mut report = GridReport::default();
    for (g, &(delta, t)) in grid.iter().enumerate() {
        let source = family.source(delta)?;
        let d = source.delta();
        let tf = t as f64;
        let ratios: Vec<f64> = (0..reps as u64)
            .into_par_iter()
            .map(|rep| {
                let stream = RngStream::of(seed, rep, g as u32, Purpose::Walk);
                simulate_trace(&source.model(), source.scheme(), t, &stream, false)
                    .map(|tr| (tr.last_time() as f64 / tf - 1.0).abs())
            })
            .collect::<Result<_>>()?;
        let acc: Running = ratios.into_iter().collect();
        let bound = source.second_moment() / d / tf;
        report
            .rows
            .push(bound_row("anscombe_age", d, tf, &acc, bound));
    }
    report
        .metadata
        .push(("family".into(), family.name().into()));
    Ok(report)
}
