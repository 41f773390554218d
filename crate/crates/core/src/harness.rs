//! Monte Carlo experiment driver: relative-efficiency sweeps, CLT
//! diagnostics, the qualitative ordering report and the KS statistic.
//!
//! Replications run in parallel on per-replication streams and are
//! reduced sequentially in replication order, so results do not depend on
//! the number of worker threads.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::distributions::{IncrementModel, Purpose, RngStream};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate, estimate_sigma, overshoot_correct_with, Estimate, EstimatorKind, RhoLink, Status,
};
use crate::renewal::{
    simulate_paired, simulate_trace, Interarrival, PathWalker, RenewalTrace, SamplingScheme,
};
use crate::stats::{covariance, norm_cdf, Running};

/// Ordering claims are tested at this many standard errors.
pub const ORDER_SE: f64 = 3.0;
/// Smallest replication count for CLT diagnostics.
pub const MIN_CLT_REPS: usize = 100;

/// How a target mean interarrival `delta` becomes a sampling scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeTemplate {
    /// `Delta = delta mu`.
    HittingOneSided,
    /// `Delta = delta mu`.
    HittingTwoSided,
    Exponential,
    Geometric,
    /// `delta` must be an integer.
    Deterministic,
}

impl SchemeTemplate {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "hitting" | "hitting_one_sided" => Self::HittingOneSided,
            "hitting_two_sided" => Self::HittingTwoSided,
            "exponential" => Self::Exponential,
            "geometric" => Self::Geometric,
            "deterministic" => Self::Deterministic,
            _ => return None,
        })
    }

    pub fn is_hitting(&self) -> bool {
        matches!(self, Self::HittingOneSided | Self::HittingTwoSided)
    }

    pub fn scheme(&self, model: &IncrementModel, delta: f64) -> Result<SamplingScheme> {
        match self {
            Self::HittingOneSided => SamplingScheme::one_sided(delta * model.mean()),
            Self::HittingTwoSided => SamplingScheme::two_sided(delta * model.mean()),
            Self::Exponential => Ok(SamplingScheme::Exogenous(Interarrival::exponential(delta)?)),
            Self::Geometric => Ok(SamplingScheme::Exogenous(Interarrival::geometric(delta)?)),
            Self::Deterministic => {
                if delta.fract() != 0.0 {
                    return Err(Error::InvalidScheme(format!(
                        "deterministic period must be an integer, got {delta}"
                    )));
                }
                Ok(SamplingScheme::Exogenous(Interarrival::deterministic(
                    delta as u64,
                )?))
            }
        }
    }
}

/// A relative-efficiency sweep over target sampling periods.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub id: String,
    pub model: IncrementModel,
    pub template: SchemeTemplate,
    pub delta_grid: Vec<f64>,
    pub t: u64,
    pub estimators: Vec<EstimatorKind>,
    pub reps: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidExperiment(msg));
        if self.reps == 0 {
            return bad("reps must be >= 1".into());
        }
        if self.t == 0 {
            return bad("t must be >= 1".into());
        }
        if self.delta_grid.is_empty() {
            return bad("delta grid is empty".into());
        }
        if self.delta_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("delta grid must be strictly increasing".into());
        }
        if self.estimators.is_empty() {
            return bad("no estimators requested".into());
        }
        for k in &self.estimators {
            if *k == EstimatorKind::Sigma {
                return Err(Error::UnsupportedEstimator {
                    kind: k.name(),
                    reason: "sweeps compare drift estimators".into(),
                });
            }
            if k.needs_distribution() && !RhoLink::for_model(&self.model).is_supported() {
                return Err(Error::UnsupportedEstimator {
                    kind: k.name(),
                    reason: "overshoot correction is undefined for lattice increments".into(),
                });
            }
            if !self.template.is_hitting()
                && matches!(
                    k,
                    EstimatorKind::Hat
                        | EstimatorKind::Check
                        | EstimatorKind::GHat
                        | EstimatorKind::GCheck
                )
            {
                return Err(Error::NoThreshold(k.name()));
            }
        }
        for &d in &self.delta_grid {
            self.template.scheme(&self.model, d)?;
        }
        if self.template == SchemeTemplate::HittingOneSided && !(self.model.mean() > 0.0) {
            return Err(Error::NonPositiveMean(self.model.mean()));
        }
        Ok(())
    }

    /// Total number of simulated increments, ignoring the few steps past
    /// `t` used for the empirical sampling period.
    pub fn planned_increments(&self) -> u128 {
        self.delta_grid.len() as u128 * self.reps as u128 * self.t as u128
    }
}

/// One `(grid point, estimator)` row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub experiment_id: String,
    pub estimator: EstimatorKind,
    pub delta_target: f64,
    /// `sum tau_nu / sum nu` over replications, with `nu = N(t) + 1`.
    pub delta_empirical: f64,
    /// Hitting threshold; 0 for exogenous schemes.
    pub threshold: f64,
    pub t: u64,
    /// Replications used (after exclusions).
    pub reps: usize,
    pub mean_error: f64,
    pub mse: f64,
    pub se_mse: f64,
    pub re: f64,
    pub se_re: f64,
    pub excluded_frac: f64,
}

/// Per-grid-point covariance of squared errors across estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCovariance {
    pub delta_target: f64,
    pub estimators: Vec<EstimatorKind>,
    pub cov: Vec<Vec<f64>>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCSummary {
    pub rows: Vec<SummaryRow>,
    pub covariances: Vec<GridCovariance>,
    /// `sigma^2 / t`.
    pub full_sample_mse: f64,
    pub metadata: Vec<(String, String)>,
}

pub const SUMMARY_CSV_HEADER: &str =
    "experiment_id,estimator,delta_target,delta_empirical,Delta,t,reps,mse,se_mse,re,se_re,excluded_frac";

impl MCSummary {
    pub fn row(&self, kind: EstimatorKind, delta_target: f64) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == kind && r.delta_target == delta_target)
    }

    /// Rows for one estimator, in grid order.
    pub fn curve(&self, kind: EstimatorKind) -> Vec<&SummaryRow> {
        self.rows.iter().filter(|r| r.estimator == kind).collect()
    }

    pub fn grid(&self) -> Vec<f64> {
        self.covariances.iter().map(|c| c.delta_target).collect()
    }

    /// Standard error of `RE(a) - RE(b)` at one grid point, from the
    /// paired replications.
    pub fn paired_se(&self, a: EstimatorKind, b: EstimatorKind, delta_target: f64) -> Option<f64> {
        let g = self
            .covariances
            .iter()
            .find(|c| c.delta_target == delta_target)?;
        let i = g.estimators.iter().position(|k| *k == a)?;
        let j = g.estimators.iter().position(|k| *k == b)?;
        let var = g.cov[i][i] + g.cov[j][j] - 2.0 * g.cov[i][j];
        Some((var.max(0.0) / g.n.max(1) as f64).sqrt() / self.full_sample_mse)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{SUMMARY_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.experiment_id,
                r.estimator,
                r.delta_target,
                r.delta_empirical,
                r.threshold,
                r.t,
                r.reps,
                r.mse,
                r.se_mse,
                r.re,
                r.se_re,
                r.excluded_frac
            )?;
        }
        Ok(())
    }
}

/// Relative efficiency `MSE / (sigma^2 / t)`; for a point-mass model the
/// ratio is 0 when the estimator is exact and infinite otherwise.
fn relative(x: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        x / scale
    } else if x == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Walks one path up to `t` and on to the first event after `t`.
fn sweep_path(
    model: &IncrementModel,
    scheme: SamplingScheme,
    t: u64,
    stream: &RngStream,
) -> (RenewalTrace, Option<u64>) {
    let mut walker = PathWalker::new(model, scheme, stream);
    let mut events = Vec::new();
    while walker.time() < t {
        if let Some(e) = walker.step().event {
            events.push(e);
        }
    }
    // positive drift or exogenous epochs make this finite; the cap only
    // guards against a drift-free two-sided walk
    let cap = 1_000 * t.max(1_000);
    let next = walker.next_event(cap).map(|e| e.time);
    let trace = RenewalTrace {
        horizon: t,
        threshold: scheme.threshold(),
        kind: scheme.kind(),
        events,
        observed: true,
        grid_rounded: matches!(scheme, SamplingScheme::Exogenous(ia) if ia.is_rounded()),
    };
    (trace, next)
}

fn drift_estimate(trace: &RenewalTrace, kind: EstimatorKind, link: &RhoLink) -> Result<Estimate> {
    match kind {
        EstimatorKind::GHat => {
            overshoot_correct_with(&estimate(trace, EstimatorKind::Hat)?, trace.threshold, link)
        }
        EstimatorKind::GCheck => overshoot_correct_with(
            &estimate(trace, EstimatorKind::Check)?,
            trace.threshold,
            link,
        ),
        other => estimate(trace, other),
    }
}

struct RepOutcome {
    errors: Option<Vec<f64>>,
    tau_nu: Option<(u64, u64)>,
}

/// Relative efficiency of every requested estimator at every grid point.
///
/// A replication is excluded when it has no sample by `t` and some
/// requested estimator divides by the last sampling time; the excluded
/// fraction is reported per row.
pub fn re_sweep(spec: &ExperimentSpec) -> Result<MCSummary> {
    spec.validate()?;
    let mu = spec.model.mean();
    let full = spec.model.variance() / spec.t as f64;
    let link = RhoLink::for_model(&spec.model);
    let needs_tau = spec.estimators.iter().any(|k| {
        matches!(
            k,
            EstimatorKind::Bar | EstimatorKind::Hat | EstimatorKind::GHat
        )
    });
    let mut summary = MCSummary {
        rows: Vec::new(),
        covariances: Vec::new(),
        full_sample_mse: full,
        metadata: vec![
            ("experiment_id".into(), spec.id.clone()),
            ("seed".into(), spec.seed.to_string()),
            (
                "delta_rule".into(),
                "Delta = delta * mu for hitting schemes".into(),
            ),
        ],
    };
    if matches!(spec.template, SchemeTemplate::Exponential) {
        summary.metadata.push((
            "grid_rounded".into(),
            "exponential interarrivals rounded up to integers".into(),
        ));
    }
    for (g, &delta) in spec.delta_grid.iter().enumerate() {
        let scheme = spec.template.scheme(&spec.model, delta)?;
        let outcomes: Vec<RepOutcome> = (0..spec.reps as u64)
            .into_par_iter()
            .map(|rep| {
                let stream = RngStream::new(
                    spec.seed,
                    crate::distributions::StreamId::new(rep, g as u32, Purpose::Walk),
                )?;
                let (trace, next) = sweep_path(&spec.model, scheme, spec.t, &stream);
                let tau_nu = next.map(|time| (time, trace.count() as u64 + 1));
                if needs_tau && trace.count() == 0 {
                    return Ok(RepOutcome {
                        errors: None,
                        tau_nu,
                    });
                }
                let errors = spec
                    .estimators
                    .iter()
                    .map(|&k| drift_estimate(&trace, k, &link).map(|e| e.value - mu))
                    .collect::<Result<Vec<_>>>()?;
                Ok(RepOutcome {
                    errors: Some(errors),
                    tau_nu,
                })
            })
            .collect::<Result<_>>()?;

        let (mut sum_tau, mut sum_nu) = (0u128, 0u128);
        for o in &outcomes {
            if let Some((tau, nu)) = o.tau_nu {
                sum_tau += tau as u128;
                sum_nu += nu as u128;
            }
        }
        let delta_empirical = sum_tau as f64 / sum_nu as f64;
        let kept: Vec<&Vec<f64>> = outcomes.iter().filter_map(|o| o.errors.as_ref()).collect();
        let excluded_frac = 1.0 - kept.len() as f64 / spec.reps as f64;
        let squares: Vec<Vec<f64>> = kept
            .iter()
            .map(|e| e.iter().map(|x| x * x).collect())
            .collect();
        for (i, &kind) in spec.estimators.iter().enumerate() {
            let err: Running = kept.iter().map(|e| e[i]).collect();
            let sq: Running = squares.iter().map(|s| s[i]).collect();
            summary.rows.push(SummaryRow {
                experiment_id: spec.id.clone(),
                estimator: kind,
                delta_target: delta,
                delta_empirical,
                threshold: scheme.threshold(),
                t: spec.t,
                reps: kept.len(),
                mean_error: err.mean(),
                mse: sq.mean(),
                se_mse: sq.se(),
                re: relative(sq.mean(), full),
                se_re: relative(sq.se(), full),
                excluded_frac,
            });
        }
        summary.covariances.push(GridCovariance {
            delta_target: delta,
            estimators: spec.estimators.clone(),
            cov: covariance(&squares),
            n: squares.len(),
        });
    }
    Ok(summary)
}

/// Sup distance between the empirical CDF and the standard normal CDF.
pub fn ks_distance(sample: &[f64]) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidExperiment(
            "sample contains non-finite values".into(),
        ));
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        // ties: the empirical CDF jumps over the whole block at once
        let mut j = i;
        while j + 1 < xs.len() && xs[j + 1] == xs[i] {
            j += 1;
        }
        let f = norm_cdf(xs[i]);
        d = d.max((j + 1) as f64 / n - f).max(f - i as f64 / n);
        i = j + 1;
    }
    Ok(d)
}

/// Single-point CLT experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CltSpec {
    pub model: IncrementModel,
    pub scheme: SamplingScheme,
    pub t: u64,
    pub kind: EstimatorKind,
    pub reps: usize,
    pub seed: u64,
    /// Standardize by the per-replication `sigma_hat` with this `Gamma`
    /// instead of the model's `sigma`.
    pub sigma_gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CltReport {
    /// `(est - mu) / (sigma / sqrt(t))`.
    pub values: Vec<f64>,
    pub ks: f64,
    pub mean: f64,
    pub variance: f64,
    pub exclusions: usize,
    pub correction_skipped: usize,
}

pub fn clt_diagnostic(spec: &CltSpec) -> Result<CltReport> {
    if spec.reps < MIN_CLT_REPS {
        return Err(Error::InvalidExperiment(format!(
            "reps must be >= {MIN_CLT_REPS}, got {}",
            spec.reps
        )));
    }
    if spec.kind == EstimatorKind::Sigma {
        return Err(Error::UnsupportedEstimator {
            kind: "sigma",
            reason: "use sigma_consistency".into(),
        });
    }
    let mu = spec.model.mean();
    let sd = spec.model.sd();
    let root_t = (spec.t as f64).sqrt();
    let link = RhoLink::for_model(&spec.model);
    let observe = spec.kind.needs_observations();
    let outcomes: Vec<Option<(f64, bool)>> = (0..spec.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let stream = RngStream::of(spec.seed, rep, 0, Purpose::Walk);
            let (trace, scale) = match spec.sigma_gamma {
                Some(gamma) => {
                    let (tr, z) =
                        simulate_paired(&spec.model, spec.scheme, gamma, spec.t, &stream, observe)?;
                    let s = estimate_sigma(&tr, &z)?;
                    if s.status == Status::NoSample {
                        return Ok(None);
                    }
                    (tr, s.value)
                }
                None => (
                    simulate_trace(&spec.model, spec.scheme, spec.t, &stream, observe)?,
                    sd,
                ),
            };
            let est = drift_estimate(&trace, spec.kind, &link)?;
            if est.status == Status::NoSample {
                return Ok(None);
            }
            let z = if scale > 0.0 {
                (est.value - mu) * root_t / scale
            } else {
                0.0
            };
            Ok(Some((z, est.status == Status::CorrectionSkipped)))
        })
        .collect::<Result<_>>()?;
    let exclusions = outcomes.iter().filter(|o| o.is_none()).count();
    let correction_skipped = outcomes.iter().flatten().filter(|o| o.1).count();
    let values: Vec<f64> = outcomes.into_iter().flatten().map(|o| o.0).collect();
    let acc: Running = values.iter().copied().collect();
    Ok(CltReport {
        ks: ks_distance(&values)?,
        mean: acc.mean(),
        variance: acc.variance(),
        values,
        exclusions,
        correction_skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaReport {
    pub values: Vec<f64>,
    pub median: f64,
    /// `median |sigma_hat / sigma - 1|`.
    pub median_rel_error: f64,
    pub clamped: usize,
    pub exclusions: usize,
}

/// Sampling distribution of `sigma_hat` under a one-sided hitting scheme.
pub fn sigma_consistency(
    model: &IncrementModel,
    threshold: f64,
    gamma: f64,
    t: u64,
    reps: usize,
    seed: u64,
) -> Result<SigmaReport> {
    if reps == 0 {
        return Err(Error::InvalidExperiment("reps must be >= 1".into()));
    }
    let scheme = SamplingScheme::one_sided(threshold)?;
    let sd = model.sd();
    let outcomes: Vec<Estimate> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let stream = RngStream::of(seed, rep, 0, Purpose::Walk);
            let (tr, z) = simulate_paired(model, scheme, gamma, t, &stream, false)?;
            estimate_sigma(&tr, &z)
        })
        .collect::<Result<_>>()?;
    let clamped = outcomes.iter().filter(|e| e.clamped).count();
    let values: Vec<f64> = outcomes
        .iter()
        .filter(|e| e.has_value())
        .map(|e| e.value)
        .collect();
    let exclusions = reps - values.len();
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut rel: Vec<f64> = values.iter().map(|v| (v / sd - 1.0).abs()).collect();
    let mut sorted = values.clone();
    Ok(SigmaReport {
        median: median(&mut sorted),
        median_rel_error: median(&mut rel),
        values,
        clamped,
        exclusions,
    })
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClaimResult {
    pub claim: String,
    pub pass: bool,
    /// Worst standardized margin over the grid; positive means the claim
    /// holds with room to spare.
    pub margin: f64,
}

impl fmt::Display for ClaimResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} (margin {:.2} se)",
            if self.pass { "PASS" } else { "FAIL" },
            self.claim,
            self.margin
        )
    }
}

fn require(table: &MCSummary, kinds: &[EstimatorKind]) -> Result<()> {
    for k in kinds {
        if table.curve(*k).is_empty() {
            return Err(Error::UnsupportedEstimator {
                kind: k.name(),
                reason: "missing from the sweep table".into(),
            });
        }
    }
    if table.grid().len() < 3 {
        return Err(Error::InvalidExperiment(
            "ordering needs at least three grid points".into(),
        ));
    }
    Ok(())
}

/// `RE(a) <= RE(b)` at every grid point, or indistinguishable at
/// `ORDER_SE` paired standard errors.
fn dominates(table: &MCSummary, a: EstimatorKind, b: EstimatorKind) -> ClaimResult {
    let mut margin = f64::INFINITY;
    for d in table.grid() {
        let (ra, rb) = (table.row(a, d).expect("row"), table.row(b, d).expect("row"));
        let se = table.paired_se(a, b, d).unwrap_or(0.0);
        let m = if se > 0.0 {
            (rb.re - ra.re) / se
        } else if rb.re >= ra.re {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        margin = margin.min(m);
    }
    ClaimResult {
        claim: format!("RE({a}) <= RE({b}) at every delta"),
        pass: margin >= -ORDER_SE,
        margin,
    }
}

/// Standardized difference `(RE at x - RE at y) / se` for independent points.
fn exceeds(x: &SummaryRow, y: &SummaryRow) -> f64 {
    let se = (x.se_re.powi(2) + y.se_re.powi(2)).sqrt();
    if se > 0.0 {
        (x.re - y.re) / se
    } else if x.re > y.re {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    }
}

/// The four qualitative claims about the relative-efficiency curves.
pub fn ordering_report(table: &MCSummary) -> Result<Vec<ClaimResult>> {
    use EstimatorKind::*;
    require(table, &[Bar, Tilde, Hat, Check, GCheck])?;
    let mut out = vec![
        dominates(table, Bar, Tilde),
        dominates(table, GCheck, Check),
    ];

    let hat = table.curve(Hat);
    let m = exceeds(hat[0], hat[hat.len() - 1]);
    out.push(ClaimResult {
        claim: "RE(hat) at the largest delta < RE(hat) at the smallest delta".into(),
        pass: m > ORDER_SE,
        margin: m - ORDER_SE,
    });

    let check = table.curve(Check);
    let interior = &check[1..check.len() - 1];
    let min = interior
        .iter()
        .min_by(|a, b| a.re.total_cmp(&b.re))
        .expect("interior is nonempty");
    let left = exceeds(check[0], min);
    let right = exceeds(check[check.len() - 1], min);
    let m = left.min(right);
    out.push(ClaimResult {
        claim: format!(
            "RE(check) U-shaped: both extremes exceed the interior minimum at delta={}",
            min.delta_target
        ),
        pass: m > ORDER_SE,
        margin: m - ORDER_SE,
    });
    Ok(out)
}
