//! Drift estimators formed from sampling traces, the overshoot correction,
//! the scale estimator and the weighted fusion rule.

use std::fmt;

use crate::distributions::{
    gaussian_w_constant, rho_closed_form, Family, IncrementModel, SERIES_TOL,
};
use crate::error::{Error, Result};
use crate::renewal::{trace_stats, RenewalTrace, SecondMomentTrace, TraceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    /// `S_{tau(t)} / tau(t)`
    Bar,
    /// `S_{tau(t)} / t`
    Tilde,
    /// `N(t) Delta / tau(t)`
    Hat,
    /// `N(t) Delta / t`
    Check,
    /// `g(Hat)`
    GHat,
    /// `g(Check)`
    GCheck,
    Sigma,
}

impl EstimatorKind {
    pub const DRIFT: [EstimatorKind; 6] = [
        EstimatorKind::Bar,
        EstimatorKind::Tilde,
        EstimatorKind::Hat,
        EstimatorKind::Check,
        EstimatorKind::GHat,
        EstimatorKind::GCheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Bar => "bar",
            EstimatorKind::Tilde => "tilde",
            EstimatorKind::Hat => "hat",
            EstimatorKind::Check => "check",
            EstimatorKind::GHat => "g_hat",
            EstimatorKind::GCheck => "g_check",
            EstimatorKind::Sigma => "sigma",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::DRIFT
            .iter()
            .chain(std::iter::once(&EstimatorKind::Sigma))
            .copied()
            .find(|k| k.name() == s)
    }

    /// Needs the walk values (or overshoots) at sampling times.
    pub fn needs_observations(&self) -> bool {
        matches!(self, EstimatorKind::Bar | EstimatorKind::Tilde)
    }

    /// Needs the increment family for the overshoot correction.
    pub fn needs_distribution(&self) -> bool {
        matches!(self, EstimatorKind::GHat | EstimatorKind::GCheck)
    }

    fn denominator(&self) -> Denominator {
        match self {
            EstimatorKind::Bar
            | EstimatorKind::Hat
            | EstimatorKind::GHat
            | EstimatorKind::Sigma => Denominator::LastSampleTime,
            EstimatorKind::Tilde | EstimatorKind::Check | EstimatorKind::GCheck => {
                Denominator::Horizon
            }
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Denominator {
    LastSampleTime,
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// No sample yet and the estimator divides by `tau(t)`.
    NoSample,
    /// The overshoot correction could not be applied; value passed through.
    CorrectionSkipped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub kind: EstimatorKind,
    /// NaN iff `status == NoSample`.
    pub value: f64,
    pub n_messages: u64,
    pub denominator: Denominator,
    pub status: Status,
    /// The scale estimator's radicand was negative and clamped to zero.
    pub clamped: bool,
}

impl Estimate {
    fn new(kind: EstimatorKind, value: f64, n_messages: u64) -> Self {
        Self {
            kind,
            value,
            n_messages,
            denominator: kind.denominator(),
            status: Status::Ok,
            clamped: false,
        }
    }

    fn no_sample(kind: EstimatorKind, n_messages: u64) -> Self {
        Self {
            status: Status::NoSample,
            ..Self::new(kind, f64::NAN, n_messages)
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn has_value(&self) -> bool {
        self.status != Status::NoSample
    }
}

/// Bar, Tilde, Hat or Check from a trace.
pub fn estimate(trace: &RenewalTrace, kind: EstimatorKind) -> Result<Estimate> {
    let st = trace_stats(trace);
    let n = st.count as u64;
    let t = trace.horizon as f64;
    let tau = st.last_time as f64;
    match kind {
        EstimatorKind::Bar | EstimatorKind::Tilde => {
            let s = trace
                .last_value()
                .ok_or(Error::MissingObservations(kind.name()))?;
            if kind == EstimatorKind::Tilde {
                Ok(Estimate::new(kind, s / t, n))
            } else if n == 0 {
                Ok(Estimate::no_sample(kind, n))
            } else {
                Ok(Estimate::new(kind, s / tau, n))
            }
        }
        EstimatorKind::Hat | EstimatorKind::Check => {
            let signed = match trace.kind {
                TraceKind::OneSided => n as f64,
                TraceKind::TwoSided => st.bit_sum as f64,
                TraceKind::Exogenous => return Err(Error::NoThreshold(kind.name())),
            };
            let total = signed * trace.threshold;
            if kind == EstimatorKind::Check {
                Ok(Estimate::new(kind, total / t, n))
            } else if n == 0 {
                Ok(Estimate::no_sample(kind, n))
            } else {
                Ok(Estimate::new(kind, total / tau, n))
            }
        }
        other => Err(Error::UnsupportedEstimator {
            kind: other.name(),
            reason: "use overshoot_correct or estimate_sigma".into(),
        }),
    }
}

/// `x -> rho(x)` under the family's variance link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoLink {
    /// `rho(x) = w x`; curved Gaussian, Gamma and point masses.
    Proportional(f64),
    /// Gaussian with fixed standard deviation: the full series at each `x`.
    FixedSd(f64),
    Unsupported,
}

impl RhoLink {
    pub fn for_model(model: &IncrementModel) -> Self {
        match model.family() {
            Family::GaussianCurved { c, .. } => {
                RhoLink::Proportional(gaussian_w_constant(c, SERIES_TOL).expect("c > 0"))
            }
            Family::Gamma { shape, .. } => RhoLink::Proportional((1.0 + 1.0 / shape) / 2.0),
            Family::Deterministic { .. } => RhoLink::Proportional(0.5),
            Family::Gaussian { sd, .. } => RhoLink::FixedSd(sd),
            Family::TwoPointLattice { .. } => RhoLink::Unsupported,
        }
    }

    /// `rho(x)`, or `None` where it is undefined (`x <= 0`, lattice).
    pub fn rho(&self, x: f64) -> Option<f64> {
        if !(x > 0.0) || !x.is_finite() {
            return None;
        }
        match *self {
            RhoLink::Proportional(w) => Some(w * x),
            RhoLink::FixedSd(sd) => IncrementModel::gaussian(x, sd)
                .ok()
                .and_then(|m| rho_closed_form(&m).ok()),
            RhoLink::Unsupported => None,
        }
    }

    pub fn is_supported(&self) -> bool {
        !matches!(self, RhoLink::Unsupported)
    }
}

/// `g(x) = x (1 + rho(x) / Delta)` applied to a Hat or Check estimate.
pub fn overshoot_correct(
    est: &Estimate,
    threshold: f64,
    model: &IncrementModel,
) -> Result<Estimate> {
    overshoot_correct_with(est, threshold, &RhoLink::for_model(model))
}

/// [`overshoot_correct`] with a precomputed link.
pub fn overshoot_correct_with(est: &Estimate, threshold: f64, link: &RhoLink) -> Result<Estimate> {
    let kind = match est.kind {
        EstimatorKind::Hat => EstimatorKind::GHat,
        EstimatorKind::Check => EstimatorKind::GCheck,
        other => {
            return Err(Error::UnsupportedEstimator {
                kind: other.name(),
                reason: "overshoot correction applies to hat and check only".into(),
            })
        }
    };
    if !(threshold > 0.0) {
        return Err(Error::NoThreshold(kind.name()));
    }
    let mut out = Estimate { kind, ..*est };
    if est.status == Status::NoSample {
        return Ok(out);
    }
    match link.rho(est.value) {
        Some(rho) => out.value = est.value * (1.0 + rho / threshold),
        None => out.status = Status::CorrectionSkipped,
    }
    Ok(out)
}

/// `sqrt(Gamma M(t) / theta(t) - Hat^2)`, radicand clamped at zero.
pub fn estimate_sigma(mu_trace: &RenewalTrace, z_trace: &SecondMomentTrace) -> Result<Estimate> {
    if mu_trace.horizon != z_trace.horizon {
        return Err(Error::UnsupportedEstimator {
            kind: "sigma",
            reason: format!(
                "horizons differ ({} vs {})",
                mu_trace.horizon, z_trace.horizon
            ),
        });
    }
    let n_messages = (mu_trace.count() + z_trace.count()) as u64;
    let hat = estimate(mu_trace, EstimatorKind::Hat)?;
    if hat.status == Status::NoSample || z_trace.count() == 0 {
        return Ok(Estimate::no_sample(EstimatorKind::Sigma, n_messages));
    }
    let second = z_trace.gamma * z_trace.count() as f64 / z_trace.last_time() as f64;
    Ok(sigma_from_parts(second, hat.value, n_messages))
}

pub(crate) fn sigma_from_parts(second_moment: f64, mean: f64, n_messages: u64) -> Estimate {
    let radicand = second_moment - mean * mean;
    let mut est = Estimate::new(EstimatorKind::Sigma, radicand.max(0.0).sqrt(), n_messages);
    est.clamped = radicand < 0.0;
    est
}

/// `w_k = sigma_k^{-2} / sum_j sigma_j^{-2}`.
pub fn weights_from_sigmas(sigmas: &[f64]) -> Result<Vec<f64>> {
    if sigmas.is_empty() {
        return Err(Error::InvalidWeights("no standard deviations given".into()));
    }
    if let Some(bad) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidWeights(format!(
            "sigma must be > 0, got {bad}"
        )));
    }
    let precisions: Vec<f64> = sigmas.iter().map(|s| 1.0 / (s * s)).collect();
    let total: f64 = precisions.iter().sum();
    Ok(precisions.into_iter().map(|p| p / total).collect())
}

/// Weighted combination of per-sensor estimates of the same kind.
pub fn fuse(estimates: &[Estimate], weights: &[f64]) -> Result<Estimate> {
    if estimates.is_empty() || estimates.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} estimates vs {} weights",
            estimates.len(),
            weights.len()
        )));
    }
    let kind = estimates[0].kind;
    if estimates.iter().any(|e| e.kind != kind) {
        return Err(Error::InvalidWeights(
            "cannot fuse estimates of different kinds".into(),
        ));
    }
    let n_messages = estimates.iter().map(|e| e.n_messages).sum();
    if estimates.iter().any(|e| e.status == Status::NoSample) {
        return Ok(Estimate::no_sample(kind, n_messages));
    }
    let value = estimates
        .iter()
        .zip(weights)
        .map(|(e, w)| w * e.value)
        .sum();
    let mut out = Estimate::new(kind, value, n_messages);
    if estimates
        .iter()
        .any(|e| e.status == Status::CorrectionSkipped)
    {
        out.status = Status::CorrectionSkipped;
    }
    Ok(out)
}
