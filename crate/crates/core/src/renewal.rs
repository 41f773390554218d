//! Streaming simulation of random walks observed at sparse sampling times.
//!
//! Time is integer valued. A walk `S_t = X_1 + ... + X_t` is advanced one
//! step at a time and events are emitted online, so memory per replication
//! is proportional to the number of events, never to the horizon.

use std::io::Write;

use rand::Rng;
use rand_distr::Distribution;

use crate::distributions::{IncrementModel, IncrementSampler, Purpose, RngStream};
use crate::error::{Error, Result};

/// Interarrival law of an exogenous renewal sampler on the integer grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interarrival {
    /// `ceil(Exp(mean))`; the rounding puts it on the integer grid.
    Exponential {
        mean: f64,
    },
    /// Geometric on `{1, 2, ...}` with success probability `1/mean`.
    Geometric {
        mean: f64,
    },
    Deterministic {
        period: u64,
    },
}

impl Interarrival {
    pub fn exponential(mean: f64) -> Result<Self> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::InvalidScheme(format!(
                "exponential mean must be > 0, got {mean}"
            )));
        }
        Ok(Self::Exponential { mean })
    }

    pub fn geometric(mean: f64) -> Result<Self> {
        if !(mean.is_finite() && mean >= 1.0) {
            return Err(Error::InvalidScheme(format!(
                "geometric mean must be >= 1, got {mean}"
            )));
        }
        Ok(Self::Geometric { mean })
    }

    pub fn deterministic(period: u64) -> Result<Self> {
        if period == 0 {
            return Err(Error::InvalidScheme(
                "deterministic period must be >= 1".into(),
            ));
        }
        Ok(Self::Deterministic { period })
    }

    /// Success probability of the equivalent geometric law, if any.
    fn geometric_p(&self) -> Option<f64> {
        match *self {
            Self::Exponential { mean } => Some(-(-1.0 / mean).exp_m1()),
            Self::Geometric { mean } => Some(1.0 / mean),
            Self::Deterministic { .. } => None,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            Self::Deterministic { period } => period,
            Self::Exponential { mean } => {
                let u: f64 = 1.0 - rng.random::<f64>();
                ((-mean * u.ln()).ceil() as u64).max(1)
            }
            Self::Geometric { mean } => {
                let p = 1.0 / mean;
                if p >= 1.0 {
                    return 1;
                }
                let u: f64 = 1.0 - rng.random::<f64>();
                ((u.ln() / (-p).ln_1p()).ceil() as u64).max(1)
            }
        }
    }

    /// Exact mean of the grid-valued interarrival.
    pub fn grid_mean(&self) -> f64 {
        match self.geometric_p() {
            Some(p) => 1.0 / p,
            None => self.period_f64(),
        }
    }

    /// Exact `E[tau^2]` of the grid-valued interarrival.
    pub fn grid_second_moment(&self) -> f64 {
        match self.geometric_p() {
            Some(p) => (2.0 - p) / (p * p),
            None => self.period_f64().powi(2),
        }
    }

    pub fn grid_variance(&self) -> f64 {
        self.grid_second_moment() - self.grid_mean().powi(2)
    }

    /// True when continuous draws are rounded up onto the integer grid.
    pub fn is_rounded(&self) -> bool {
        matches!(self, Self::Exponential { .. })
    }

    fn period_f64(&self) -> f64 {
        match *self {
            Self::Deterministic { period } => period as f64,
            _ => unreachable!(),
        }
    }
}

/// How sampling times are generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingScheme {
    /// Sample when the walk has risen by `threshold` since the last sample.
    HittingOneSided { threshold: f64 },
    /// Sample when the walk has moved by `threshold` in either direction.
    HittingTwoSided { threshold: f64 },
    /// Sample at renewal epochs independent of the walk.
    Exogenous(Interarrival),
}

impl SamplingScheme {
    pub fn one_sided(threshold: f64) -> Result<Self> {
        Self::check_threshold(threshold)?;
        Ok(Self::HittingOneSided { threshold })
    }

    pub fn two_sided(threshold: f64) -> Result<Self> {
        Self::check_threshold(threshold)?;
        Ok(Self::HittingTwoSided { threshold })
    }

    fn check_threshold(threshold: f64) -> Result<()> {
        if threshold.is_finite() && threshold > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidScheme(format!(
                "threshold must be > 0, got {threshold}"
            )))
        }
    }

    /// The crossing threshold, or 0 for exogenous schemes.
    pub fn threshold(&self) -> f64 {
        match *self {
            Self::HittingOneSided { threshold } | Self::HittingTwoSided { threshold } => threshold,
            Self::Exogenous(_) => 0.0,
        }
    }

    pub fn kind(&self) -> TraceKind {
        match self {
            Self::HittingOneSided { .. } => TraceKind::OneSided,
            Self::HittingTwoSided { .. } => TraceKind::TwoSided,
            Self::Exogenous(_) => TraceKind::Exogenous,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    OneSided,
    TwoSided,
    Exogenous,
}

/// One sampling event.
///
/// `overshoot` and `value` are `None` on the one-bit channel, where only the
/// time and the crossing direction reach the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: u64,
    /// Upper crossing for two-sided schemes; always `true` otherwise.
    pub bit: bool,
    pub overshoot: Option<f64>,
    pub value: Option<f64>,
}

/// Event record of one simulated path up to a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewalTrace {
    pub horizon: u64,
    pub threshold: f64,
    pub kind: TraceKind,
    pub events: Vec<Event>,
    pub observed: bool,
    /// Exponential interarrivals were rounded up onto the integer grid.
    pub grid_rounded: bool,
}

impl RenewalTrace {
    /// `N(t)`.
    pub fn count(&self) -> usize {
        self.events.len()
    }

    /// `tau(t)`, 0 when there has been no event.
    pub fn last_time(&self) -> u64 {
        self.events.last().map_or(0, |e| e.time)
    }

    /// `S_{tau(t)}` when the walk was observed; 0 for an empty trace.
    pub fn last_value(&self) -> Option<f64> {
        if !self.observed {
            return None;
        }
        Some(self.events.last().map_or(0.0, |e| e.value.unwrap_or(0.0)))
    }

    /// Events with `tau_n <= t`, as seen at time `t <= horizon`.
    pub fn truncated(&self, t: u64) -> RenewalTrace {
        assert!(t <= self.horizon, "cannot extend a trace past its horizon");
        let end = self.events.partition_point(|e| e.time <= t);
        RenewalTrace {
            horizon: t,
            events: self.events[..end].to_vec(),
            ..self.clone()
        }
    }

    /// The same trace with walk values and overshoots discarded.
    pub fn bit_channel(&self) -> RenewalTrace {
        RenewalTrace {
            events: self
                .events
                .iter()
                .map(|e| Event {
                    overshoot: None,
                    value: None,
                    ..*e
                })
                .collect(),
            observed: false,
            ..self.clone()
        }
    }
}

/// Record of the first passage of a positive-drift walk over a level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstPassageRecord {
    /// `nu`: first index whose partial sum exceeds `level`.
    pub index: u64,
    /// Partial sum at `nu`.
    pub value: f64,
    /// Partial sum at `nu - 1` (0 when `nu = 1`).
    pub previous: f64,
    pub overshoot: f64,
    pub level: f64,
}

/// Hitting times of `Z_t = X_1^2 + ... + X_t^2` over steps of `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentTrace {
    pub horizon: u64,
    pub gamma: f64,
    pub events: Vec<u64>,
}

impl SecondMomentTrace {
    /// `M(t)`.
    pub fn count(&self) -> usize {
        self.events.len()
    }

    /// `theta(t)`, 0 when empty.
    pub fn last_time(&self) -> u64 {
        self.events.last().copied().unwrap_or(0)
    }

    pub fn truncated(&self, t: u64) -> SecondMomentTrace {
        assert!(t <= self.horizon, "cannot extend a trace past its horizon");
        let end = self.events.partition_point(|&e| e <= t);
        SecondMomentTrace {
            horizon: t,
            gamma: self.gamma,
            events: self.events[..end].to_vec(),
        }
    }
}

/// Summary accessors used by the estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStats {
    pub count: usize,
    pub last_time: u64,
    pub age: u64,
    /// `sum (2 z_n - 1)`.
    pub bit_sum: i64,
    /// `sum eta_n`; `None` on the one-bit channel.
    pub overshoot_sum: Option<f64>,
}

pub fn trace_stats(trace: &RenewalTrace) -> TraceStats {
    let bit_sum = trace
        .events
        .iter()
        .map(|e| if e.bit { 1 } else { -1 })
        .sum();
    let overshoot_sum = if trace.observed {
        Some(
            trace
                .events
                .iter()
                .map(|e| e.overshoot.unwrap_or(0.0))
                .sum(),
        )
    } else {
        None
    };
    TraceStats {
        count: trace.count(),
        last_time: trace.last_time(),
        age: trace.horizon - trace.last_time(),
        bit_sum,
        overshoot_sum,
    }
}

// ---------------------------------------------------------------------------
// Path walker

/// Step-by-step state of one path under a threshold scheme.
///
/// Crossing decisions use the displacement accumulated since the last
/// event, so the interarrival sequence is the same whether it is produced
/// here or by [`HittingInterarrival`] on the same stream.
#[derive(Debug, Clone)]
pub struct PathWalker {
    sampler: IncrementSampler,
    scheme: SamplingScheme,
    walk: RngStream,
    epochs: Option<RngStream>,
    time: u64,
    value: f64,
    displacement: f64,
    square_displacement: f64,
    gamma: Option<f64>,
    next_epoch: u64,
}

/// Outcome of one walker step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub time: u64,
    pub event: Option<Event>,
    pub square_event: bool,
}

impl PathWalker {
    /// `stream` drives the walk; exogenous epochs come from its
    /// [`Purpose::Interarrival`] sibling.
    pub fn new(model: &IncrementModel, scheme: SamplingScheme, stream: &RngStream) -> Self {
        let mut epochs = match scheme {
            SamplingScheme::Exogenous(_) => Some(stream.with_purpose(Purpose::Interarrival)),
            _ => None,
        };
        let next_epoch = match (&scheme, epochs.as_mut()) {
            (SamplingScheme::Exogenous(ia), Some(rng)) => ia.draw(rng),
            _ => 0,
        };
        Self {
            sampler: model.sampler(),
            scheme,
            walk: stream.clone(),
            epochs,
            time: 0,
            value: 0.0,
            displacement: 0.0,
            square_displacement: 0.0,
            gamma: None,
            next_epoch,
        }
    }

    /// Also track hitting times of the sum of squares over steps of `gamma`.
    pub fn with_second_moment(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn step(&mut self) -> Step {
        let x = self.sampler.sample(&mut self.walk);
        self.time += 1;
        self.value += x;
        self.displacement += x;
        let event = match self.scheme {
            SamplingScheme::HittingOneSided { threshold } => {
                (self.displacement >= threshold).then(|| {
                    let eta = self.displacement - threshold;
                    self.displacement = 0.0;
                    Event {
                        time: self.time,
                        bit: true,
                        overshoot: Some(eta),
                        value: Some(self.value),
                    }
                })
            }
            SamplingScheme::HittingTwoSided { threshold } => (self.displacement.abs() >= threshold)
                .then(|| {
                    let up = self.displacement >= threshold;
                    let eta = self.displacement.abs() - threshold;
                    self.displacement = 0.0;
                    Event {
                        time: self.time,
                        bit: up,
                        overshoot: Some(eta),
                        value: Some(self.value),
                    }
                }),
            SamplingScheme::Exogenous(ia) => (self.time == self.next_epoch).then(|| {
                let rng = self.epochs.as_mut().expect("exogenous epochs stream");
                self.next_epoch += ia.draw(rng);
                self.displacement = 0.0;
                Event {
                    time: self.time,
                    bit: true,
                    overshoot: Some(0.0),
                    value: Some(self.value),
                }
            }),
        };
        let square_event = match self.gamma {
            Some(gamma) => {
                self.square_displacement += x * x;
                if self.square_displacement >= gamma {
                    self.square_displacement = 0.0;
                    true
                } else {
                    false
                }
            }
            None => false,
        };
        Step {
            time: self.time,
            event,
            square_event,
        }
    }

    /// Steps until the next sampling event, giving up after `max_steps`.
    pub fn next_event(&mut self, max_steps: u64) -> Option<Event> {
        for _ in 0..max_steps {
            if let Some(e) = self.step().event {
                return Some(e);
            }
        }
        None
    }
}

fn hide(event: Event, observe: bool) -> Event {
    if observe {
        event
    } else {
        Event {
            overshoot: None,
            value: None,
            ..event
        }
    }
}

fn exogenous_epochs(ia: &Interarrival, t: u64, stream: &RngStream) -> Vec<Event> {
    let mut rng = stream.with_purpose(Purpose::Interarrival);
    let mut events = Vec::new();
    let mut time = ia.draw(&mut rng);
    while time <= t {
        events.push(Event {
            time,
            bit: true,
            overshoot: None,
            value: None,
        });
        time += ia.draw(&mut rng);
    }
    events
}

/// Simulates one path up to horizon `t`.
///
/// With `observe` off only `(tau_n, z_n)` are kept; the walk itself is
/// simulated exactly either way. Exogenous schemes with `observe` off skip
/// the walk altogether since nothing of it is recorded.
pub fn simulate_trace(
    model: &IncrementModel,
    scheme: SamplingScheme,
    t: u64,
    stream: &RngStream,
    observe: bool,
) -> Result<RenewalTrace> {
    if t == 0 {
        return Err(Error::InvalidScheme("horizon must be >= 1".into()));
    }
    let events = match (&scheme, observe) {
        (SamplingScheme::Exogenous(ia), false) => exogenous_epochs(ia, t, stream),
        _ => {
            let mut walker = PathWalker::new(model, scheme, stream);
            let mut events = Vec::new();
            while walker.time() < t {
                if let Some(e) = walker.step().event {
                    events.push(hide(e, observe));
                }
            }
            events
        }
    };
    Ok(RenewalTrace {
        horizon: t,
        threshold: scheme.threshold(),
        kind: scheme.kind(),
        events,
        observed: observe,
        grid_rounded: matches!(scheme, SamplingScheme::Exogenous(ia) if ia.is_rounded()),
    })
}

/// Hitting times of the sum of squares on the same draws that
/// [`simulate_trace`] would use for `stream`.
pub fn simulate_second_moment_trace(
    model: &IncrementModel,
    gamma: f64,
    t: u64,
    stream: &RngStream,
) -> Result<SecondMomentTrace> {
    let (_, z) = simulate_paired(
        model,
        SamplingScheme::HittingOneSided {
            threshold: f64::INFINITY,
        },
        gamma,
        t,
        stream,
        false,
    )?;
    Ok(z)
}

/// One path, two channels: the sampling trace and the sum-of-squares trace.
pub fn simulate_paired(
    model: &IncrementModel,
    scheme: SamplingScheme,
    gamma: f64,
    t: u64,
    stream: &RngStream,
    observe: bool,
) -> Result<(RenewalTrace, SecondMomentTrace)> {
    if t == 0 {
        return Err(Error::InvalidScheme("horizon must be >= 1".into()));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidScheme(format!(
            "gamma must be > 0, got {gamma}"
        )));
    }
    if model.second_moment() == 0.0 {
        return Err(Error::InvalidModel {
            name: "model",
            reason: "increments are identically zero".into(),
        });
    }
    let mut walker = PathWalker::new(model, scheme, stream).with_second_moment(gamma);
    let mut events = Vec::new();
    let mut thetas = Vec::new();
    while walker.time() < t {
        let step = walker.step();
        if let Some(e) = step.event {
            events.push(hide(e, observe));
        }
        if step.square_event {
            thetas.push(step.time);
        }
    }
    let trace = RenewalTrace {
        horizon: t,
        threshold: scheme.threshold(),
        kind: scheme.kind(),
        events,
        observed: observe,
        grid_rounded: matches!(scheme, SamplingScheme::Exogenous(ia) if ia.is_rounded()),
    };
    Ok((
        trace,
        SecondMomentTrace {
            horizon: t,
            gamma,
            events: thetas,
        },
    ))
}

// ---------------------------------------------------------------------------
// First passage

/// A positive-drift step law that can play the role of renewal
/// interarrivals.
pub trait StepDistribution {
    fn drift(&self) -> f64;

    /// `E[(tau^+)^2]` when known in closed form.
    fn positive_second_moment(&self) -> Option<f64>;

    /// `Var[tau]` when known (possibly asymptotically).
    fn step_variance(&self) -> Option<f64>;

    /// `P(tau > 0) = 1`.
    fn positive_steps(&self) -> bool;

    fn draw(&self, rng: &mut RngStream) -> f64;

    /// Draws `n` steps in order; implementors may override for speed.
    fn stepper(&self) -> Box<dyn FnMut(&mut RngStream) -> f64 + '_> {
        Box::new(move |rng| self.draw(rng))
    }
}

impl StepDistribution for IncrementModel {
    fn drift(&self) -> f64 {
        self.mean()
    }

    fn positive_second_moment(&self) -> Option<f64> {
        crate::distributions::moments(self)
            .pos_part_moment(2.0)
            .ok()
            .flatten()
    }

    fn step_variance(&self) -> Option<f64> {
        Some(self.variance())
    }

    fn positive_steps(&self) -> bool {
        self.has_positive_support()
    }

    fn draw(&self, rng: &mut RngStream) -> f64 {
        self.sample(rng)
    }

    fn stepper(&self) -> Box<dyn FnMut(&mut RngStream) -> f64 + '_> {
        let sampler = self.sampler();
        Box::new(move |rng| sampler.sample(rng))
    }
}

impl StepDistribution for Interarrival {
    fn drift(&self) -> f64 {
        self.grid_mean()
    }

    fn positive_second_moment(&self) -> Option<f64> {
        Some(self.grid_second_moment())
    }

    fn step_variance(&self) -> Option<f64> {
        Some(self.grid_variance())
    }

    fn positive_steps(&self) -> bool {
        true
    }

    fn draw(&self, rng: &mut RngStream) -> f64 {
        Interarrival::draw(self, rng) as f64
    }
}

/// Interarrival times of a one-sided hitting scheme, drawn by walking.
///
/// Drawing from the stream that drives [`simulate_trace`] reproduces that
/// trace's interarrival sequence exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingInterarrival {
    pub model: IncrementModel,
    pub threshold: f64,
}

impl HittingInterarrival {
    pub fn new(model: IncrementModel, threshold: f64) -> Result<Self> {
        SamplingScheme::check_threshold(threshold)?;
        if !(model.mean() > 0.0) {
            return Err(Error::NonPositiveMean(model.mean()));
        }
        Ok(Self { model, threshold })
    }

    /// `E[tau] = (threshold + E[eta]) / mu`, with `E[eta]` replaced by the
    /// limiting overshoot when it exists.
    pub fn approx_mean(&self) -> f64 {
        let rho = crate::distributions::rho_closed_form(&self.model).unwrap_or(0.0);
        (self.threshold + rho) / self.model.mean()
    }

    /// Large-threshold variance `(sigma^2 / mu^3) threshold`.
    pub fn approx_variance(&self) -> f64 {
        self.model.variance() / self.model.mean().powi(3) * self.threshold
    }
}

impl StepDistribution for HittingInterarrival {
    fn drift(&self) -> f64 {
        self.approx_mean()
    }

    fn positive_second_moment(&self) -> Option<f64> {
        Some(self.approx_variance() + self.approx_mean().powi(2))
    }

    fn step_variance(&self) -> Option<f64> {
        Some(self.approx_variance())
    }

    fn positive_steps(&self) -> bool {
        true
    }

    fn draw(&self, rng: &mut RngStream) -> f64 {
        self.stepper()(rng)
    }

    fn stepper(&self) -> Box<dyn FnMut(&mut RngStream) -> f64 + '_> {
        let sampler = self.model.sampler();
        let threshold = self.threshold;
        Box::new(move |rng| {
            let mut d = 0.0;
            let mut n = 0u64;
            while d < threshold {
                d += sampler.sample(rng);
                n += 1;
            }
            n as f64
        })
    }
}

/// First index at which the partial sums of `steps` strictly exceed `level`.
pub fn first_passage<D: StepDistribution + ?Sized>(
    steps: &D,
    level: f64,
    stream: &mut RngStream,
) -> Result<FirstPassageRecord> {
    let drift = steps.drift();
    if !(drift > 0.0) {
        return Err(Error::NonPositiveMean(drift));
    }
    if !(level >= 0.0) {
        return Err(Error::InvalidScheme(format!(
            "level must be >= 0, got {level}"
        )));
    }
    let mut next = steps.stepper();
    let (mut sum, mut previous, mut index) = (0.0, 0.0, 0u64);
    while sum <= level {
        previous = sum;
        sum += next(stream);
        index += 1;
    }
    Ok(FirstPassageRecord {
        index,
        value: sum,
        previous,
        overshoot: sum - level,
        level,
    })
}

// ---------------------------------------------------------------------------
// CSV dump

pub const TRACE_CSV_HEADER: &str = "rep,n,tau_n,z_n,eta_n,S_tau_n";

/// Writes one row per event; hidden fields are left empty.
pub fn write_trace_csv<W: Write>(
    out: &mut W,
    rep: u64,
    trace: &RenewalTrace,
) -> std::io::Result<()> {
    for (n, e) in trace.events.iter().enumerate() {
        let eta = e.overshoot.map(|v| v.to_string()).unwrap_or_default();
        let s = e.value.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{rep},{},{},{},{eta},{s}",
            n + 1,
            e.time,
            u8::from(e.bit)
        )?;
    }
    Ok(())
}
