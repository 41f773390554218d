//! K-sensor one-bit protocol: each sensor transmits a message whenever its
//! own walk has moved by its threshold, and a fusion center combines the
//! per-sensor drift estimates.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;

use crate::distributions::{IncrementModel, Purpose, RngStream};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate, fuse, overshoot_correct_with, sigma_from_parts, weights_from_sigmas, Estimate,
    EstimatorKind, RhoLink, Status,
};
use crate::renewal::{
    simulate_paired, simulate_trace, RenewalTrace, SamplingScheme, SecondMomentTrace,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    /// Keys the sensor's random stream.
    pub id: u32,
    pub model: IncrementModel,
    pub threshold: f64,
    /// Step of the sum-of-squares channel; `None` disables it.
    pub gamma: Option<f64>,
}

impl SensorSpec {
    pub fn new(id: u32, model: IncrementModel, threshold: f64, gamma: Option<f64>) -> Result<Self> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(Error::InvalidNetwork(format!(
                "sensor {id}: threshold must be > 0"
            )));
        }
        if let Some(g) = gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "sensor {id}: gamma must be > 0"
                )));
            }
        }
        Ok(Self {
            id,
            model,
            threshold,
            gamma,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightRule {
    /// `w_k` proportional to `sigma_k^{-2}` with the sensors' true `sigma_k`.
    InverseVariance,
    Equal,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub sensors: Vec<SensorSpec>,
    pub weights: Vec<f64>,
    pub two_sided: bool,
}

impl Network {
    pub fn new(sensors: Vec<SensorSpec>, rule: WeightRule, two_sided: bool) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::InvalidNetwork(
                "at least one sensor is required".into(),
            ));
        }
        let mut ids = BTreeSet::new();
        for s in &sensors {
            if !ids.insert(s.id) {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate sensor id {}",
                    s.id
                )));
            }
        }
        let mu = sensors[0].model.mean();
        if sensors.iter().any(|s| s.model.mean() != mu) {
            return Err(Error::InvalidNetwork(
                "all sensors must share the same mean".into(),
            ));
        }
        let k = sensors.len();
        let weights = match rule {
            WeightRule::Equal => vec![1.0 / k as f64; k],
            WeightRule::InverseVariance => {
                let sds: Vec<f64> = sensors.iter().map(|s| s.model.sd()).collect();
                weights_from_sigmas(&sds)?
            }
            WeightRule::Explicit(w) => {
                if w.len() != k {
                    return Err(Error::InvalidWeights(format!(
                        "{} weights for {k} sensors",
                        w.len()
                    )));
                }
                let total: f64 = w.iter().sum();
                if w.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidWeights(
                        "weights must be >= 0 and sum to 1".into(),
                    ));
                }
                w
            }
        };
        Ok(Self {
            sensors,
            weights,
            two_sided,
        })
    }

    pub fn mean(&self) -> f64 {
        self.sensors[0].model.mean()
    }

    /// `sqrt(sum w_k^2 sigma_k^2)`; divide by `sqrt(t)` for the fused sd.
    pub fn fused_scale(&self) -> f64 {
        self.sensors
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * w * s.model.variance())
            .sum::<f64>()
            .sqrt()
    }

    /// `sqrt(K) sigma` with `sigma^2 = sum sigma_k^2 / K`.
    pub fn pooled_scale(&self) -> f64 {
        let k = self.sensors.len() as f64;
        let s2 = self.sensors.iter().map(|s| s.model.variance()).sum::<f64>() / k;
        (k * s2).sqrt()
    }

    fn scheme(&self, s: &SensorSpec) -> SamplingScheme {
        if self.two_sided {
            SamplingScheme::HittingTwoSided {
                threshold: s.threshold,
            }
        } else {
            SamplingScheme::HittingOneSided {
                threshold: s.threshold,
            }
        }
    }

    fn sensor_stream(&self, seed: u64, rep: u64, s: &SensorSpec) -> Result<RngStream> {
        RngStream::new(
            seed,
            crate::distributions::StreamId::new(rep, s.id, Purpose::Walk),
        )
    }

    fn corrections_enabled(&self, links: &[RhoLink]) -> bool {
        !self.two_sided && links.iter().all(RhoLink::is_supported)
    }

    fn sigma_enabled(&self) -> bool {
        self.sensors.iter().all(|s| s.gamma.is_some())
    }
}

/// The message log of one sensor: hitting times and bits, plus the
/// sum-of-squares hitting times when that channel is active.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorLog {
    pub id: u32,
    pub trace: RenewalTrace,
    pub squares: Option<SecondMomentTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointResult {
    pub t: u64,
    /// Per-sensor Hat and Check, in sensor order.
    pub per_sensor: Vec<[Estimate; 2]>,
    /// Fused Hat, Check, then GHat, GCheck and Sigma when enabled.
    pub fused: Vec<Estimate>,
    pub total_bits: u64,
    /// Sensors without any message by `t`.
    pub exclusions: u64,
}

impl CheckpointResult {
    pub fn fused(&self, kind: EstimatorKind) -> Option<&Estimate> {
        self.fused.iter().find(|e| e.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRun {
    pub logs: Vec<SensorLog>,
    pub checkpoints: Vec<CheckpointResult>,
}

fn check_checkpoints(checkpoints: &[u64]) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidNetwork(
            "at least one checkpoint is required".into(),
        ));
    }
    if checkpoints[0] == 0 || checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidNetwork(
            "checkpoints must be >= 1 and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Runs replication `rep` of the protocol up to the last checkpoint.
pub fn run_network(net: &Network, checkpoints: &[u64], seed: u64, rep: u64) -> Result<NetworkRun> {
    check_checkpoints(checkpoints)?;
    let horizon = *checkpoints.last().expect("nonempty");
    let logs = net
        .sensors
        .iter()
        .map(|s| {
            let stream = net.sensor_stream(seed, rep, s)?;
            let scheme = net.scheme(s);
            let (trace, squares) = match s.gamma {
                Some(g) => {
                    let (tr, z) = simulate_paired(&s.model, scheme, g, horizon, &stream, false)?;
                    (tr, Some(z))
                }
                None => (
                    simulate_trace(&s.model, scheme, horizon, &stream, false)?,
                    None,
                ),
            };
            Ok(SensorLog {
                id: s.id,
                trace,
                squares,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let checkpoints = checkpoints
        .iter()
        .map(|&t| fuse_logs(net, &logs, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkRun { logs, checkpoints })
}

/// Fusion-center estimates at time `t` from message logs alone.
pub fn fuse_logs(net: &Network, logs: &[SensorLog], t: u64) -> Result<CheckpointResult> {
    let links: Vec<RhoLink> = net
        .sensors
        .iter()
        .map(|s| RhoLink::for_model(&s.model))
        .collect();
    let traces: Vec<RenewalTrace> = logs.iter().map(|l| l.trace.truncated(t)).collect();
    let squares: Vec<Option<SecondMomentTrace>> = logs
        .iter()
        .map(|l| l.squares.as_ref().map(|z| z.truncated(t)))
        .collect();

    let mut per_sensor = Vec::with_capacity(traces.len());
    for tr in &traces {
        per_sensor.push([
            estimate(tr, EstimatorKind::Hat)?,
            estimate(tr, EstimatorKind::Check)?,
        ]);
    }
    let hats: Vec<Estimate> = per_sensor.iter().map(|p| p[0]).collect();
    let checks: Vec<Estimate> = per_sensor.iter().map(|p| p[1]).collect();
    let fused_hat = fuse(&hats, &net.weights)?;
    let mut fused = vec![fused_hat, fuse(&checks, &net.weights)?];

    if net.corrections_enabled(&links) {
        for (kind, list) in [
            (EstimatorKind::GHat, &hats),
            (EstimatorKind::GCheck, &checks),
        ] {
            let corrected = list
                .iter()
                .zip(&net.sensors)
                .zip(&links)
                .map(|((e, s), link)| overshoot_correct_with(e, s.threshold, link))
                .collect::<Result<Vec<_>>>()?;
            let f = fuse(&corrected, &net.weights)?;
            debug_assert_eq!(f.kind, kind);
            fused.push(f);
        }
    }

    let mut total_bits: u64 = traces.iter().map(|t| t.count() as u64).sum();
    if net.sigma_enabled() {
        let zs: Vec<&SecondMomentTrace> = squares
            .iter()
            .map(|z| z.as_ref().expect("gamma set"))
            .collect();
        let m_total: u64 = zs.iter().map(|z| z.count() as u64).sum();
        total_bits += m_total;
        let n_messages = fused_hat.n_messages + m_total;
        let sigma = if fused_hat.status == Status::NoSample || zs.iter().any(|z| z.count() == 0) {
            Estimate {
                kind: EstimatorKind::Sigma,
                value: f64::NAN,
                n_messages,
                status: Status::NoSample,
                ..fused_hat
            }
        } else {
            let second: f64 = zs
                .iter()
                .zip(&net.weights)
                .map(|(z, w)| w * z.gamma * z.count() as f64 / z.last_time() as f64)
                .sum();
            sigma_from_parts(second, fused_hat.value, n_messages)
        };
        fused.push(sigma);
    }
    let exclusions = traces.iter().filter(|t| t.count() == 0).count() as u64;
    Ok(CheckpointResult {
        t,
        per_sensor,
        fused,
        total_bits,
        exclusions,
    })
}

/// Recomputes the fused estimates from fully observed traces with the
/// walk values and overshoots discarded, and compares them bit for bit
/// with the message-log estimates of `run`.
pub fn message_log_sufficient(
    net: &Network,
    run: &NetworkRun,
    seed: u64,
    rep: u64,
) -> Result<bool> {
    let horizon = run.checkpoints.last().map_or(0, |c| c.t);
    let logs = net
        .sensors
        .iter()
        .zip(&run.logs)
        .map(|(s, log)| {
            let stream = net.sensor_stream(seed, rep, s)?;
            let full = simulate_trace(&s.model, net.scheme(s), horizon, &stream, true)?;
            Ok(SensorLog {
                id: s.id,
                trace: full.bit_channel(),
                squares: log.squares.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for cp in &run.checkpoints {
        let again = fuse_logs(net, &logs, cp.t)?;
        let same = again.fused.len() == cp.fused.len()
            && again
                .fused
                .iter()
                .zip(&cp.fused)
                .all(|(a, b)| a.value.to_bits() == b.value.to_bits() && a.status == b.status);
        if !same {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Standardized fused Hat values over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCltSample {
    /// `(mu_hat - mu) / (sqrt(sum w_k^2 sigma_k^2) / sqrt(t))`.
    pub values: Vec<f64>,
    /// The same errors scaled by `sqrt(K) sigma / sqrt(t)`.
    pub pooled_values: Vec<f64>,
    pub exclusions: u64,
    /// Replications where the message-log recomputation differed.
    pub sufficiency_failures: u64,
}

/// Replications `0..reps` of the fused Hat at horizon `t`. With
/// `check_logs` set, each replication is also re-simulated with full
/// observation to confirm message-log sufficiency.
pub fn network_clt_sample(
    net: &Network,
    t: u64,
    reps: usize,
    seed: u64,
    check_logs: bool,
) -> Result<NetworkCltSample> {
    if reps < 100 {
        return Err(Error::InvalidExperiment(format!(
            "reps must be >= 100, got {reps}"
        )));
    }
    let mu = net.mean();
    let scale = net.fused_scale() / (t as f64).sqrt();
    let pooled = net.pooled_scale() / (t as f64).sqrt();
    let outcomes: Vec<(Estimate, bool)> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let run = run_network(net, &[t], seed, rep)?;
            let ok = !check_logs || message_log_sufficient(net, &run, seed, rep)?;
            let hat = *run.checkpoints[0]
                .fused(EstimatorKind::Hat)
                .expect("hat is always fused");
            Ok((hat, ok))
        })
        .collect::<Result<_>>()?;
    let mut sample = NetworkCltSample {
        values: Vec::with_capacity(reps),
        pooled_values: Vec::with_capacity(reps),
        exclusions: 0,
        sufficiency_failures: 0,
    };
    for (hat, ok) in outcomes {
        if !ok {
            sample.sufficiency_failures += 1;
        }
        if hat.status == Status::NoSample {
            sample.exclusions += 1;
            continue;
        }
        let err = hat.value - mu;
        sample
            .values
            .push(if scale > 0.0 { err / scale } else { 0.0 });
        sample
            .pooled_values
            .push(if pooled > 0.0 { err / pooled } else { 0.0 });
    }
    Ok(sample)
}

pub const NETWORK_CSV_HEADER: &str = "rep,checkpoint,estimator,value,total_bits,exclusions";

pub fn write_network_csv<W: Write>(out: &mut W, rep: u64, run: &NetworkRun) -> std::io::Result<()> {
    for cp in &run.checkpoints {
        for e in &cp.fused {
            writeln!(
                out,
                "{rep},{},{},{},{},{}",
                cp.t, e.kind, e.value, cp.total_bits, cp.exclusions
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn det_net(rule: WeightRule) -> Network {
        let m = IncrementModel::deterministic(4.0).unwrap();
        let sensors = vec![
            SensorSpec::new(0, m, 8.0, None).unwrap(),
            SensorSpec::new(1, m, 8.0, None).unwrap(),
        ];
        Network::new(sensors, rule, false).unwrap()
    }

    #[test]
    fn deterministic_pair() {
        let run = run_network(&det_net(WeightRule::Equal), &[7], 1, 0).unwrap();
        let cp = &run.checkpoints[0];
        assert_eq!(cp.fused(EstimatorKind::Hat).unwrap().value, 4.0);
        assert_eq!(cp.total_bits, 6);
        assert_eq!(cp.exclusions, 0);
    }

    #[test]
    fn explicit_weights_are_affine() {
        let m1 = IncrementModel::gaussian(4.0, 1.0).unwrap();
        let m2 = IncrementModel::gaussian(4.0, 2.0).unwrap();
        let sensors = vec![
            SensorSpec::new(0, m1, 20.0, None).unwrap(),
            SensorSpec::new(1, m2, 20.0, None).unwrap(),
        ];
        let net = Network::new(sensors, WeightRule::InverseVariance, false).unwrap();
        assert_relative_eq!(net.weights[0], 0.8, epsilon = 1e-15);
        let run = run_network(&net, &[500], 9, 3).unwrap();
        let cp = &run.checkpoints[0];
        let want = 0.8 * cp.per_sensor[0][0].value + 0.2 * cp.per_sensor[1][0].value;
        assert_relative_eq!(
            cp.fused(EstimatorKind::Hat).unwrap().value,
            want,
            epsilon = 1e-14
        );
    }

    #[test]
    fn validation() {
        let m = IncrementModel::deterministic(4.0).unwrap();
        assert!(Network::new(vec![], WeightRule::Equal, false).is_err());
        let dup = vec![
            SensorSpec::new(3, m, 8.0, None).unwrap(),
            SensorSpec::new(3, m, 8.0, None).unwrap(),
        ];
        assert!(Network::new(dup, WeightRule::Equal, false).is_err());
        assert!(run_network(&det_net(WeightRule::Equal), &[], 1, 0).is_err());
        assert!(run_network(&det_net(WeightRule::Equal), &[5, 5], 1, 0).is_err());
    }

    #[test]
    fn checkpoints_do_not_peek() {
        let run = run_network(&det_net(WeightRule::Equal), &[3, 5, 7], 1, 0).unwrap();
        let bits: Vec<u64> = run.checkpoints.iter().map(|c| c.total_bits).collect();
        assert_eq!(bits, vec![2, 4, 6]);
        let check = run.checkpoints[0]
            .fused(EstimatorKind::Check)
            .unwrap()
            .value;
        assert_relative_eq!(check, 8.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn two_sided_disables_corrections() {
        let m = IncrementModel::gaussian_curved(4.0, 4.0).unwrap();
        let sensors = vec![SensorSpec::new(0, m, 40.0, None).unwrap()];
        let net = Network::new(sensors, WeightRule::Equal, true).unwrap();
        let run = run_network(&net, &[1000], 1, 0).unwrap();
        assert!(run.checkpoints[0].fused(EstimatorKind::GHat).is_none());
        let one = Network {
            two_sided: false,
            ..net
        };
        let run = run_network(&one, &[1000], 1, 0).unwrap();
        assert!(run.checkpoints[0].fused(EstimatorKind::GHat).is_some());
    }

    #[test]
    fn deterministic_clt_sample_is_zero() {
        let net = det_net(WeightRule::Equal);
        let s = network_clt_sample(&net, 8, 100, 1, true).unwrap();
        assert!(s.values.iter().all(|v| *v == 0.0));
        assert_eq!((s.exclusions, s.sufficiency_failures), (0, 0));
        assert!(network_clt_sample(&net, 8, 10, 1, false).is_err());
    }
}
