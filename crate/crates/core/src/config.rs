//! TOML run configuration. Unknown keys are errors, and every validation
//! error names the offending key.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::distributions::IncrementModel;
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::fusion::{Network, SensorSpec, WeightRule};
use crate::harness::{CltSpec, ExperimentSpec, SchemeTemplate, MIN_CLT_REPS};
use crate::renewal::{Interarrival, SamplingScheme};
use crate::theory::LrFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Sweep,
    Clt,
    Verify,
    Fusion,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Sweep => "sweep",
            Self::Clt => "clt",
            Self::Verify => "verify",
            Self::Fusion => "fusion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub reps: usize,
    pub output_dir: Option<PathBuf>,
    pub model: Option<ModelConfig>,
    pub sweep: Option<SweepConfig>,
    pub clt: Option<CltConfig>,
    pub verify: Option<VerifyConfig>,
    pub fusion: Option<FusionConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: String,
    pub mu: Option<f64>,
    pub c: Option<f64>,
    pub sigma: Option<f64>,
    pub shape: Option<f64>,
    pub rate: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub id: String,
    pub scheme: String,
    pub t: u64,
    pub deltas: Vec<f64>,
    pub estimators: Vec<String>,
    #[serde(default)]
    pub ordering: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltConfig {
    pub id: Option<String>,
    pub t: u64,
    pub estimator: String,
    #[serde(default)]
    pub two_sided: bool,
    pub threshold: Option<f64>,
    /// `Delta = mu t^e`.
    pub threshold_exponent: Option<f64>,
    pub sigma_gamma: Option<f64>,
    pub ks_max: Option<f64>,
    pub mean_abs_max: Option<f64>,
    pub rel_error_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterarrivalConfig {
    pub law: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub family: String,
    #[serde(default = "one")]
    pub r: f64,
    /// `(delta, t)` pairs.
    pub grid: Vec<(f64, u64)>,
    pub reps: Option<usize>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub id: Option<String>,
    /// Step law for the Wald and Lorden checks instead of the model.
    pub interarrival: Option<InterarrivalConfig>,
    pub wald_levels: Option<Vec<f64>>,
    pub lorden_levels: Option<Vec<f64>>,
    pub age_horizons: Option<Vec<u64>>,
    #[serde(default)]
    pub rate: Vec<GridConfig>,
    #[serde(default)]
    pub anscombe: Vec<GridConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub id: u32,
    pub family: String,
    pub mu: Option<f64>,
    pub c: Option<f64>,
    pub sigma: Option<f64>,
    pub shape: Option<f64>,
    pub rate: Option<f64>,
    #[serde(alias = "delta")]
    pub threshold: f64,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub id: Option<String>,
    pub checkpoints: Vec<u64>,
    #[serde(default = "inverse_variance")]
    pub weights: String,
    pub explicit_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub two_sided: bool,
    #[serde(default)]
    pub check_logs: bool,
    pub ks_max: Option<f64>,
    pub sensor: Vec<SensorConfig>,
}

fn inverse_variance() -> String {
    "inverse_variance".into()
}

fn cfg_err(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Relabels a domain error with the config key it came from.
fn at<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => cfg_err(key, other.to_string()),
    })
}

/// The key on the line a parse error points at, if any.
fn key_at(text: &str, offset: usize) -> Option<String> {
    let start = text[..offset.min(text.len())]
        .rfind('\n')
        .map_or(0, |i| i + 1);
    let line = text[start..].lines().next()?;
    let key = line.split('=').next()?.trim().trim_matches(['[', ']']);
    (!key.is_empty()).then(|| key.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .and_then(|s| key_at(text, s.start))
                .unwrap_or_else(|| "<root>".into());
            cfg_err(key, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err("--config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks everything that can be checked without simulating.
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(cfg_err("reps", "must be >= 1"));
        }
        match self.kind {
            ExperimentKind::Sweep => {
                self.sweep_spec()?;
            }
            ExperimentKind::Clt => {
                self.clt_plan()?;
            }
            ExperimentKind::Verify => {
                self.verify_plan()?;
            }
            ExperimentKind::Fusion => {
                self.network()?;
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<IncrementModel> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| cfg_err("model", "section is required"))?;
        m.build("model")
    }

    fn section<'a, T>(&self, s: &'a Option<T>, name: &str) -> Result<&'a T> {
        s.as_ref().ok_or_else(|| {
            cfg_err(
                name,
                format!("section is required for kind = \"{}\"", self.kind.name()),
            )
        })
    }

    pub fn sweep_spec(&self) -> Result<ExperimentSpec> {
        let s = self.section(&self.sweep, "sweep")?;
        let template = SchemeTemplate::parse(&s.scheme)
            .ok_or_else(|| cfg_err("sweep.scheme", format!("unknown scheme \"{}\"", s.scheme)))?;
        let estimators = s
            .estimators
            .iter()
            .map(|e| {
                EstimatorKind::parse(e).ok_or_else(|| {
                    cfg_err("sweep.estimators", format!("unknown estimator \"{e}\""))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = ExperimentSpec {
            id: s.id.clone(),
            model: self.model()?,
            template,
            delta_grid: s.deltas.clone(),
            t: s.t,
            estimators,
            reps: self.reps,
            seed: self.seed,
        };
        at("sweep", spec.validate())?;
        if s.ordering {
            use EstimatorKind::*;
            for k in [Bar, Tilde, Hat, Check, GCheck] {
                if !spec.estimators.contains(&k) {
                    return Err(cfg_err(
                        "sweep.estimators",
                        format!("ordering requires \"{k}\""),
                    ));
                }
            }
            if spec.delta_grid.len() < 3 {
                return Err(cfg_err(
                    "sweep.deltas",
                    "ordering requires at least three grid points",
                ));
            }
        }
        Ok(spec)
    }

    pub fn clt_plan(&self) -> Result<CltPlan> {
        let c = self.section(&self.clt, "clt")?;
        if self.reps < MIN_CLT_REPS {
            return Err(cfg_err(
                "reps",
                format!("must be >= {MIN_CLT_REPS} for clt, got {}", self.reps),
            ));
        }
        if c.t == 0 {
            return Err(cfg_err("clt.t", "must be >= 1"));
        }
        let model = self.model()?;
        let kind = EstimatorKind::parse(&c.estimator).ok_or_else(|| {
            cfg_err(
                "clt.estimator",
                format!("unknown estimator \"{}\"", c.estimator),
            )
        })?;
        let threshold = match (c.threshold, c.threshold_exponent) {
            (Some(d), None) => d,
            (None, Some(e)) => model.mean() * (c.t as f64).powf(e),
            _ => {
                return Err(cfg_err(
                    "clt.threshold",
                    "give exactly one of threshold or threshold_exponent",
                ))
            }
        };
        let scheme = if c.two_sided {
            at("clt.threshold", SamplingScheme::two_sided(threshold))?
        } else {
            at("clt.threshold", SamplingScheme::one_sided(threshold))?
        };
        if kind.needs_distribution()
            && !crate::estimators::RhoLink::for_model(&model).is_supported()
        {
            return Err(cfg_err(
                "clt.estimator",
                "overshoot correction is undefined for lattice increments",
            ));
        }
        if kind == EstimatorKind::Sigma && c.two_sided {
            return Err(cfg_err(
                "clt.two_sided",
                "the scale estimator uses the one-sided scheme",
            ));
        }
        let sigma_gamma = match (kind, c.sigma_gamma) {
            (EstimatorKind::Sigma, None) => Some(threshold),
            (_, g) => g,
        };
        if let Some(g) = sigma_gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(cfg_err("clt.sigma_gamma", "must be > 0"));
            }
        }
        Ok(CltPlan {
            id: c
                .id
                .clone()
                .unwrap_or_else(|| format!("clt_{}", kind.name())),
            spec: CltSpec {
                model,
                scheme,
                t: c.t,
                kind,
                reps: self.reps,
                seed: self.seed,
                sigma_gamma,
            },
            threshold,
            ks_max: c.ks_max,
            mean_abs_max: c.mean_abs_max,
            rel_error_max: c.rel_error_max,
        })
    }

    pub fn verify_plan(&self) -> Result<VerifyPlan> {
        let v = self.section(&self.verify, "verify")?;
        let steps = match &v.interarrival {
            Some(ia) => VerifySteps::Interarrival(build_interarrival(ia, "verify.interarrival")?),
            None => VerifySteps::Model(self.model()?),
        };
        if let (Some(_), VerifySteps::Model(_)) = (&v.age_horizons, &steps) {
            return Err(cfg_err(
                "verify.age_horizons",
                "requires verify.interarrival",
            ));
        }
        let mut rates = Vec::new();
        for (i, g) in v.rate.iter().enumerate() {
            rates.push(self.grid_plan(g, &format!("verify.rate[{i}]"))?);
        }
        let mut anscombe = Vec::new();
        for (i, g) in v.anscombe.iter().enumerate() {
            anscombe.push(self.grid_plan(g, &format!("verify.anscombe[{i}]"))?);
        }
        for (key, levels) in [
            ("verify.wald_levels", &v.wald_levels),
            ("verify.lorden_levels", &v.lorden_levels),
        ] {
            if let Some(l) = levels {
                if l.is_empty()
                    || l.windows(2).any(|w| w[1] <= w[0])
                    || l.iter().any(|x| !(*x >= 0.0))
                {
                    return Err(cfg_err(
                        key,
                        "levels must be nonempty, >= 0 and strictly increasing",
                    ));
                }
            }
        }
        if self.reps < 2 {
            return Err(cfg_err("reps", "verify needs at least two replications"));
        }
        Ok(VerifyPlan {
            id: v.id.clone().unwrap_or_else(|| "verify".into()),
            steps,
            wald_levels: v.wald_levels.clone(),
            lorden_levels: v.lorden_levels.clone(),
            age_horizons: v.age_horizons.clone(),
            rates,
            anscombe,
        })
    }

    fn grid_plan(&self, g: &GridConfig, key: &str) -> Result<GridPlan> {
        let family = match g.family.as_str() {
            "hitting" => LrFamily::Hitting(self.model()?),
            "exponential" => LrFamily::Exponential,
            "geometric" => LrFamily::Geometric,
            "deterministic" => LrFamily::Deterministic,
            other => {
                return Err(cfg_err(
                    format!("{key}.family"),
                    format!("unknown family \"{other}\""),
                ))
            }
        };
        if g.grid.is_empty() {
            return Err(cfg_err(format!("{key}.grid"), "must be nonempty"));
        }
        for &(d, _) in &g.grid {
            at(&format!("{key}.grid"), family.source(d))?;
        }
        Ok(GridPlan {
            family,
            r: g.r,
            grid: g.grid.clone(),
            reps: g.reps.unwrap_or(self.reps),
        })
    }

    pub fn network(&self) -> Result<FusionPlan> {
        let f = self.section(&self.fusion, "fusion")?;
        let mut sensors = Vec::new();
        for (i, s) in f.sensor.iter().enumerate() {
            let key = format!("fusion.sensor[{i}]");
            let model = ModelConfig {
                family: s.family.clone(),
                mu: s.mu,
                c: s.c,
                sigma: s.sigma,
                shape: s.shape,
                rate: s.rate,
                ..Default::default()
            }
            .build(&key)?;
            sensors.push(at(
                &format!("{key}.threshold"),
                SensorSpec::new(s.id, model, s.threshold, s.gamma),
            )?);
        }
        let rule = match (f.weights.as_str(), &f.explicit_weights) {
            ("inverse_variance", None) => WeightRule::InverseVariance,
            ("equal", None) => WeightRule::Equal,
            ("explicit", Some(w)) => WeightRule::Explicit(w.clone()),
            ("explicit", None) => {
                return Err(cfg_err(
                    "fusion.explicit_weights",
                    "required when weights = \"explicit\"",
                ))
            }
            (_, Some(_)) => {
                return Err(cfg_err(
                    "fusion.explicit_weights",
                    "only allowed with weights = \"explicit\"",
                ))
            }
            (other, None) => {
                return Err(cfg_err(
                    "fusion.weights",
                    format!("unknown weight rule \"{other}\""),
                ))
            }
        };
        let network = at("fusion.sensor", Network::new(sensors, rule, f.two_sided))?;
        if f.checkpoints.is_empty()
            || f.checkpoints[0] == 0
            || f.checkpoints.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(cfg_err(
                "fusion.checkpoints",
                "must be nonempty, >= 1 and strictly increasing",
            ));
        }
        if f.ks_max.is_some() && self.reps < MIN_CLT_REPS {
            return Err(cfg_err(
                "reps",
                format!("must be >= {MIN_CLT_REPS} when fusion.ks_max is set"),
            ));
        }
        Ok(FusionPlan {
            id: f.id.clone().unwrap_or_else(|| "fusion".into()),
            network,
            checkpoints: f.checkpoints.clone(),
            check_logs: f.check_logs,
            ks_max: f.ks_max,
        })
    }
}

impl ModelConfig {
    pub fn build(&self, key: &str) -> Result<IncrementModel> {
        let need = |v: Option<f64>, field: &str| {
            v.ok_or_else(|| cfg_err(format!("{key}.{field}"), "is required for this family"))
        };
        let allowed: &[&str] = match self.family.as_str() {
            "gaussian_curved" => &["mu", "c"],
            "gaussian" => &["mu", "sigma"],
            "gamma" => &["shape", "rate"],
            "deterministic" => &["mu"],
            "two_point_lattice" => &["a", "b", "p"],
            other => {
                return Err(cfg_err(
                    format!("{key}.family"),
                    format!("unknown family \"{other}\""),
                ))
            }
        };
        let given = [
            ("mu", self.mu),
            ("c", self.c),
            ("sigma", self.sigma),
            ("shape", self.shape),
            ("rate", self.rate),
            ("a", self.a),
            ("b", self.b),
            ("p", self.p),
        ];
        for (field, v) in given {
            if v.is_some() && !allowed.contains(&field) {
                return Err(cfg_err(
                    format!("{key}.{field}"),
                    format!("not a parameter of family \"{}\"", self.family),
                ));
            }
        }
        let model = match self.family.as_str() {
            "gaussian_curved" => {
                IncrementModel::gaussian_curved(need(self.mu, "mu")?, need(self.c, "c")?)
            }
            "gaussian" => {
                IncrementModel::gaussian(need(self.mu, "mu")?, need(self.sigma, "sigma")?)
            }
            "gamma" => IncrementModel::gamma(need(self.shape, "shape")?, need(self.rate, "rate")?),
            "deterministic" => IncrementModel::deterministic(need(self.mu, "mu")?),
            _ => IncrementModel::two_point_lattice(
                need(self.a, "a")?,
                need(self.b, "b")?,
                need(self.p, "p")?,
            ),
        };
        model.map_err(|e| match e {
            Error::InvalidModel { name, reason } => cfg_err(format!("{key}.{name}"), reason),
            other => cfg_err(key, other.to_string()),
        })
    }
}

fn build_interarrival(c: &InterarrivalConfig, key: &str) -> Result<Interarrival> {
    let r = match c.law.as_str() {
        "exponential" => Interarrival::exponential(c.delta),
        "geometric" => Interarrival::geometric(c.delta),
        "deterministic" if c.delta.fract() == 0.0 && c.delta >= 1.0 => {
            Interarrival::deterministic(c.delta as u64)
        }
        "deterministic" => {
            return Err(cfg_err(
                format!("{key}.delta"),
                "must be a positive integer",
            ))
        }
        other => {
            return Err(cfg_err(
                format!("{key}.law"),
                format!("unknown law \"{other}\""),
            ))
        }
    };
    at(&format!("{key}.delta"), r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CltPlan {
    pub id: String,
    pub spec: CltSpec,
    pub threshold: f64,
    pub ks_max: Option<f64>,
    pub mean_abs_max: Option<f64>,
    pub rel_error_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VerifySteps {
    Model(IncrementModel),
    Interarrival(Interarrival),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPlan {
    pub family: LrFamily,
    pub r: f64,
    pub grid: Vec<(f64, u64)>,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyPlan {
    pub id: String,
    pub steps: VerifySteps,
    pub wald_levels: Option<Vec<f64>>,
    pub lorden_levels: Option<Vec<f64>>,
    pub age_horizons: Option<Vec<u64>>,
    pub rates: Vec<GridPlan>,
    pub anscombe: Vec<GridPlan>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionPlan {
    pub id: String,
    pub network: Network,
    pub checkpoints: Vec<u64>,
    pub check_logs: bool,
    pub ks_max: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const SWEEP: &str = r#"
kind = "sweep"
seed = 7
reps = 10

[model]
family = "gaussian_curved"
mu = 4.0
c = 4.0

[sweep]
id = "s"
scheme = "hitting"
t = 300
deltas = [2, 4, 6]
estimators = ["bar", "tilde", "hat", "check", "g_hat", "g_check"]
ordering = true
"#;

    fn key_of(text: &str) -> String {
        match RunConfig::parse(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn sweep_parses() {
        let cfg = RunConfig::parse(SWEEP).unwrap();
        let spec = cfg.sweep_spec().unwrap();
        assert_eq!(spec.delta_grid, vec![2.0, 4.0, 6.0]);
        assert_eq!(spec.estimators.len(), 6);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = SWEEP.replace("c = 4.0", "c = 4.0\nbogus = 1");
        assert_eq!(key_of(&text), "bogus");
    }

    #[test]
    fn wrong_family_parameter_is_named() {
        let text = SWEEP.replace("c = 4.0", "c = 4.0\nshape = 1.0");
        assert_eq!(key_of(&text), "model.shape");
    }

    #[test]
    fn clt_reps_minimum() {
        let text = r#"
kind = "clt"
seed = 1
reps = 10
[model]
family = "gaussian_curved"
mu = 4.0
c = 4.0
[clt]
t = 1000
estimator = "hat"
threshold_exponent = 0.7
"#;
        assert_eq!(key_of(text), "reps");
    }

    #[test]
    fn missing_section_is_named() {
        let text = "kind = \"fusion\"\nseed = 1\nreps = 1\n";
        assert_eq!(key_of(text), "fusion");
    }
}
