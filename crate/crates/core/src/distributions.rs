//! Increment families, their moments, deterministic RNG streams and the
//! limiting average overshoot `rho(mu)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::stats::{norm_cdf, norm_pdf, RunningPair};

/// Absolute truncation tolerance for the Gaussian overshoot series.
pub const SERIES_TOL: f64 = 1e-12;
/// Hard cap on the number of series terms.
pub const SERIES_MAX_TERMS: usize = 10_000_000;

/// Distribution family of the walk increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// `N(mu, c mu^2)`: the standard deviation scales with the mean.
    GaussianCurved {
        mean: f64,
        c: f64,
    },
    Gaussian {
        mean: f64,
        sd: f64,
    },
    /// Shape `k`, rate `lambda`; mean `k/lambda`.
    Gamma {
        shape: f64,
        rate: f64,
    },
    Deterministic {
        value: f64,
    },
    /// `P(X = a) = p`, `P(X = b) = 1 - p`.
    TwoPointLattice {
        a: f64,
        b: f64,
        p: f64,
    },
}

/// A validated increment distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementModel {
    family: Family,
}

fn check(cond: bool, name: &'static str, reason: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidModel {
            name,
            reason: reason.into(),
        })
    }
}

impl IncrementModel {
    pub fn gaussian_curved(mean: f64, c: f64) -> Result<Self> {
        check(mean.is_finite(), "mu", "must be finite")?;
        check(
            c.is_finite() && c > 0.0,
            "c",
            format!("must be > 0, got {c}"),
        )?;
        Ok(Self {
            family: Family::GaussianCurved { mean, c },
        })
    }

    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        check(mean.is_finite(), "mu", "must be finite")?;
        check(
            sd.is_finite() && sd >= 0.0,
            "sigma",
            format!("must be >= 0, got {sd}"),
        )?;
        Ok(Self {
            family: Family::Gaussian { mean, sd },
        })
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        check(
            shape.is_finite() && shape > 0.0,
            "shape",
            format!("must be > 0, got {shape}"),
        )?;
        check(
            rate.is_finite() && rate > 0.0,
            "rate",
            format!("must be > 0, got {rate}"),
        )?;
        Ok(Self {
            family: Family::Gamma { shape, rate },
        })
    }

    pub fn deterministic(value: f64) -> Result<Self> {
        check(value.is_finite(), "mu", "must be finite")?;
        Ok(Self {
            family: Family::Deterministic { value },
        })
    }

    pub fn two_point_lattice(a: f64, b: f64, p: f64) -> Result<Self> {
        check(a.is_finite() && b.is_finite(), "a/b", "must be finite")?;
        check(
            (0.0..=1.0).contains(&p),
            "p",
            format!("must lie in [0, 1], got {p}"),
        )?;
        Ok(Self {
            family: Family::TwoPointLattice { a, b, p },
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn mean(&self) -> f64 {
        match self.family {
            Family::GaussianCurved { mean, .. } | Family::Gaussian { mean, .. } => mean,
            Family::Gamma { shape, rate } => shape / rate,
            Family::Deterministic { value } => value,
            Family::TwoPointLattice { a, b, p } => p * a + (1.0 - p) * b,
        }
    }

    pub fn variance(&self) -> f64 {
        match self.family {
            Family::GaussianCurved { mean, c } => c * mean * mean,
            Family::Gaussian { sd, .. } => sd * sd,
            Family::Gamma { shape, rate } => shape / (rate * rate),
            Family::Deterministic { .. } => 0.0,
            Family::TwoPointLattice { a, b, p } => p * (1.0 - p) * (a - b) * (a - b),
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    /// `E[X^2] = mu^2 + sigma^2`.
    pub fn second_moment(&self) -> f64 {
        let m = self.mean();
        m * m + self.variance()
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self.family, Family::TwoPointLattice { .. })
    }

    /// True when `P(X > 0) = 1`.
    pub fn has_positive_support(&self) -> bool {
        match self.family {
            Family::Gamma { .. } => true,
            Family::Deterministic { value } => value > 0.0,
            Family::TwoPointLattice { a, b, p } => (p == 0.0 || a > 0.0) && (p == 1.0 || b > 0.0),
            Family::Gaussian { mean, sd } => sd == 0.0 && mean > 0.0,
            Family::GaussianCurved { .. } => false,
        }
    }

    /// Same family and shape, re-parameterised to a new mean.
    ///
    /// The variance follows the family's link: `c x^2` for curved
    /// Gaussians, `x^2/k` for Gamma, unchanged for plain Gaussians. Returns
    /// `None` where no such link exists (lattice, or Gamma with `x <= 0`).
    pub fn with_mean(&self, x: f64) -> Option<Self> {
        match self.family {
            Family::GaussianCurved { c, .. } => Self::gaussian_curved(x, c).ok(),
            Family::Gaussian { sd, .. } => Self::gaussian(x, sd).ok(),
            Family::Gamma { shape, .. } if x > 0.0 => Self::gamma(shape, shape / x).ok(),
            Family::Gamma { .. } => None,
            Family::Deterministic { .. } => Self::deterministic(x).ok(),
            Family::TwoPointLattice { .. } => None,
        }
    }

    pub fn sampler(&self) -> IncrementSampler {
        match self.family {
            Family::GaussianCurved { .. } | Family::Gaussian { .. } => {
                let sd = self.sd();
                if sd == 0.0 {
                    IncrementSampler::Point(self.mean())
                } else {
                    IncrementSampler::Normal(Normal::new(self.mean(), sd).expect("validated"))
                }
            }
            Family::Gamma { shape, rate } => {
                IncrementSampler::Gamma(Gamma::new(shape, 1.0 / rate).expect("validated"))
            }
            Family::Deterministic { value } => IncrementSampler::Point(value),
            Family::TwoPointLattice { a, b, p } => IncrementSampler::TwoPoint { a, b, p },
        }
    }

    /// One draw; the stream advances deterministically.
    pub fn sample(&self, stream: &mut RngStream) -> f64 {
        self.sampler().sample(stream)
    }
}

/// Pre-built sampler for an [`IncrementModel`].
#[derive(Debug, Clone, Copy)]
pub enum IncrementSampler {
    Normal(Normal<f64>),
    Gamma(Gamma<f64>),
    Point(f64),
    TwoPoint { a: f64, b: f64, p: f64 },
}

impl Distribution<f64> for IncrementSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            IncrementSampler::Normal(d) => d.sample(rng),
            IncrementSampler::Gamma(d) => d.sample(rng),
            IncrementSampler::Point(v) => *v,
            IncrementSampler::TwoPoint { a, b, p } => {
                if rng.random::<f64>() < *p {
                    *a
                } else {
                    *b
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// RNG streams

/// What a stream is used for; part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Walk = 0,
    Interarrival = 1,
    Ladder = 2,
    Overshoot = 3,
    FirstPassage = 4,
    Sampling = 5,
}

const REP_BITS: u32 = 40;
const SENSOR_BITS: u32 = 16;

/// Key of one independent stream below a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub rep: u64,
    pub sensor: u32,
    pub purpose: Purpose,
}

impl StreamId {
    pub fn new(rep: u64, sensor: u32, purpose: Purpose) -> Self {
        Self {
            rep,
            sensor,
            purpose,
        }
    }

    fn packed(&self) -> Result<u64> {
        if self.rep >= 1 << REP_BITS {
            return Err(Error::StreamId(format!("rep {} >= 2^{REP_BITS}", self.rep)));
        }
        if self.sensor >= 1 << SENSOR_BITS {
            return Err(Error::StreamId(format!(
                "sensor {} >= 2^{SENSOR_BITS}",
                self.sensor
            )));
        }
        Ok((self.rep << (SENSOR_BITS + 8)) | ((self.sensor as u64) << 8) | self.purpose as u64)
    }
}

/// A ChaCha8 keystream selected by `(master_seed, StreamId)`.
///
/// Distinct ids map to distinct ChaCha stream numbers under the same key,
/// so the sequences never overlap.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    id: StreamId,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, id: StreamId) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(id.packed()?);
        Ok(Self {
            master_seed,
            id,
            rng,
        })
    }

    /// Convenience constructor; panics on an out-of-range id.
    pub fn of(master_seed: u64, rep: u64, sensor: u32, purpose: Purpose) -> Self {
        Self::new(master_seed, StreamId::new(rep, sensor, purpose)).expect("stream id in range")
    }

    /// A fresh stream with the same seed, rep and sensor but another purpose.
    pub fn with_purpose(&self, purpose: Purpose) -> Self {
        Self::of(self.master_seed, self.id.rep, self.id.sensor, purpose)
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

// ---------------------------------------------------------------------------
// Moments

/// Closed-form moments of an increment model.
///
/// Orders that have no closed form here come back as `Ok(None)`; callers
/// that need them must estimate them explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSummary {
    pub mean: f64,
    pub variance: f64,
    model: IncrementModel,
}

pub fn moments(model: &IncrementModel) -> MomentSummary {
    MomentSummary {
        mean: model.mean(),
        variance: model.variance(),
        model: *model,
    }
}

const MAX_INTEGER_ORDER: u32 = 4;

fn integer_order(r: f64) -> Option<u32> {
    (r.fract() == 0.0 && r >= 1.0 && r <= MAX_INTEGER_ORDER as f64).then_some(r as u32)
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl MomentSummary {
    /// `E[X^n]` for integer `n`.
    pub fn raw_moment(&self, n: u32) -> f64 {
        match self.model.family {
            Family::GaussianCurved { .. } | Family::Gaussian { .. } => {
                let (mu, sd) = (self.mean, self.variance.sqrt());
                // E[Z^k] = (k-1)!! for even k
                let mut total = 0.0;
                let mut dfact = 1.0;
                for k in (0..=n).step_by(2) {
                    if k >= 2 {
                        dfact *= (k - 1) as f64;
                    }
                    total += binom(n, k) * mu.powi((n - k) as i32) * sd.powi(k as i32) * dfact;
                }
                total
            }
            Family::Gamma { shape, rate } => {
                (0..n).fold(1.0, |acc, i| acc * (shape + i as f64)) / rate.powi(n as i32)
            }
            Family::Deterministic { value } => value.powi(n as i32),
            Family::TwoPointLattice { a, b, p } => {
                p * a.powi(n as i32) + (1.0 - p) * b.powi(n as i32)
            }
        }
    }

    /// `E[X^n 1{X < m}]` for integer `n`.
    fn lower_partial(&self, n: u32, m: f64) -> f64 {
        match self.model.family {
            Family::GaussianCurved { .. } | Family::Gaussian { .. } => {
                let (mu, sd) = (self.mean, self.variance.sqrt());
                if sd == 0.0 {
                    return if mu < m { mu.powi(n as i32) } else { 0.0 };
                }
                let a = (m - mu) / sd;
                // L_i = int_{-inf}^a z^i phi(z) dz
                let mut l = vec![norm_cdf(a), -norm_pdf(a)];
                for i in 2..=n as usize {
                    let next = -a.powi(i as i32 - 1) * norm_pdf(a) + (i - 1) as f64 * l[i - 2];
                    l.push(next);
                }
                (0..=n)
                    .map(|i| {
                        binom(n, i) * mu.powi((n - i) as i32) * sd.powi(i as i32) * l[i as usize]
                    })
                    .sum()
            }
            Family::Gamma { shape, rate } => {
                if m <= 0.0 {
                    0.0
                } else {
                    self.raw_moment(n) * gamma_lr(shape + n as f64, rate * m)
                }
            }
            Family::Deterministic { value } => {
                if value < m {
                    value.powi(n as i32)
                } else {
                    0.0
                }
            }
            Family::TwoPointLattice { a, b, p } => {
                let pa = if a < m { p * a.powi(n as i32) } else { 0.0 };
                let pb = if b < m {
                    (1.0 - p) * b.powi(n as i32)
                } else {
                    0.0
                };
                pa + pb
            }
        }
    }

    /// `E[|X - mu|^r]`.
    pub fn abs_central_moment(&self, r: f64) -> Result<Option<f64>> {
        if !(r > 0.0) {
            return Err(Error::InvalidOrder(r));
        }
        let mu = self.mean;
        match self.model.family {
            Family::GaussianCurved { .. } | Family::Gaussian { .. } => {
                let sd = self.variance.sqrt();
                let v = sd.powf(r) * 2f64.powf(r / 2.0) * (ln_gamma((r + 1.0) / 2.0)).exp()
                    / std::f64::consts::PI.sqrt();
                return Ok(Some(v));
            }
            Family::Deterministic { .. } => return Ok(Some(0.0)),
            Family::TwoPointLattice { a, b, p } => {
                return Ok(Some(
                    p * (a - mu).abs().powf(r) + (1.0 - p) * (b - mu).abs().powf(r),
                ))
            }
            Family::Gamma { .. } => {}
        }
        let Some(n) = integer_order(r) else {
            return Ok(None);
        };
        // E[(X - mu)^n] from raw moments
        let central: f64 = (0..=n)
            .map(|j| binom(n, j) * self.raw_moment(j) * (-mu).powi((n - j) as i32))
            .sum();
        if n % 2 == 0 {
            return Ok(Some(central.max(0.0)));
        }
        // |Y|^n = Y^n + 2 (Y^-)^n for odd n, Y^- = (mu - X) 1{X < mu}
        let neg: f64 = (0..=n)
            .map(|j| {
                binom(n, j)
                    * mu.powi((n - j) as i32)
                    * (-1f64).powi(j as i32)
                    * self.lower_partial(j, mu)
            })
            .sum();
        Ok(Some((central + 2.0 * neg).max(0.0)))
    }

    /// `E[(X^+)^s]`.
    pub fn pos_part_moment(&self, s: f64) -> Result<Option<f64>> {
        if !(s > 0.0) {
            return Err(Error::InvalidOrder(s));
        }
        match self.model.family {
            Family::Gamma { shape, rate } => {
                let v = (ln_gamma(shape + s) - ln_gamma(shape)).exp() / rate.powf(s);
                return Ok(Some(v));
            }
            Family::Deterministic { value } => return Ok(Some(value.max(0.0).powf(s))),
            Family::TwoPointLattice { a, b, p } => {
                return Ok(Some(
                    p * a.max(0.0).powf(s) + (1.0 - p) * b.max(0.0).powf(s),
                ))
            }
            _ => {}
        }
        let Some(n) = integer_order(s) else {
            return Ok(None);
        };
        Ok(Some(
            (self.raw_moment(n) - self.lower_partial(n, 0.0)).max(0.0),
        ))
    }
}

// ---------------------------------------------------------------------------
// Limiting average overshoot

/// Sum of `[phi(b_n) - b_n Phi(-b_n)] / s_n` over `n >= 1` with
/// `b_n = beta sqrt(n)` and `s_n = scale sqrt(n)`; stops at the first term
/// below `tol` (terms decrease monotonically in `n`).
fn gaussian_overshoot_series(beta: f64, scale: f64, tol: f64) -> f64 {
    let mut total = 0.0;
    for n in 1..=SERIES_MAX_TERMS {
        let rn = (n as f64).sqrt();
        let b = beta * rn;
        let term = (norm_pdf(b) - b * norm_cdf(-b)) / (scale * rn);
        total += term;
        if term.abs() < tol {
            break;
        }
    }
    total
}

/// `w_c` such that `rho(mu) = w_c mu` for `N(mu, c mu^2)` increments.
pub fn gaussian_w_constant(c: f64, tol: f64) -> Result<f64> {
    check(
        c.is_finite() && c > 0.0,
        "c",
        format!("must be > 0, got {c}"),
    )?;
    check(
        tol.is_finite() && tol > 0.0,
        "tol",
        format!("must be > 0, got {tol}"),
    )?;
    let beta = (1.0 / c).sqrt();
    Ok((1.0 + c) / 2.0 - gaussian_overshoot_series(beta, beta, tol))
}

/// Limiting average overshoot `rho(mu) = E[H^2] / (2 E[H])`, `H` the first
/// ascending ladder height.
pub fn rho_closed_form(model: &IncrementModel) -> Result<f64> {
    let mu = model.mean();
    if model.is_lattice() {
        return Err(Error::LatticeFamily);
    }
    if !(mu > 0.0) {
        return Err(Error::NonPositiveMean(mu));
    }
    let var = model.variance();
    match model.family() {
        Family::Gamma { .. } | Family::Deterministic { .. } => Ok(mu / 2.0 + var / (2.0 * mu)),
        Family::Gaussian { .. } | Family::GaussianCurved { .. } => {
            let sd = var.sqrt();
            if sd == 0.0 {
                return Ok(mu / 2.0);
            }
            let beta = mu / sd;
            Ok(
                (mu * mu + var) / (2.0 * mu)
                    - sd * gaussian_overshoot_series(beta, 1.0, SERIES_TOL),
            )
        }
        Family::TwoPointLattice { .. } => Err(Error::LatticeFamily),
    }
}

/// Sample moments of the first ascending ladder height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderMoments {
    pub m1: f64,
    pub m2: f64,
    pub rho_hat: f64,
    /// Delta-method standard error of `rho_hat`.
    pub rho_se: f64,
    pub reps: u64,
}

/// Simulates `tau_+ = inf{t: S_t > 0}` `reps` times and returns the sample
/// moments of `S_{tau_+}`.
pub fn ladder_height_moments(
    model: &IncrementModel,
    reps: u64,
    stream: &mut RngStream,
) -> Result<LadderMoments> {
    let mu = model.mean();
    if !(mu > 0.0) {
        return Err(Error::NonPositiveMean(mu));
    }
    if reps == 0 {
        return Err(Error::InvalidExperiment("reps must be >= 1".into()));
    }
    let sampler = model.sampler();
    let mut acc = RunningPair::new();
    for _ in 0..reps {
        let mut s = 0.0;
        while s <= 0.0 {
            s += sampler.sample(stream);
        }
        acc.push(s, s * s);
    }
    let (m1, m2) = (acc.mean_x(), acc.mean_y());
    let rho_hat = m2 / (2.0 * m1);
    // linearisation of m2 / (2 m1): (H^2 - 2 rho H) / (2 m1)
    let lin_var = acc.var_y() - 4.0 * rho_hat * acc.cov() + 4.0 * rho_hat * rho_hat * acc.var_x();
    let rho_se = (lin_var.max(0.0) / reps as f64).sqrt() / (2.0 * m1);
    Ok(LadderMoments {
        m1,
        m2,
        rho_hat,
        rho_se,
        reps,
    })
}
