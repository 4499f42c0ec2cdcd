//! Gaussian likelihood, priors and the random-walk Metropolis-Hastings
//! sampler over the physical unknowns (h_t, R_l).

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aem::{apply_aem, AemModel};
use crate::error::{Error, Result};
use crate::measurement::SensorDataset;
use crate::model::{DimensionlessConfig, ParameterScaling, PhysicalParameters};
use crate::solver1d::{sample_at, solve_lumped, Mesh1D, SolverControls};

pub const DEFAULT_N_STATES: usize = 100_000;
pub const DEFAULT_BURN_IN: usize = 1_000;
/// Walk in the normalised parameter scale (range mapped to [0, 1]).
pub const DEFAULT_WALK: [f64; 2] = [5e-4, 5e-4];

const MAX_REDRAWS: usize = 100_000;

/// Prior of one parameter (W·m⁻²·K⁻¹).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum ParamPrior {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Gaussian truncated to `[lo, hi]`.
    Gaussian {
        mean: f64,
        std: f64,
        lo: f64,
        hi: f64,
    },
    /// Parameter held fixed.
    Point {
        value: f64,
    },
}

impl ParamPrior {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ParamPrior::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            ParamPrior::Gaussian { mean, std, lo, hi } => {
                mean.is_finite()
                    && std.is_finite()
                    && std > 0.0
                    && lo.is_finite()
                    && hi.is_finite()
                    && lo < hi
            }
            ParamPrior::Point { value } => !value.is_nan(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid prior {self:?}")))
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            ParamPrior::Uniform { lo, hi } | ParamPrior::Gaussian { lo, hi, .. } => (lo, hi),
            ParamPrior::Point { value } => (value, value),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, ParamPrior::Point { .. })
    }

    /// Unnormalised log density; `-inf` outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            ParamPrior::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            ParamPrior::Gaussian { mean, std, lo, hi } => {
                if (lo..=hi).contains(&x) {
                    -0.5 * ((x - mean) / std).powi(2)
                } else {
                    f64::NEG_INFINITY
                }
            }
            ParamPrior::Point { value } => {
                if x == value {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Draws from the prior; truncated Gaussians are redrawn until inside.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            ParamPrior::Uniform { lo, hi } => Ok(rng.random_range(lo..=hi)),
            ParamPrior::Gaussian { mean, std, lo, hi } => {
                let normal = Normal::new(mean, std).map_err(|e| Error::Config(e.to_string()))?;
                for _ in 0..MAX_REDRAWS {
                    let x = normal.sample(rng);
                    if (lo..=hi).contains(&x) {
                        return Ok(x);
                    }
                }
                Err(Error::Config(format!(
                    "truncation bounds of {self:?} hold almost no mass"
                )))
            }
            ParamPrior::Point { value } => Ok(value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub h_t: ParamPrior,
    pub r_l: ParamPrior,
}

impl PriorSpec {
    /// Uniform on h_t ∈ [1, 40], R_l ∈ [0.01, 1].
    pub fn chamber_uniform() -> Self {
        PriorSpec {
            h_t: ParamPrior::Uniform { lo: 1.0, hi: 40.0 },
            r_l: ParamPrior::Uniform { lo: 0.01, hi: 1.0 },
        }
    }

    /// h_t ~ N(8, 2.5), R_l ~ N(0.5, 0.2), truncated to the uniform bounds.
    pub fn chamber_gaussian() -> Self {
        PriorSpec {
            h_t: ParamPrior::Gaussian {
                mean: 8.0,
                std: 2.5,
                lo: 1.0,
                hi: 40.0,
            },
            r_l: ParamPrior::Gaussian {
                mean: 0.5,
                std: 0.2,
                lo: 0.01,
                hi: 1.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.h_t.validate()?;
        self.r_l.validate()
    }

    pub fn log_density(&self, p: PhysicalParameters) -> f64 {
        self.h_t.log_density(p.h_t) + self.r_l.log_density(p.r_l)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PhysicalParameters> {
        Ok(PhysicalParameters {
            h_t: self.h_t.sample(rng)?,
            r_l: self.r_l.sample(rng)?,
        })
    }

    /// Normalised walk converted to physical steps.
    pub fn physical_walk(&self, w: [f64; 2]) -> [f64; 2] {
        let span = |p: &ParamPrior| {
            let (lo, hi) = p.bounds();
            if p.is_fixed() {
                0.0
            } else {
                hi - lo
            }
        };
        [w[0] * span(&self.h_t), w[1] * span(&self.r_l)]
    }
}

/// `-½ Σ (r/σ)²`.
pub fn gaussian_log_likelihood(residual: &[f64], sigma: &[f64]) -> f64 {
    -0.5 * residual
        .iter()
        .zip(sigma)
        .map(|(r, s)| (r / s).powi(2))
        .sum::<f64>()
}

/// Anything the sampler can evaluate.
pub trait LogLikelihood {
    /// `-inf` marks a rejected state.
    fn log_likelihood(&mut self, p: PhysicalParameters) -> f64;
}

impl<F: FnMut(PhysicalParameters) -> f64> LogLikelihood for F {
    fn log_likelihood(&mut self, p: PhysicalParameters) -> f64 {
        self(p)
    }
}

/// Residual series `[sensor][time]` in °C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Model prediction.
    pub model: Vec<Vec<f64>>,
    /// Data minus model.
    pub raw: Vec<Vec<f64>>,
    /// Data minus the model corrected by the error model (equal to `raw`
    /// without one).
    pub corrected: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
}

impl Residuals {
    pub fn log_likelihood(&self) -> f64 {
        self.corrected
            .iter()
            .zip(&self.sigma)
            .map(|(r, s)| gaussian_log_likelihood(r, s))
            .sum()
    }

    pub fn mean(&self, corrected: bool) -> f64 {
        let v = if corrected {
            &self.corrected
        } else {
            &self.raw
        };
        let n: usize = v.iter().map(Vec::len).sum();
        v.iter().flatten().sum::<f64>() / n as f64
    }

    pub fn max_abs(&self, corrected: bool) -> f64 {
        let v = if corrected {
            &self.corrected
        } else {
            &self.raw
        };
        v.iter().flatten().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn write_csv<W: Write>(&self, ids: &[String], times_s: &[f64], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t_s",
            "sensor_id",
            "model_C",
            "residual_C",
            "corrected_C",
            "sigma_C",
        ])?;
        for (k, t) in times_s.iter().enumerate() {
            for (s, id) in ids.iter().enumerate() {
                w.write_record([
                    t.to_string(),
                    id.clone(),
                    self.model[s][k].to_string(),
                    self.raw[s][k].to_string(),
                    self.corrected[s][k].to_string(),
                    self.sigma[s][k].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Lumped-model likelihood of a dataset, with an optional error model.
pub struct LumpedLikelihood<'a> {
    data: &'a SensorDataset,
    cfg: &'a DimensionlessConfig,
    scaling: ParameterScaling,
    mesh: &'a Mesh1D,
    controls: SolverControls,
    aem: Option<&'a AemModel>,
    dirichlet: bool,
    taus: Vec<f64>,
    cache: HashMap<(u64, u64), f64>,
    pub solves: usize,
    pub failures: usize,
}

impl<'a> LumpedLikelihood<'a> {
    pub fn new(
        data: &'a SensorDataset,
        cfg: &'a DimensionlessConfig,
        scaling: ParameterScaling,
        mesh: &'a Mesh1D,
        controls: SolverControls,
        aem: Option<&'a AemModel>,
    ) -> Result<Self> {
        data.validate()?;
        controls.validate()?;
        if let Some(a) = aem {
            a.check_grid(data)?;
        }
        let t0 = cfg.scales.time;
        Ok(LumpedLikelihood {
            data,
            cfg,
            scaling,
            mesh,
            controls,
            aem,
            dirichlet: false,
            taus: data.times_s.iter().map(|t| t / t0).collect(),
            cache: HashMap::new(),
            solves: 0,
            failures: 0,
        })
    }

    /// Prescribed top and bottom temperatures; only R_l matters.
    pub fn dirichlet(mut self) -> Self {
        self.dirichlet = true;
        self
    }

    /// Lumped prediction at the sensors, °C.
    pub fn predict(&self, p: PhysicalParameters) -> Result<Vec<Vec<f64>>> {
        let mut q = self.scaling.to_dimensionless(p);
        if self.dirichlet {
            q.bi_t = f64::INFINITY;
        }
        q.validate()?;
        let field = solve_lumped(self.cfg, q, self.mesh, &self.controls, &self.taus)?;
        let t0 = self.cfg.scales.temperature;
        self.data
            .sensors
            .iter()
            .map(|s| {
                self.taus
                    .iter()
                    .map(|&tau| Ok(sample_at(&field, s.chi, tau)? * t0))
                    .collect()
            })
            .collect()
    }

    pub fn residuals(&self, p: PhysicalParameters) -> Result<Residuals> {
        let model = self.predict(p)?;
        let raw: Vec<Vec<f64>> = self
            .data
            .sensors
            .iter()
            .zip(&model)
            .map(|(s, m)| s.temperature.iter().zip(m).map(|(d, u)| d - u).collect())
            .collect();
        let sigma: Vec<Vec<f64>> = self.data.sensors.iter().map(|s| s.sigma.clone()).collect();
        let (corrected, sigma) = match self.aem {
            Some(a) => apply_aem(&raw, &sigma, a)?,
            None => (raw.clone(), sigma),
        };
        Ok(Residuals {
            model,
            raw,
            corrected,
            sigma,
        })
    }
}

impl LogLikelihood for LumpedLikelihood<'_> {
    fn log_likelihood(&mut self, p: PhysicalParameters) -> f64 {
        let key = (p.h_t.to_bits(), p.r_l.to_bits());
        if let Some(v) = self.cache.get(&key) {
            return *v;
        }
        self.solves += 1;
        let v = match self.residuals(p) {
            Ok(r) => r.log_likelihood(),
            Err(e) => {
                self.failures += 1;
                log::debug!(
                    "forward solve rejected at h_t = {}, R_l = {}: {e}",
                    p.h_t,
                    p.r_l
                );
                f64::NEG_INFINITY
            }
        };
        self.cache.insert(key, v);
        v
    }
}

/// One-shot likelihood evaluation; solver failures give `-inf`.
pub fn log_likelihood(
    p: PhysicalParameters,
    data: &SensorDataset,
    cfg: &DimensionlessConfig,
    scaling: ParameterScaling,
    mesh: &Mesh1D,
    controls: SolverControls,
    aem: Option<&AemModel>,
) -> Result<f64> {
    let mut l = LumpedLikelihood::new(data, cfg, scaling, mesh, controls, aem)?;
    Ok(l.log_likelihood(p))
}

/// `p + w ⊙ U`, `U` uniform on [-1, 1]². Physical units.
pub fn propose<R: Rng + ?Sized>(
    p: PhysicalParameters,
    w: [f64; 2],
    rng: &mut R,
) -> PhysicalParameters {
    let u0: f64 = rng.random_range(-1.0..=1.0);
    let u1: f64 = rng.random_range(-1.0..=1.0);
    PhysicalParameters {
        h_t: p.h_t + w[0] * u0,
        r_l: p.r_l + w[1] * u1,
    }
}

/// `min(1, exp(candidate - previous))`; 0 when the candidate is not finite.
pub fn acceptance_factor(log_post_candidate: f64, log_post_prev: f64) -> f64 {
    if log_post_candidate.is_nan() || log_post_candidate == f64::NEG_INFINITY {
        return 0.0;
    }
    if log_post_prev == f64::NEG_INFINITY {
        return 1.0;
    }
    (log_post_candidate - log_post_prev).exp().min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSettings {
    /// Chain length including the initial state.
    pub n_states: usize,
    pub burn_in: usize,
    /// Normalised walk.
    pub walk: [f64; 2],
    pub seed: u64,
}

impl McmcSettings {
    pub fn chamber(seed: u64) -> Self {
        McmcSettings {
            n_states: DEFAULT_N_STATES,
            burn_in: DEFAULT_BURN_IN,
            walk: DEFAULT_WALK,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return Err(Error::Config("a chain needs at least 2 states".into()));
        }
        if self.burn_in >= self.n_states {
            return Err(Error::Config(format!(
                "burn-in {} must be below the chain length {}",
                self.burn_in, self.n_states
            )));
        }
        if self.walk.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("invalid walk {:?}", self.walk)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub states: Vec<PhysicalParameters>,
    pub log_post: Vec<f64>,
    /// `accepted[0]` refers to the initial state and is always true.
    pub accepted: Vec<bool>,
    pub walk: [f64; 2],
    pub seed: u64,
    pub burn_in: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "h_t", "R_l", "log_post", "accepted"])?;
        for (k, (p, lp)) in self.states.iter().zip(&self.log_post).enumerate() {
            w.write_record([
                k.to_string(),
                p.h_t.to_string(),
                p.r_l.to_string(),
                lp.to_string(),
                u8::from(self.accepted[k]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Random-walk Metropolis-Hastings. Without `p0` the initial state is drawn
/// from the prior with the chain's generator.
pub fn run_mcmc(
    target: &mut dyn LogLikelihood,
    prior: &PriorSpec,
    settings: &McmcSettings,
    p0: Option<PhysicalParameters>,
) -> Result<Chain> {
    prior.validate()?;
    settings.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let p0 = match p0 {
        Some(p) => p,
        None => prior.sample(&mut rng)?,
    };
    if prior.log_density(p0) == f64::NEG_INFINITY {
        return Err(Error::Domain(format!(
            "initial state {p0:?} is outside the prior support"
        )));
    }
    let w = prior.physical_walk(settings.walk);
    let n = settings.n_states;
    let mut states = Vec::with_capacity(n);
    let mut log_post = Vec::with_capacity(n);
    let mut accepted = Vec::with_capacity(n);
    let mut current = p0;
    let mut current_lp = target.log_likelihood(p0) + prior.log_density(p0);
    if current_lp == f64::NEG_INFINITY {
        log::warn!("initial state {p0:?} has zero posterior density");
    }
    states.push(current);
    log_post.push(current_lp);
    accepted.push(true);
    for _ in 1..n {
        let candidate = propose(current, w, &mut rng);
        let lprior = prior.log_density(candidate);
        let lp = if lprior == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            target.log_likelihood(candidate) + lprior
        };
        let beta = acceptance_factor(lp, current_lp);
        let u: f64 = rng.random();
        let ok = u <= beta && beta > 0.0;
        if ok {
            current = candidate;
            current_lp = lp;
        }
        states.push(current);
        log_post.push(current_lp);
        accepted.push(ok);
    }
    Ok(Chain {
        states,
        log_post,
        accepted,
        walk: settings.walk,
        seed: settings.seed,
        burn_in: settings.burn_in,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() || !(hi > lo) {
            return Histogram {
                edges: vec![lo, hi],
                counts: vec![values.len()],
            };
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| lo + k as f64 * width).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Histogram { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub mean: PhysicalParameters,
    /// Population standard deviation.
    pub std: PhysicalParameters,
    /// Accepted proposals over post burn-in proposals.
    pub acceptance_rate: f64,
    pub n_used: usize,
    pub histogram_h_t: Histogram,
    pub histogram_r_l: Histogram,
    /// Posterior mean within 1% of the range from a prior bound.
    pub pinned_h_t: bool,
    pub pinned_r_l: bool,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub const DEFAULT_BINS: usize = 50;

pub fn chain_stats(
    chain: &Chain,
    burn_in: usize,
    bins: usize,
    prior: Option<&PriorSpec>,
) -> Result<ChainStats> {
    if burn_in >= chain.len() {
        return Err(Error::Domain(format!(
            "burn-in {burn_in} leaves no states of a chain of length {}",
            chain.len()
        )));
    }
    let used = &chain.states[burn_in..];
    let h: Vec<f64> = used.iter().map(|p| p.h_t).collect();
    let r: Vec<f64> = used.iter().map(|p| p.r_l).collect();
    let (mh, sh) = mean_std(&h);
    let (mr, sr) = mean_std(&r);
    let start = burn_in.max(1);
    let proposals = chain.len() - start;
    let acceptance_rate = if proposals == 0 {
        0.0
    } else {
        chain.accepted[start..].iter().filter(|a| **a).count() as f64 / proposals as f64
    };
    let pinned = |p: Option<&ParamPrior>, m: f64| match p {
        Some(p) if !p.is_fixed() => {
            let (lo, hi) = p.bounds();
            let tol = 0.01 * (hi - lo);
            m - lo < tol || hi - m < tol
        }
        _ => false,
    };
    let pinned_h_t = pinned(prior.map(|p| &p.h_t), mh);
    let pinned_r_l = pinned(prior.map(|p| &p.r_l), mr);
    if pinned_h_t || pinned_r_l {
        log::warn!("posterior mean sits on a prior bound (h_t: {pinned_h_t}, R_l: {pinned_r_l})");
    }
    Ok(ChainStats {
        mean: PhysicalParameters { h_t: mh, r_l: mr },
        std: PhysicalParameters { h_t: sh, r_l: sr },
        acceptance_rate,
        n_used: used.len(),
        histogram_h_t: Histogram::new(&h, bins),
        histogram_r_l: Histogram::new(&r, bins),
        pinned_h_t,
        pinned_r_l,
    })
}
