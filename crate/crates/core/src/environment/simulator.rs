//! Synthetic database with hidden structure.
//!
//! Every parameter is measured in the symmetric coordinate `u` of its
//! reference range (the range derived with `reference_prf`): `u = 0` at the
//! default, `u = -1` at the reference lower bound and `u = +1` at the
//! reference upper bound. Values outside the reference range have `|u| > 1`.
//!
//! * Validity: parameter `i` is operable on a sub-interval of `[-1, 1]` of
//!   relative length `safe_fraction[i]` that contains the default; its
//!   [`Hazard`] says whether the trimmed part sits at the top, the bottom or
//!   both ends. Each joint constraint additionally rejects both of its
//!   parameters being above a threshold at the same time.
//! * Throughput: a product of unimodal log-quadratic factors over the planted
//!   important parameters (1 at the default, `peak` at the hidden optimum),
//!   damped pairwise interaction terms that vanish at the default and at the
//!   optimum, and factors in `[0.999, 1]` for everything else. The noiseless
//!   maximum is `base_throughput * optimum_gain`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EvaluationOutcome, Environment};
use crate::error::{Error, Result};
use crate::param_space::{derive_range, parse_manifest, Configuration, ParamKind, ParameterSpace, ParameterSpec};

/// The 350-parameter manifest that ships with the crate.
pub const SHIPPED_MANIFEST: &str = include_str!("../../data/sample_manifest.json");

pub fn shipped_manifest() -> ParameterSpace {
    parse_manifest(SHIPPED_MANIFEST).expect("shipped manifest parses")
}

/// Invalid when both parameters sit above `threshold` (in `u`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointConstraint {
    pub a: usize,
    pub b: usize,
    pub threshold: f64,
}

/// Which end of the reference range loses operability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hazard {
    /// `|u| <= f`.
    Both,
    /// `-1 <= u <= 2f - 1`.
    High,
    /// `1 - 2f <= u <= 1`.
    Low,
}

impl Hazard {
    /// Safe interval in `u` for safe fraction `f`.
    pub fn safe_interval(self, f: f64) -> (f64, f64) {
        match self {
            Hazard::Both => (-f, f),
            Hazard::High => (-1.0, 2.0 * f - 1.0),
            Hazard::Low => (1.0 - 2.0 * f, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub a: usize,
    pub b: usize,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorSpec {
    pub names: Vec<String>,
    pub defaults: Vec<f64>,
    pub kinds: Vec<ParamKind>,
    pub reference_prf: f64,
    pub important_idx: Vec<usize>,
    /// Hidden optimum in `u`, one per important parameter.
    pub optima: Vec<f64>,
    /// Multiplicative gain at the optimum, one per important parameter.
    pub peaks: Vec<f64>,
    pub base_throughput: f64,
    pub optimum_gain: f64,
    pub safe_fraction: Vec<f64>,
    pub hazard: Vec<Hazard>,
    pub joint_constraints: Vec<JointConstraint>,
    pub interactions: Vec<Interaction>,
    /// Curvature of the tiny penalty of each unimportant parameter, in `[0, 0.001]`.
    pub minor_penalty: Vec<f64>,
    pub noise_cv: f64,
    pub metrics_dim: usize,
    /// `metrics_dim - 4` rows, one weight per important parameter.
    pub metric_weights: Vec<Vec<f64>>,
    pub seed: u64,
}

const THROUGHPUT_METRICS: usize = 4;
const IMPORTANT_SAFE_FRACTION: f64 = 0.8;
const JOINT_THRESHOLD: f64 = 0.9;
const MIN_OPTIMUM: f64 = 0.33;
const MAX_OPTIMUM: f64 = 0.85;
const GAIN_DECAY: f64 = 0.4;
const GAIN_FLOOR: f64 = 0.02;

impl SimulatorSpec {
    pub fn dims(&self) -> usize {
        self.names.len()
    }

    /// Builds the calibrated simulator over the defaults of `space`.
    ///
    /// Ten parameters are planted as important. Only they lose operability
    /// inside the reference range: the 40% of it farthest from the hidden
    /// optimum, on the opposite side of the default. Two "both high" joint
    /// constraints pair parameters whose optima sit above the default, at a
    /// threshold above those optima. With the reference factor 10 this yields
    /// all-valid designs at factor 2, a minority of valid designs at factor
    /// 10 and none at factor 100.
    pub fn calibrated(space: &ParameterSpace, seed: u64) -> Result<SimulatorSpec> {
        Self::calibrated_with(space, seed, 10, 1.45, 0.03)
    }

    pub fn calibrated_with(
        space: &ParameterSpace,
        seed: u64,
        n_important: usize,
        optimum_gain: f64,
        noise_cv: f64,
    ) -> Result<SimulatorSpec> {
        let reference_prf = 10.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = space.params();
        let eligible: Vec<usize> = params
            .iter()
            .enumerate()
            .filter(|(_, p)| eligible_for_importance(p, reference_prf))
            .map(|(i, _)| i)
            .collect();
        if n_important == 0 || eligible.len() < n_important {
            return Err(Error::InvalidArgument(format!(
                "need {n_important} parameters with a positive default and two-sided range, found {}",
                eligible.len()
            )));
        }
        let mut important_idx: Vec<usize> = index::sample(&mut rng, eligible.len(), n_important)
            .into_iter()
            .map(|k| eligible[k])
            .collect();
        important_idx.sort_unstable();

        let mut optima: Vec<f64> = (0..n_important)
            .map(|k| {
                let magnitude = rng.gen_range(MIN_OPTIMUM..MAX_OPTIMUM);
                if k % 2 == 0 { magnitude } else { -magnitude }
            })
            .collect();
        shuffle_in_place(&mut optima, &mut rng);

        // A few parameters carry most of the gain; the rest share a small floor.
        let mut weights: Vec<f64> = (0..n_important)
            .map(|k| GAIN_DECAY.powi(k as i32) + GAIN_FLOOR)
            .collect();
        shuffle_in_place(&mut weights, &mut rng);
        let total: f64 = weights.iter().sum();
        let peaks: Vec<f64> = weights
            .iter()
            .map(|w| (optimum_gain.ln() * w / total).exp())
            .collect();

        let mut safe_fraction = vec![1.0; params.len()];
        let mut hazard = vec![Hazard::Both; params.len()];
        for (k, &i) in important_idx.iter().enumerate() {
            safe_fraction[i] = IMPORTANT_SAFE_FRACTION;
            hazard[i] = if optima[k] > 0.0 { Hazard::Low } else { Hazard::High };
        }

        let highs: Vec<usize> = (0..n_important).filter(|&k| optima[k] > 0.0).collect();
        let joint_constraints = highs
            .chunks_exact(2)
            .take(2)
            .map(|pair| JointConstraint {
                a: important_idx[pair[0]],
                b: important_idx[pair[1]],
                threshold: JOINT_THRESHOLD,
            })
            .collect();
        let interactions = (0..n_important.min(6))
            .step_by(2)
            .filter(|k| k + 1 < n_important)
            .map(|k| Interaction {
                a: important_idx[k],
                b: important_idx[k + 1],
                strength: 0.08,
            })
            .collect();

        let minor_penalty = (0..params.len())
            .map(|i| {
                if important_idx.contains(&i) {
                    0.0
                } else {
                    rng.gen_range(0.0..0.001)
                }
            })
            .collect();

        let metrics_dim = 16;
        let scale = 1.0 / (n_important as f64).sqrt();
        let metric_weights = (0..metrics_dim - THROUGHPUT_METRICS)
            .map(|_| {
                (0..n_important)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        z * 2.0 * scale
                    })
                    .collect()
            })
            .collect();

        let spec = SimulatorSpec {
            names: params.iter().map(|p| p.name.clone()).collect(),
            defaults: params.iter().map(|p| p.default).collect(),
            kinds: params.iter().map(|p| p.kind).collect(),
            reference_prf,
            important_idx,
            optima,
            peaks,
            base_throughput: 47.8,
            optimum_gain,
            safe_fraction,
            hazard,
            joint_constraints,
            interactions,
            minor_penalty,
            noise_cv,
            metrics_dim,
            metric_weights,
            seed,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        let d = self.dims();
        let bad = |m: &str| Err(Error::InvalidArgument(format!("simulator spec: {m}")));
        if self.defaults.len() != d
            || self.kinds.len() != d
            || self.safe_fraction.len() != d
            || self.hazard.len() != d
            || self.minor_penalty.len() != d
        {
            return bad("per-parameter vectors must match the parameter count");
        }
        if self.important_idx.is_empty() || self.important_idx.iter().any(|&i| i >= d) {
            return bad("important_idx must be non-empty and within dims");
        }
        if self.optima.len() != self.important_idx.len() || self.peaks.len() != self.important_idx.len() {
            return bad("optima and peaks need one entry per important parameter");
        }
        if self.optima.iter().any(|&u| u == 0.0 || u.abs() > 1.0) {
            return bad("optima must be non-zero and inside [-1, 1]");
        }
        if !(self.noise_cv >= 0.0) {
            return bad("noise_cv must be >= 0");
        }
        if self.safe_fraction.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return bad("safe_fraction must lie in (0, 1]");
        }
        if self.metrics_dim < THROUGHPUT_METRICS || self.metric_weights.len() != self.metrics_dim - THROUGHPUT_METRICS {
            return bad("metric weights do not match metrics_dim");
        }
        Ok(())
    }

    pub fn default_values(&self) -> Vec<f64> {
        self.defaults.clone()
    }

    /// Native values at every hidden optimum (unimportant parameters at default).
    pub fn optimum_values(&self) -> Vec<f64> {
        let geometry = Geometry::new(self);
        let mut values = self.defaults.clone();
        for (k, &i) in self.important_idx.iter().enumerate() {
            values[i] = geometry.from_u(i, self.optima[k]);
        }
        values
    }

    /// Symmetric reference coordinate of `value` for parameter `i`.
    pub fn coordinate(&self, i: usize, value: f64) -> f64 {
        Geometry::new(self).u(i, value)
    }

    /// Noiseless throughput over a full value vector; ignores validity.
    pub fn throughput(&self, values: &[f64]) -> f64 {
        let geometry = Geometry::new(self);
        let u: Vec<f64> = (0..self.dims()).map(|i| geometry.u(i, values[i])).collect();
        self.throughput_from_u(&u)
    }

    /// Validity of a full value vector.
    pub fn is_valid(&self, values: &[f64]) -> bool {
        let geometry = Geometry::new(self);
        let u: Vec<f64> = (0..self.dims()).map(|i| geometry.u(i, values[i])).collect();
        self.valid_from_u(&u)
    }

    fn valid_from_u(&self, u: &[f64]) -> bool {
        const EPS: f64 = 1e-12;
        let ranges_ok = u
            .iter()
            .zip(self.safe_fraction.iter().zip(&self.hazard))
            .all(|(&x, (&f, &h))| {
                let (lo, hi) = h.safe_interval(f);
                x >= lo - EPS && x <= hi + EPS
            });
        ranges_ok
            && self
                .joint_constraints
                .iter()
                .all(|c| !(u[c.a] > c.threshold && u[c.b] > c.threshold))
    }

    fn throughput_from_u(&self, u: &[f64]) -> f64 {
        let mut log_factor = 0.0;
        for (k, &i) in self.important_idx.iter().enumerate() {
            let x = u[i].clamp(-1.0, 1.0);
            let opt = self.optima[k];
            let rel = (x - opt) / opt;
            log_factor += self.peaks[k].ln() * (1.0 - rel * rel);
        }
        let mut interaction = 1.0;
        for it in &self.interactions {
            let pa = self.interaction_shape(it.a, u[it.a]);
            let pb = self.interaction_shape(it.b, u[it.b]);
            let p2 = (pa * pb).powi(2);
            interaction -= it.strength * p2 / (1.0 + p2);
        }
        let minor: f64 = self
            .minor_penalty
            .iter()
            .zip(u)
            .filter(|(&c, _)| c > 0.0)
            .map(|(&c, &x)| 1.0 - c * x.clamp(-1.0, 1.0).powi(2))
            .product();
        self.base_throughput * log_factor.exp() * interaction * minor
    }

    /// Zero at the default and at the parameter's optimum.
    fn interaction_shape(&self, i: usize, u: f64) -> f64 {
        let k = self
            .important_idx
            .iter()
            .position(|&j| j == i)
            .expect("interactions involve important parameters");
        let opt = self.optima[k];
        let x = u.clamp(-1.0, 1.0);
        x * (x - opt) / (opt * opt)
    }

    fn metrics_from_u(&self, u: &[f64], throughput: f64) -> Vec<f64> {
        let mut m = Vec::with_capacity(self.metrics_dim);
        for row in &self.metric_weights {
            let z: f64 = row
                .iter()
                .zip(&self.important_idx)
                .map(|(w, &i)| w * u[i].clamp(-1.0, 1.0))
                .sum();
            m.push(0.5 + 0.5 * z.tanh());
        }
        let ratio = throughput / self.base_throughput;
        let utilization = self
            .important_idx
            .iter()
            .map(|&i| u[i].abs().min(1.0))
            .sum::<f64>()
            / self.important_idx.len() as f64;
        m.push(ratio);
        m.push(ratio * ratio);
        m.push(1.0 / ratio);
        m.push(utilization);
        m
    }
}

/// Noiseless simulator throughput for a configuration laid out in the
/// simulator's own parameter order.
pub fn simulate_throughput(spec: &SimulatorSpec, config: &Configuration) -> f64 {
    spec.throughput(config.values())
}

fn eligible_for_importance(p: &ParameterSpec, prf: f64) -> bool {
    if !p.tunable || p.default <= 0.0 {
        return false;
    }
    if p.kind == ParamKind::Integer && p.default < 20.0 {
        return false;
    }
    derive_range(p.default, prf, p.kind)
        .map(|r| r.lo < p.default && p.default < r.hi)
        .unwrap_or(false)
}

fn shuffle_in_place(v: &mut [f64], rng: &mut impl Rng) {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
}

/// Reference ranges of every simulator parameter.
struct Geometry {
    defaults: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Geometry {
    fn new(spec: &SimulatorSpec) -> Geometry {
        let mut lo = Vec::with_capacity(spec.dims());
        let mut hi = Vec::with_capacity(spec.dims());
        for (&d, &kind) in spec.defaults.iter().zip(&spec.kinds) {
            let r = derive_range(d, spec.reference_prf, kind)
                .unwrap_or(crate::param_space::Interval { lo: d, hi: d });
            lo.push(r.lo);
            hi.push(r.hi);
        }
        Geometry {
            defaults: spec.defaults.clone(),
            lo,
            hi,
        }
    }

    fn u(&self, i: usize, value: f64) -> f64 {
        let d = self.defaults[i];
        if value == d {
            0.0
        } else if value > d {
            let w = self.hi[i] - d;
            if w > 0.0 { (value - d) / w } else { f64::INFINITY }
        } else {
            let w = d - self.lo[i];
            if w > 0.0 { (value - d) / w } else { f64::NEG_INFINITY }
        }
    }

    fn from_u(&self, i: usize, u: f64) -> f64 {
        let d = self.defaults[i];
        if u >= 0.0 {
            d + u * (self.hi[i] - d)
        } else {
            d + u * (d - self.lo[i])
        }
    }
}

/// A running simulator bound to a (possibly reduced) parameter space.
///
/// Parameters are matched to the simulator by name; simulator parameters
/// absent from the space stay at their defaults.
pub struct Simulator {
    spec: SimulatorSpec,
    space: ParameterSpace,
    geometry: Geometry,
    mapping: Vec<usize>,
    noise: Option<LogNormal<f64>>,
    count: u64,
}

impl Simulator {
    pub fn new(spec: SimulatorSpec, space: ParameterSpace) -> Result<Simulator> {
        spec.check()?;
        let mapping = space
            .params()
            .iter()
            .map(|p| {
                spec.names.iter().position(|n| *n == p.name).ok_or_else(|| {
                    Error::Environment(format!("simulator has no parameter named '{}'", p.name))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let noise = if spec.noise_cv > 0.0 {
            let sigma = (1.0 + spec.noise_cv * spec.noise_cv).ln().sqrt();
            Some(LogNormal::new(-0.5 * sigma * sigma, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?)
        } else {
            None
        };
        Ok(Simulator {
            geometry: Geometry::new(&spec),
            spec,
            space,
            mapping,
            noise,
            count: 0,
        })
    }

    pub fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    /// Full simulator-order values for a configuration of the bound space.
    pub fn expand(&self, config: &Configuration) -> Vec<f64> {
        let mut values = self.spec.defaults.clone();
        for (&target, &v) in self.mapping.iter().zip(config.values()) {
            values[target] = v;
        }
        values
    }

    pub fn noiseless_throughput(&self, config: &Configuration) -> f64 {
        let values = self.expand(config);
        let u: Vec<f64> = (0..self.spec.dims()).map(|i| self.geometry.u(i, values[i])).collect();
        self.spec.throughput_from_u(&u)
    }

    fn noise_factor(&self, counter: u64) -> f64 {
        match &self.noise {
            None => 1.0,
            Some(dist) => {
                let stream = self.spec.seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let mut rng = ChaCha8Rng::seed_from_u64(stream);
                dist.sample(&mut rng)
            }
        }
    }
}

impl Environment for Simulator {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn evaluate(&mut self, config: &Configuration) -> EvaluationOutcome {
        let counter = self.count;
        self.count += 1;
        if config.len() != self.mapping.len() {
            return EvaluationOutcome::invalid(self.spec.metrics_dim, 0.0);
        }
        let values = self.expand(config);
        let u: Vec<f64> = (0..self.spec.dims()).map(|i| self.geometry.u(i, values[i])).collect();
        if !self.spec.valid_from_u(&u) {
            return EvaluationOutcome::invalid(self.spec.metrics_dim, 0.0);
        }
        let noise = self.noise_factor(counter);
        let throughput = self.spec.throughput_from_u(&u) * noise;
        let metrics = self
            .spec
            .metrics_from_u(&u, throughput)
            .into_iter()
            .map(|m| m * noise)
            .collect();
        EvaluationOutcome {
            valid: true,
            throughput,
            metrics,
            duration: 0.0,
        }
    }

    fn evaluation_count(&self) -> u64 {
        self.count
    }

    fn set_evaluation_count(&mut self, count: u64) {
        self.count = count;
    }
}

/// Deterministic synthetic manifest of `dims` parameters.
///
/// Roughly a third are integers; defaults are log-uniform over several
/// decades. Every 90th parameter has a zero default (non-tunable).
pub fn sample_manifest(dims: usize, prf: f64, seed: u64) -> Result<ParameterSpace> {
    const AREAS: [&str; 14] = [
        "storage", "proxy", "resolver", "tlog", "network", "disk", "shard", "worker", "txn",
        "cache", "backup", "ratekeeper", "recovery", "commit",
    ];
    const KNOBS: [&str; 14] = [
        "timeout", "delay", "batch_bytes", "queue_limit", "interval", "max_switch_time", "ratio",
        "count", "buffer_size", "jitter", "threshold", "window", "poll_delay", "retry_limit",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(dims);
    for i in 0..dims {
        let name = format!(
            "{}_{}_{:03}",
            AREAS[rng.gen_range(0..AREAS.len())],
            KNOBS[rng.gen_range(0..KNOBS.len())],
            i
        );
        let integer = rng.gen_bool(0.3);
        let spec = if i % 90 == 89 {
            let kind = if integer { ParamKind::Integer } else { ParamKind::Continuous };
            ParameterSpec::fixed(name, 0.0, kind)?
        } else if integer {
            let default = 10f64.powf(rng.gen_range(0.0..4.0)).round().max(1.0);
            ParameterSpec::derived(name, default, ParamKind::Integer, prf)?
        } else {
            let raw = 10f64.powf(rng.gen_range(-3.0..4.0));
            // keep four significant digits so the manifest stays readable
            let digits = 3 - raw.log10().floor() as i32;
            let scale = 10f64.powi(digits);
            let default = (raw * scale).round() / scale;
            ParameterSpec::derived(name, default, ParamKind::Continuous, prf)?
        };
        params.push(spec);
    }
    ParameterSpace::new(params, prf)
}
