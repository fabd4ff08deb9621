//! Space-filling random designs over a [`ParameterSpace`].
//!
//! * [`lhs`] is plain Latin hypercube sampling: `[lo, hi]` is cut into `n`
//!   equal strata and every stratum is hit exactly once.
//! * [`symmetric_lhs`] stratifies `[lo, default)` and `[default, hi]`
//!   separately with `ceil(n/2)` and `floor(n/2)` strata, so the region below
//!   the default is sampled as densely as the region above it even though it
//!   is usually much narrower.
//! * [`apply_random_subset`] keeps only `rss` randomly chosen parameters per
//!   configuration at their sampled values and resets the rest to default.
//!
//! All three are pure functions of their inputs and seed.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::{Configuration, ParamKind, ParameterSpace, ParameterSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Lhs,
    SymmetricLhs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub configs: Vec<Configuration>,
    pub seed: u64,
    pub strategy: Strategy,
    pub rss: Option<usize>,
}

impl Design {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }
}

/// Standard Latin hypercube design of `n` configurations.
pub fn lhs(space: &ParameterSpace, n: usize, seed: u64) -> Result<Design> {
    generate(space, n, seed, Strategy::Lhs)
}

/// Latin hypercube design with the region below and above each default
/// stratified separately.
pub fn symmetric_lhs(space: &ParameterSpace, n: usize, seed: u64) -> Result<Design> {
    generate(space, n, seed, Strategy::SymmetricLhs)
}

pub fn generate(space: &ParameterSpace, n: usize, seed: u64, strategy: Strategy) -> Result<Design> {
    let columns = raw_columns(space, n, seed, strategy)?;
    let mut configs: Vec<Configuration> = (0..n).map(|_| space.default_config()).collect();
    for column in &columns {
        let spec = &space.params()[column.param];
        for (row, sample) in column.samples.iter().enumerate() {
            configs[row].0[column.param] = snap_in_stratum(spec, sample);
        }
    }
    Ok(Design {
        configs,
        seed,
        strategy,
        rss: None,
    })
}

/// Resets all but `rss` randomly chosen tunable parameters of every
/// configuration to their defaults.
pub fn apply_random_subset(
    design: &Design,
    rss: usize,
    space: &ParameterSpace,
    seed: u64,
) -> Result<Design> {
    let tunable = space.tunable_indices();
    if rss == 0 {
        return Err(Error::InvalidArgument("random subset size must be >= 1".into()));
    }
    if rss > tunable.len() {
        return Err(Error::InvalidArgument(format!(
            "random subset size {rss} exceeds the {} tunable parameters",
            tunable.len()
        )));
    }
    let defaults = space.default_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; space.len()];
    let configs = design
        .configs
        .iter()
        .map(|config| {
            keep.iter_mut().for_each(|k| *k = false);
            for pick in index::sample(&mut rng, tunable.len(), rss) {
                keep[tunable[pick]] = true;
            }
            Configuration(
                config
                    .values()
                    .iter()
                    .zip(defaults.values())
                    .zip(&keep)
                    .map(|((&v, &d), &k)| if k { v } else { d })
                    .collect(),
            )
        })
        .collect();
    Ok(Design {
        configs,
        seed: design.seed,
        strategy: design.strategy,
        rss: Some(rss),
    })
}

/// One stratified draw before integer snapping.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StratumSample {
    pub value: f64,
    pub stratum_lo: f64,
    pub stratum_hi: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Column {
    pub param: usize,
    /// Indexed by configuration row.
    pub samples: Vec<StratumSample>,
}

/// Per tunable parameter, one real-valued draw per stratum, permuted across
/// rows. Parameters are processed in space order from a single seeded stream.
pub(crate) fn raw_columns(
    space: &ParameterSpace,
    n: usize,
    seed: u64,
    strategy: Strategy,
) -> Result<Vec<Column>> {
    if n == 0 {
        return Err(Error::InvalidArgument("design size must be >= 1".into()));
    }
    if space.tunable_count() == 0 {
        return Err(Error::InvalidArgument("space has no tunable parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns = Vec::with_capacity(space.tunable_count());
    for (param, spec) in space.params().iter().enumerate() {
        if !spec.tunable {
            continue;
        }
        let mut samples = Vec::with_capacity(n);
        match strategy {
            Strategy::Lhs => stratify(spec.lo, spec.hi, n, &mut rng, &mut samples),
            Strategy::SymmetricLhs => {
                let (low, high) = symmetric_split(spec, n);
                stratify(spec.lo, spec.default, low, &mut rng, &mut samples);
                stratify(spec.default, spec.hi, high, &mut rng, &mut samples);
            }
        }
        samples.shuffle(&mut rng);
        columns.push(Column { param, samples });
    }
    Ok(columns)
}

/// Stratum counts `(below default, at-or-above default)` for symmetric LHS.
pub fn symmetric_split(spec: &ParameterSpec, n: usize) -> (usize, usize) {
    match (spec.has_lower_half(), spec.has_upper_half()) {
        (true, true) => (n.div_ceil(2), n / 2),
        (false, _) => (0, n),
        (true, false) => (n, 0),
    }
}

fn stratify(lo: f64, hi: f64, count: usize, rng: &mut impl Rng, out: &mut Vec<StratumSample>) {
    if count == 0 {
        return;
    }
    let width = (hi - lo) / count as f64;
    for k in 0..count {
        let stratum_lo = lo + k as f64 * width;
        let stratum_hi = if k + 1 == count { hi } else { lo + (k + 1) as f64 * width };
        let u: f64 = rng.gen();
        let value = (stratum_lo + u * (stratum_hi - stratum_lo)).min(stratum_hi);
        out.push(StratumSample {
            value,
            stratum_lo,
            stratum_hi,
        });
    }
}

/// Integers snap to the nearest integer inside the stratum when one exists,
/// otherwise to the nearest integer overall.
fn snap_in_stratum(spec: &ParameterSpec, s: &StratumSample) -> f64 {
    match spec.kind {
        ParamKind::Continuous => s.value.clamp(spec.lo, spec.hi),
        ParamKind::Integer => {
            let first = s.stratum_lo.ceil();
            let last = s.stratum_hi.floor();
            let r = if first <= last {
                s.value.round().clamp(first, last)
            } else {
                s.value.round()
            };
            r.clamp(spec.lo, spec.hi)
        }
    }
}
