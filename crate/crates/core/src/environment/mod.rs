//! Evaluation targets.
//!
//! An [`Environment`] turns a [`Configuration`] into an [`EvaluationOutcome`].
//! The framework never looks inside: a crash, timeout, or unusable
//! configuration surfaces as `valid = false`, not as an error.

mod external;
mod simulator;

use serde::{Deserialize, Serialize};

pub use external::{AdapterSpec, ExternalAdapter};
pub use simulator::{
    sample_manifest, shipped_manifest, simulate_throughput, Hazard, Interaction, JointConstraint, Simulator,
    SimulatorSpec, SHIPPED_MANIFEST,
};

use crate::error::Result;
use crate::param_space::{Configuration, ParameterSpace};
use crate::sampling::{self, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutcome {
    pub valid: bool,
    /// Kilo-transactions per second.
    pub throughput: f64,
    pub metrics: Vec<f64>,
    /// Seconds.
    pub duration: f64,
}

impl EvaluationOutcome {
    pub fn invalid(metrics_dim: usize, duration: f64) -> Self {
        EvaluationOutcome {
            valid: false,
            throughput: 0.0,
            metrics: vec![0.0; metrics_dim],
            duration,
        }
    }
}

pub trait Environment: Send {
    /// The space configurations passed to [`evaluate`](Self::evaluate) are
    /// positional against.
    fn space(&self) -> &ParameterSpace;

    fn evaluate(&mut self, config: &Configuration) -> EvaluationOutcome;

    /// Number of evaluations performed so far. Environments whose noise
    /// depends on this counter can be fast-forwarded with
    /// [`set_evaluation_count`](Self::set_evaluation_count) when a run resumes.
    fn evaluation_count(&self) -> u64 {
        0
    }

    fn set_evaluation_count(&mut self, _count: u64) {}
}

/// How the configurations of a validity probe are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub strategy: Strategy,
    pub rss: Option<usize>,
    pub seed: u64,
}

/// Fraction of a freshly generated design of `n` configurations that the
/// environment accepts as valid.
pub fn validity_rate(
    space: &ParameterSpace,
    sampler: &DesignSpec,
    n: usize,
    env: &mut dyn Environment,
) -> Result<f64> {
    let mut design = sampling::generate(space, n, sampler.seed, sampler.strategy)?;
    if let Some(rss) = sampler.rss {
        design = sampling::apply_random_subset(&design, rss, space, sampler.seed.wrapping_add(1))?;
    }
    let valid = design
        .configs
        .iter()
        .filter(|c| env.evaluate(c).valid)
        .count();
    Ok(valid as f64 / n as f64)
}

/// Evaluates with a plain closure; handy for synthetic benchmarks.
pub struct FnEnvironment<F> {
    space: ParameterSpace,
    objective: F,
    count: u64,
}

impl<F> FnEnvironment<F>
where
    F: FnMut(&Configuration) -> EvaluationOutcome + Send,
{
    pub fn new(space: ParameterSpace, objective: F) -> Self {
        FnEnvironment {
            space,
            objective,
            count: 0,
        }
    }
}

impl<F> Environment for FnEnvironment<F>
where
    F: FnMut(&Configuration) -> EvaluationOutcome + Send,
{
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn evaluate(&mut self, config: &Configuration) -> EvaluationOutcome {
        self.count += 1;
        (self.objective)(config)
    }

    fn evaluation_count(&self) -> u64 {
        self.count
    }

    fn set_evaluation_count(&mut self, count: u64) {
        self.count = count;
    }
}
