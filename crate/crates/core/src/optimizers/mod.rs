//! Sequential tuners over a (reduced) parameter space.
//!
//! Every optimizer follows the same loop: suggest a configuration, evaluate
//! it once, observe the outcome. [`Tuner`] owns that loop together with the
//! run history, and serializes to a checkpoint from which a run resumes
//! bit-identically.

mod bo;
mod ddpg;
pub mod gp;
pub mod mlp;
mod random;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bo::{BayesOpt, BoSettings};
pub use ddpg::{DdpgAgent, DdpgSettings, Transition};
pub use random::{random_unit_point, RandomSearch};

use crate::environment::{Environment, EvaluationOutcome};
use crate::error::{Error, Result};
use crate::param_space::{Configuration, ParameterSpace};

/// Relative improvement over the default throughput.
pub fn reward(throughput: f64, default_throughput: f64) -> Result<f64> {
    if !(default_throughput > 0.0) {
        return Err(Error::DefaultInvalid(format!(
            "default throughput must be positive, got {default_throughput}"
        )));
    }
    Ok((throughput - default_throughput) / default_throughput)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub config: Configuration,
    pub outcome: EvaluationOutcome,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningHistory {
    pub steps: Vec<Step>,
    /// Best valid throughput so far; 0 until a step is valid.
    pub best_throughput: f64,
    /// Configuration of the best valid step; the default until one exists.
    pub best_config: Configuration,
    pub default_config: Configuration,
    pub default_outcome: EvaluationOutcome,
    pub default_throughput: f64,
}

impl TuningHistory {
    /// Fails when the default configuration is not operable, since rewards
    /// are relative to it.
    pub fn new(default_config: Configuration, default_outcome: EvaluationOutcome) -> Result<Self> {
        if !default_outcome.valid || !(default_outcome.throughput > 0.0) {
            return Err(Error::DefaultInvalid(format!(
                "the default configuration did not evaluate to a valid positive throughput \
                 (valid = {}, throughput = {})",
                default_outcome.valid, default_outcome.throughput
            )));
        }
        Ok(TuningHistory {
            steps: Vec::new(),
            best_throughput: 0.0,
            best_config: default_config.clone(),
            default_throughput: default_outcome.throughput,
            default_config,
            default_outcome,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, config: Configuration, outcome: EvaluationOutcome) -> &Step {
        let throughput = if outcome.valid { outcome.throughput } else { 0.0 };
        let r = reward(throughput, self.default_throughput).expect("checked in new");
        if outcome.valid && throughput > self.best_throughput {
            self.best_throughput = throughput;
            self.best_config = config.clone();
        }
        self.steps.push(Step {
            config,
            outcome,
            reward: r,
        });
        self.steps.last().expect("just pushed")
    }

    /// Best valid throughput after each step (0 before the first valid one).
    pub fn best_trace(&self) -> Vec<f64> {
        let mut best = 0.0f64;
        self.steps
            .iter()
            .map(|s| {
                if s.outcome.valid {
                    best = best.max(s.outcome.throughput);
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Random,
    Bo,
    Rl,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Random, Method::Bo, Method::Rl];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Bo => "bo",
            Method::Rl => "rl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Method::Random),
            "bo" => Ok(Method::Bo),
            "rl" | "ddpg" => Ok(Method::Rl),
            other => Err(Error::InvalidArgument(format!(
                "unknown optimizer '{other}' (expected random, bo or rl)"
            ))),
        }
    }
}

/// One of the three optimizers, with all of its mutable state.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Random(RandomSearch),
    Bo(BayesOpt),
    Rl(DdpgAgent),
}

impl Optimizer {
    pub fn new(method: Method, space: &ParameterSpace, history: &TuningHistory, steps: usize, seed: u64) -> Result<Self> {
        Ok(match method {
            Method::Random => Optimizer::Random(RandomSearch::new(seed)),
            Method::Bo => Optimizer::Bo(BayesOpt::new(space, BoSettings::default(), seed)?),
            Method::Rl => Optimizer::Rl(DdpgAgent::new(
                space,
                &history.default_outcome,
                steps,
                DdpgSettings::default(),
                seed,
            )),
        })
    }

    pub fn method(&self) -> Method {
        match self {
            Optimizer::Random(_) => Method::Random,
            Optimizer::Bo(_) => Method::Bo,
            Optimizer::Rl(_) => Method::Rl,
        }
    }

    pub fn suggest(&mut self, space: &ParameterSpace, history: &TuningHistory) -> Result<Configuration> {
        match self {
            Optimizer::Random(o) => Ok(o.suggest(space)),
            Optimizer::Bo(o) => o.suggest(space, history),
            Optimizer::Rl(o) => o.suggest(space, history),
        }
    }

    /// Called after the newest step was appended to `history`.
    pub fn observe(&mut self, space: &ParameterSpace, history: &TuningHistory) -> Result<()> {
        match self {
            Optimizer::Random(_) | Optimizer::Bo(_) => Ok(()),
            Optimizer::Rl(o) => o.observe(space, history),
        }
    }
}

/// A tuning run: space, history and optimizer state. Serializable as a
/// checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tuner {
    pub space: ParameterSpace,
    pub total_steps: usize,
    pub seed: u64,
    pub history: TuningHistory,
    pub optimizer: Optimizer,
    /// Environment evaluation counter after the last completed step.
    pub evaluations: u64,
}

impl Tuner {
    /// Measures the default configuration once and sets up the optimizer.
    pub fn start(env: &mut dyn Environment, method: Method, total_steps: usize, seed: u64) -> Result<Tuner> {
        let space = env.space().clone();
        if space.tunable_count() == 0 {
            return Err(Error::InvalidArgument("the parameter space has no tunable parameters".into()));
        }
        let default_config = space.default_config();
        let default_outcome = env.evaluate(&default_config);
        let history = TuningHistory::new(default_config, default_outcome)?;
        let optimizer = Optimizer::new(method, &space, &history, total_steps, seed)?;
        Ok(Tuner {
            space,
            total_steps,
            seed,
            history,
            optimizer,
            evaluations: env.evaluation_count(),
        })
    }

    pub fn method(&self) -> Method {
        self.optimizer.method()
    }

    pub fn is_done(&self) -> bool {
        self.history.len() >= self.total_steps
    }

    /// Suggests, evaluates once and observes. Returns the recorded step.
    pub fn step(&mut self, env: &mut dyn Environment) -> Result<&Step> {
        if self.is_done() {
            return Err(Error::InvalidArgument(format!(
                "run already finished its {} steps",
                self.total_steps
            )));
        }
        let config = self.optimizer.suggest(&self.space, &self.history)?;
        let outcome = env.evaluate(&config);
        self.history.push(config, outcome);
        self.optimizer.observe(&self.space, &self.history)?;
        self.evaluations = env.evaluation_count();
        Ok(self.history.steps.last().expect("just pushed"))
    }

    /// Prepares `env` to continue from this checkpoint.
    pub fn attach(&self, env: &mut dyn Environment) -> Result<()> {
        if env.space() != &self.space {
            return Err(Error::InvalidArgument(
                "checkpoint was taken on a different parameter space".into(),
            ));
        }
        env.set_evaluation_count(self.evaluations);
        Ok(())
    }

    pub fn run_to_end(&mut self, env: &mut dyn Environment) -> Result<&TuningHistory> {
        while !self.is_done() {
            self.step(env)?;
        }
        Ok(&self.history)
    }
}

/// Runs `steps` steps of `method` from scratch.
pub fn tune(env: &mut dyn Environment, method: Method, steps: usize, seed: u64) -> Result<TuningHistory> {
    let mut tuner = Tuner::start(env, method, steps, seed)?;
    tuner.run_to_end(env)?;
    Ok(tuner.history)
}
