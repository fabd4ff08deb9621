use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Gradients, Mlp};
use super::TuningHistory;
use crate::environment::EvaluationOutcome;
use crate::error::{Error, Result};
use crate::param_space::{Configuration, ParameterSpace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdpgSettings {
    pub hidden: usize,
    pub replay_capacity: usize,
    pub warmup: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub max_grad_norm: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
}

impl Default for DdpgSettings {
    fn default() -> Self {
        DdpgSettings {
            hidden: 64,
            replay_capacity: 10_000,
            warmup: 64,
            batch_size: 32,
            gamma: 0.9,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            max_grad_norm: 1.0,
            sigma_start: 0.5,
            sigma_end: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Actor–critic agent. The state is the environment's metrics vector; the
/// action is a point of `[-1, 1]^d` mapped through the symmetric transform
/// (`-1` → lower bound, `0` → default, `+1` → upper bound).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DdpgAgent {
    pub settings: DdpgSettings,
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    replay: Vec<Transition>,
    replay_next: usize,
    state: Vec<f64>,
    pending_action: Option<Vec<f64>>,
    total_steps: usize,
    updates: u64,
    rng: ChaCha8Rng,
}

impl DdpgAgent {
    pub fn new(
        space: &ParameterSpace,
        default_outcome: &EvaluationOutcome,
        total_steps: usize,
        settings: DdpgSettings,
        seed: u64,
    ) -> DdpgAgent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = state_of(default_outcome);
        let s = state.len();
        let d = space.tunable_count();
        let h = settings.hidden;
        let actor = Mlp::new(&[s, h, h, d], Activation::Tanh, 3e-3, &mut rng);
        let critic = Mlp::new(&[s + d, h, h, 1], Activation::Identity, 3e-3, &mut rng);
        DdpgAgent {
            settings,
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            replay: Vec::new(),
            replay_next: 0,
            state,
            pending_action: None,
            total_steps,
            updates: 0,
            rng,
        }
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Exploration scale at step `t`, linear from `sigma_start` to `sigma_end`.
    pub fn sigma(&self, t: usize) -> f64 {
        let s = &self.settings;
        if self.total_steps <= 1 {
            return s.sigma_start;
        }
        let frac = (t as f64 / (self.total_steps - 1) as f64).min(1.0);
        s.sigma_start + (s.sigma_end - s.sigma_start) * frac
    }

    pub fn suggest(&mut self, space: &ParameterSpace, history: &TuningHistory) -> Result<Configuration> {
        let mut action = self.actor.forward(&self.state)?;
        let noise = Normal::new(0.0, self.sigma(history.len())).map_err(|e| Error::Numerical(e.to_string()))?;
        for a in &mut action {
            *a = (*a + noise.sample(&mut self.rng)).clamp(-1.0, 1.0);
        }
        let config = action_to_config(space, &action);
        self.pending_action = Some(action);
        Ok(config)
    }

    pub fn observe(&mut self, _space: &ParameterSpace, history: &TuningHistory) -> Result<()> {
        let step = history.steps.last().ok_or_else(|| Error::InvalidArgument("observe before any step".into()))?;
        let action = self
            .pending_action
            .take()
            .ok_or_else(|| Error::InvalidArgument("observe without a pending action".into()))?;
        let next_state = if step.outcome.valid {
            state_of(&step.outcome)
        } else {
            vec![0.0; self.state.len()]
        };
        if next_state.len() != self.state.len() {
            return Err(Error::Environment(format!(
                "metrics vector changed length from {} to {}",
                self.state.len(),
                next_state.len()
            )));
        }
        let state = std::mem::replace(&mut self.state, next_state.clone());
        self.remember(Transition {
            state,
            action,
            reward: step.reward,
            next_state,
        });
        if self.replay.len() >= self.settings.warmup.max(self.settings.batch_size) {
            self.train_step()?;
        }
        Ok(())
    }

    fn remember(&mut self, t: Transition) {
        if self.replay.len() < self.settings.replay_capacity {
            self.replay.push(t);
        } else {
            self.replay[self.replay_next] = t;
            self.replay_next = (self.replay_next + 1) % self.settings.replay_capacity;
        }
    }

    /// One critic and one actor update on a uniformly drawn batch, then soft
    /// target updates.
    pub fn train_step(&mut self) -> Result<()> {
        let n = self.settings.batch_size.min(self.replay.len());
        let picks = index::sample(&mut self.rng, self.replay.len(), n).into_vec();
        let batch: Vec<&Transition> = picks.iter().map(|&i| &self.replay[i]).collect();
        let d = self.actor.output_dim();

        let mut critic_grads = Gradients::zeros_like(&self.critic);
        for t in &batch {
            let next_action = self.target_actor.forward(&t.next_state)?;
            let next_q = self.target_critic.forward(&concat(&t.next_state, &next_action))?[0];
            let target = t.reward + self.settings.gamma * next_q;
            let trace = self.critic.forward_trace(&concat(&t.state, &t.action))?;
            let err = trace.output()[0] - target;
            // d/dq of (q - target)^2 / n
            let (g, _) = self.critic.backward(&trace, &[2.0 * err / n as f64]);
            critic_grads.add_assign(&g);
        }
        critic_grads.clip_norm(self.settings.max_grad_norm);
        self.critic.apply_gradients(&critic_grads, self.settings.critic_lr);

        let mut actor_grads = Gradients::zeros_like(&self.actor);
        for t in &batch {
            let actor_trace = self.actor.forward_trace(&t.state)?;
            let critic_trace = self.critic.forward_trace(&concat(&t.state, actor_trace.output()))?;
            // ascend Q: descend -Q / n
            let (_, dq_dinput) = self.critic.backward(&critic_trace, &[-1.0 / n as f64]);
            let dq_daction = &dq_dinput[dq_dinput.len() - d..];
            let (g, _) = self.actor.backward(&actor_trace, dq_daction);
            actor_grads.add_assign(&g);
        }
        actor_grads.clip_norm(self.settings.max_grad_norm);
        self.actor.apply_gradients(&actor_grads, self.settings.actor_lr);

        self.target_actor.soft_update(&self.actor, self.settings.tau);
        self.target_critic.soft_update(&self.critic, self.settings.tau);
        self.updates += 1;
        Ok(())
    }
}

/// Metrics as the state; environments without metrics get a constant input.
fn state_of(outcome: &EvaluationOutcome) -> Vec<f64> {
    if outcome.metrics.is_empty() {
        vec![1.0]
    } else {
        outcome.metrics.clone()
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// `a ∈ [-1, 1]^d` to a configuration via `x = (a + 1) / 2` in symmetric
/// unit coordinates.
pub fn action_to_config(space: &ParameterSpace, action: &[f64]) -> Configuration {
    let unit: Vec<f64> = action.iter().map(|a| (a.clamp(-1.0, 1.0) + 1.0) / 2.0).collect();
    space.denormalize(&unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param_space::{ParamKind, ParameterSpec};

    fn space() -> ParameterSpace {
        ParameterSpace::new(
            vec![
                ParameterSpec::derived("a", 1.0, ParamKind::Continuous, 10.0).unwrap(),
                ParameterSpec::derived("b", 64.0, ParamKind::Integer, 10.0).unwrap(),
            ],
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn action_transform_anchors() {
        let s = space();
        assert_eq!(action_to_config(&s, &[0.0, 0.0]), s.default_config());
        assert_eq!(action_to_config(&s, &[1.0, 1.0]).0, vec![10.0, 640.0]);
        assert_eq!(action_to_config(&s, &[-1.0, -1.0]).0, vec![0.1, 6.0]);
    }

    #[test]
    fn sigma_decays_linearly() {
        let outcome = EvaluationOutcome {
            valid: true,
            throughput: 1.0,
            metrics: vec![0.5; 4],
            duration: 0.0,
        };
        let agent = DdpgAgent::new(&space(), &outcome, 11, DdpgSettings::default(), 0);
        assert_eq!(agent.sigma(0), 0.5);
        assert!((agent.sigma(5) - 0.275).abs() < 1e-12);
        assert!((agent.sigma(10) - 0.05).abs() < 1e-12);
    }
}
