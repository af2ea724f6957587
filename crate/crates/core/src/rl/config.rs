use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub n_actors: usize,
    pub steps_per_actor: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Bound on the norm of the joint actor and critic gradient.
    pub max_grad_norm: f64,
    /// Exploration noise in scaled action units.
    pub action_std: Vec<f64>,
    pub normalize_advantages: bool,
    pub critic_hidden: Vec<usize>,
    pub total_steps: usize,
    /// Collection rounds between evaluations.
    pub eval_every: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            value_coef: 5.0,
            entropy_coef: 1e-3,
            n_actors: 8,
            steps_per_actor: 512,
            minibatch_size: 256,
            epochs: 10,
            learning_rate: 1e-4,
            max_grad_norm: 0.5,
            action_std: vec![0.15; 4],
            normalize_advantages: true,
            critic_hidden: vec![64, 64],
            total_steps: 200_000,
            eval_every: 1,
        }
    }
}

impl PpoConfig {
    pub fn round_size(&self) -> usize {
        self.n_actors * self.steps_per_actor
    }

    /// Complete collection rounds that fit into `total_steps`.
    pub fn rounds(&self) -> usize {
        self.total_steps / self.round_size().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("ppo config: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon must be positive");
        }
        if self.n_actors == 0 || self.steps_per_actor == 0 || self.minibatch_size == 0 || self.epochs == 0 {
            return bad("actor, step, minibatch and epoch counts must be positive");
        }
        if self.round_size() % self.minibatch_size != 0 {
            return bad("minibatch_size must divide n_actors * steps_per_actor");
        }
        if !(self.learning_rate > 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning_rate and max_grad_norm must be positive");
        }
        if self.action_std.is_empty() || self.action_std.iter().any(|s| !(*s > 0.0)) {
            return bad("action_std entries must be positive");
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0) {
            return bad("loss coefficients must be non-negative");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        Ok(())
    }
}
