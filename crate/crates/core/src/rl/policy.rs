use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envsim::Observation;
use crate::error::Result;
use crate::koopman::KoopmanModel;
use crate::ocp::{build_ocp, solve_qp, ConstraintMode, OcpConfig, PolicyEval};

/// `log N(a; mean, diag(std²))`.
pub fn gaussian_log_prob(a: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    let ln_sqrt_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    a.iter()
        .zip(mean)
        .zip(std)
        .map(|((a, m), s)| -0.5 * ((a - m) / s).powi(2) - s.ln() - ln_sqrt_2pi)
        .sum()
}

pub fn gaussian_entropy(std: &[f64]) -> f64 {
    std.iter()
        .map(|s| 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * s * s).ln())
        .sum()
}

pub fn clip_action(a: &[f64]) -> Vec<f64> {
    a.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
}

/// A deterministic, differentiable map from observations to mean actions.
pub trait Actor: Sync {
    fn n_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
    /// Mean action, or `None` if it could not be computed.
    fn mean(&self, obs: &Observation) -> Result<Option<Vec<f64>>>;
    /// Mean action and `∂ℓ/∂θ` for a loss whose gradient with respect to the
    /// mean is `dloss(mean)`. `None` marks a non-differentiable step.
    fn mean_and_grad(
        &self,
        obs: &Observation,
        dloss: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Option<(Vec<f64>, Vec<f64>)>>;
}

/// The Koopman eNMPC with slack penalties: the mean action is the first
/// input of the OCP solution.
#[derive(Clone, Debug)]
pub struct KoopmanActor {
    pub model: KoopmanModel<f64>,
    pub ocp: OcpConfig,
}

impl Actor for KoopmanActor {
    fn n_params(&self) -> usize {
        self.model.dims.n_params()
    }

    fn params(&self) -> Vec<f64> {
        self.model.flatten().0
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.model.set_params(params)
    }

    fn mean(&self, obs: &Observation) -> Result<Option<Vec<f64>>> {
        let ocp = build_ocp(&self.model, &obs.ocp_input(&self.ocp), &self.ocp, ConstraintMode::SlackPenalty)?;
        let sol = solve_qp(&ocp.qp, &self.ocp.solver, None)?;
        Ok(sol.is_solved().then(|| ocp.first_input(&sol.x)))
    }

    fn mean_and_grad(
        &self,
        obs: &Observation,
        dloss: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let eval = PolicyEval::new(&self.model, &obs.ocp_input(&self.ocp), &self.ocp, None)?;
        if !eval.is_solved() {
            return Ok(None);
        }
        let mean = eval.u0().to_vec();
        let grad = eval.gradient(&dloss(&mean))?;
        Ok(Some((mean, grad)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionSample {
    /// Gaussian draw before clipping; the log-probability refers to it.
    pub action: Vec<f64>,
    /// What is sent to the plant.
    pub applied: Vec<f64>,
    pub log_prob: f64,
    pub mean: Vec<f64>,
    pub differentiable: bool,
}

/// Samples `mean + std ⊙ ε` and clips it to the scaled box. If the mean
/// cannot be computed the previous action is repeated and the step is marked
/// non-differentiable. Noise is drawn in either case.
pub fn act<R: Rng + ?Sized>(
    actor: &dyn Actor,
    obs: &Observation,
    std: &[f64],
    rng: &mut R,
    previous: &[f64],
) -> Result<ActionSample> {
    let eps: Vec<f64> = std.iter().map(|_| StandardNormal.sample(rng)).collect();
    Ok(match actor.mean(obs)? {
        Some(mean) => {
            let action: Vec<f64> = mean.iter().zip(&eps).zip(std).map(|((m, e), s)| m + s * e).collect();
            ActionSample {
                applied: clip_action(&action),
                log_prob: gaussian_log_prob(&action, &mean, std),
                action,
                mean,
                differentiable: true,
            }
        }
        None => ActionSample {
            action: previous.to_vec(),
            applied: clip_action(previous),
            log_prob: 0.0,
            mean: previous.to_vec(),
            differentiable: false,
        },
    })
}
