use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dataset::{sample_random, DataSource, RandomSamplingConfig, SIDataset, Trajectory};
use super::fit::{fit_koopman, fit_koopman_from, FitConfig};
use crate::envsim::{EnvConfig, Environment, PlantModel, PriceSeries};
use crate::episode::{run_enmpc_episode, EpisodeStart};
use crate::error::{Error, Result};
use crate::koopman::{KoopmanDims, KoopmanModel};
use crate::ocp::{ConstraintMode, Enmpc, OcpConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiConfig {
    pub max_iterations: usize,
    /// Iterations without a better rollout reward before stopping.
    pub patience: usize,
    /// Control steps per closed-loop rollout.
    pub rollout_steps: usize,
    pub random: RandomSamplingConfig,
    pub fit: FitConfig,
    /// Start each fit from the previous iteration's model.
    pub continue_training: bool,
}

impl Default for SiConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            patience: 5,
            rollout_steps: 288,
            random: RandomSamplingConfig::default(),
            fit: FitConfig::default(),
            continue_training: true,
        }
    }
}

impl SiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.patience == 0 || self.rollout_steps == 0 {
            return Err(Error::InvalidArgument(
                "si config: max_iterations, patience and rollout_steps must be positive".into(),
            ));
        }
        self.fit.validate()
    }
}

/// Stops after `patience` consecutive iterations that do not beat the best
/// value so far. Failed iterations count as not improving.
#[derive(Clone, Debug, PartialEq)]
pub struct PatienceTracker {
    pub patience: usize,
    pub best: Option<(usize, f64)>,
    pub since_best: usize,
}

impl PatienceTracker {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records an iteration; returns `true` when the loop should stop.
    pub fn record(&mut self, index: usize, value: Option<f64>) -> bool {
        match (value, self.best) {
            (Some(v), None) => self.best = Some((index, v)),
            (Some(v), Some((_, b))) if v > b => self.best = Some((index, v)),
            _ => {
                self.since_best += 1;
                return self.since_best >= self.patience;
            }
        }
        self.since_best = 0;
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiIteration {
    /// 1-based.
    pub iteration: usize,
    pub average_reward: Option<f64>,
    pub violation_fraction: Option<f64>,
    pub cost_savings: Option<f64>,
    pub validation_loss: Option<f64>,
    /// Dataset size used for the fit.
    pub n_records: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SiResult {
    /// Model at the sampling period of the data.
    pub model: KoopmanModel<f64>,
    /// The same model chained to the control step.
    pub controller_model: KoopmanModel<f64>,
    pub best_iteration: usize,
    pub best_reward: f64,
    pub history: Vec<SiIteration>,
    pub dataset: SIDataset,
}

/// Closed-loop rollout of the hard-constrained eNMPC with `model` (already at
/// the control step). Returns the rollout's scaled plant data and metrics.
pub fn enmpc_rollout(
    env: &mut Environment,
    model: &KoopmanModel<f64>,
    seed: u64,
) -> Result<(Trajectory, crate::episode::EpisodeMetrics)> {
    let mut ctrl = Enmpc::new(model.clone(), env.ocp.clone(), ConstraintMode::Hard)?;
    let ep = run_enmpc_episode(env, &mut ctrl, EpisodeStart::Seed(seed))?;
    let traj = Trajectory::from_samples(DataSource::EnmpcRollout, env.cfg.sample_minutes, &ep.samples, ep.last_obs);
    Ok((traj, ep.metrics))
}

/// Iterative data sampling and identification: random actuation first, then
/// alternate fitting, chaining the model to the control step, and closed-loop
/// rollouts whose data is appended to the dataset. Returns the model whose
/// rollout had the highest average reward.
#[allow(clippy::too_many_arguments)]
pub fn iterative_si(
    plant: Arc<dyn PlantModel>,
    prices: Arc<PriceSeries>,
    ocp: &OcpConfig,
    env_cfg: &EnvConfig,
    dims: &KoopmanDims,
    cfg: &SiConfig,
    seed: u64,
    mut progress: impl FnMut(&SiIteration),
) -> Result<SiResult> {
    cfg.validate()?;
    if (cfg.random.sample_minutes - env_cfg.sample_minutes).abs() > 1e-12 {
        return Err(Error::InvalidArgument(
            "random sampling and rollouts must use the same sampling period".into(),
        ));
    }
    let ratio = ocp.dt_minutes / env_cfg.sample_minutes;
    let k = ratio.round() as usize;
    if (ratio - k as f64).abs() > 1e-9 || k == 0 {
        return Err(Error::InvalidArgument("control step must be a multiple of the sampling period".into()));
    }
    let mut env = Environment::new(
        plant.clone(),
        prices,
        ocp.clone(),
        EnvConfig {
            episode_steps: cfg.rollout_steps,
            ..env_cfg.clone()
        },
    )?;
    let mut dataset = SIDataset::default();
    for t in sample_random(plant.as_ref(), env.scaling(), &cfg.random, seed)? {
        dataset.push(t)?;
    }
    let mut tracker = PatienceTracker::new(cfg.patience);
    let mut history = Vec::new();
    let mut best: Option<KoopmanModel<f64>> = None;
    let mut previous: Option<KoopmanModel<f64>> = None;
    for it in 1..=cfg.max_iterations {
        let fit_seed = seed.wrapping_add(it as u64);
        let mut row = SiIteration {
            iteration: it,
            average_reward: None,
            violation_fraction: None,
            cost_savings: None,
            validation_loss: None,
            n_records: dataset.n_records(),
            error: None,
        };
        let fitted = match (&previous, cfg.continue_training) {
            (Some(prev), true) => fit_koopman_from(&dataset, prev.clone(), &cfg.fit, fit_seed),
            _ => fit_koopman(&dataset, dims, &cfg.fit, fit_seed),
        };
        let outcome = fitted.and_then(|fit| {
            row.validation_loss = Some(fit.validation_loss);
            let up = fit.model.upscale(k)?;
            let (traj, metrics) = enmpc_rollout(&mut env, &up, fit_seed)?;
            Ok((fit.model, traj, metrics))
        });
        let reward = match outcome {
            Ok((model, traj, metrics)) => {
                row.average_reward = Some(metrics.average_reward);
                row.violation_fraction = Some(metrics.violation_fraction);
                row.cost_savings = Some(metrics.cost_savings);
                dataset.push(traj)?;
                let improves = tracker.best.is_none_or(|(_, b)| metrics.average_reward > b);
                if improves {
                    best = Some(model.clone());
                }
                previous = Some(model);
                Some(metrics.average_reward)
            }
            Err(e) => {
                row.error = Some(e.to_string());
                None
            }
        };
        progress(&row);
        history.push(row);
        if tracker.record(it, reward) {
            break;
        }
    }
    let (best_iteration, best_reward) = tracker
        .best
        .ok_or_else(|| Error::Solver("no identification iteration completed".into()))?;
    let model = best.expect("a best iteration implies a best model");
    Ok(SiResult {
        controller_model: model.upscale(k)?,
        model,
        best_iteration,
        best_reward,
        history,
        dataset,
    })
}
