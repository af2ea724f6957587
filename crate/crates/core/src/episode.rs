//! Closed-loop episodes and their summary metrics.

use crate::envsim::{Environment, Observation, Sample, TrajectoryRow};
use crate::error::Result;
use crate::ocp::Enmpc;

/// What a policy returns for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    /// Scaled input.
    pub action: Vec<f64>,
    pub solve_seconds: f64,
    /// The optimizer failed and a fallback action was used.
    pub failed: bool,
}

/// Where an episode starts in the price series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpisodeStart {
    Seed(u64),
    Hour(usize),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeMetrics {
    pub steps: usize,
    pub average_reward: f64,
    /// Share of steps with any violation flag.
    pub violation_fraction: f64,
    /// `1 − Σ cost / Σ steady-state cost`.
    pub cost_savings: f64,
    pub total_cost: f64,
    pub steady_cost: f64,
    pub failed_solves: usize,
    /// Largest deviation from the storage balance over the episode.
    pub storage_residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveTimes {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl SolveTimes {
    pub fn from_samples(t: &[f64]) -> Self {
        if t.is_empty() {
            return Self::default();
        }
        Self {
            min: t.iter().copied().fold(f64::INFINITY, f64::min),
            mean: t.iter().sum::<f64>() / t.len() as f64,
            max: t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Episode {
    pub metrics: EpisodeMetrics,
    pub rows: Vec<TrajectoryRow>,
    pub rewards: Vec<f64>,
    pub solve_seconds: Vec<f64>,
    /// Scaled plant samples of the whole episode.
    pub samples: Vec<Sample>,
    /// Scaled observation after the last sample.
    pub last_obs: Vec<f64>,
}

impl Episode {
    pub fn solve_times(&self) -> SolveTimes {
        SolveTimes::from_samples(&self.solve_seconds)
    }
}

/// Runs one episode to completion. An integrator failure ends the episode;
/// samples of the failed step are dropped.
pub fn run_episode(
    env: &mut Environment,
    start: EpisodeStart,
    policy: &mut dyn FnMut(&Observation) -> Result<Decision>,
) -> Result<Episode> {
    let mut obs = match start {
        EpisodeStart::Seed(s) => env.reset(s),
        EpisodeStart::Hour(h) => env.reset_at(h),
    };
    let mut ep = Episode {
        last_obs: obs.x_obs.clone(),
        ..Default::default()
    };
    let (mut cost, mut steady, mut violating, mut residual) = (0.0, 0.0, 0usize, 0.0f64);
    loop {
        let d = policy(&obs)?;
        ep.solve_seconds.push(d.solve_seconds);
        ep.metrics.failed_solves += usize::from(d.failed);
        let res = env.step(&d.action)?;
        if res.info.integrator_failed {
            ep.rewards.push(res.reward);
            violating += 1;
            break;
        }
        ep.samples.extend(res.info.samples.iter().cloned());
        ep.last_obs = res.obs.x_obs.clone();
        cost += res.info.step_cost;
        steady += res.info.steady_cost;
        violating += usize::from(res.info.any_violation());
        residual = residual.max(env.ledger().residual(res.obs.storage).abs());
        ep.rows.push(TrajectoryRow::from_step(ep.rows.len(), &res));
        ep.rewards.push(res.reward);
        obs = res.obs;
        if res.done {
            break;
        }
    }
    let n = ep.rewards.len();
    ep.metrics.steps = n;
    ep.metrics.average_reward = ep.rewards.iter().sum::<f64>() / n as f64;
    ep.metrics.violation_fraction = violating as f64 / n as f64;
    ep.metrics.total_cost = cost;
    ep.metrics.steady_cost = steady;
    ep.metrics.cost_savings = if steady != 0.0 { 1.0 - cost / steady } else { 0.0 };
    ep.metrics.storage_residual = residual;
    Ok(ep)
}

/// Runs an episode with a receding-horizon controller.
pub fn run_enmpc_episode(env: &mut Environment, ctrl: &mut Enmpc, start: EpisodeStart) -> Result<Episode> {
    ctrl.reset();
    let ocp = ctrl.cfg.clone();
    run_episode(env, start, &mut |obs| {
        let step = ctrl.act(&obs.ocp_input(&ocp))?;
        Ok(Decision {
            action: step.action,
            solve_seconds: step.solve_seconds,
            failed: step.held,
        })
    })
}

/// Holds the steady-state input throughout.
pub fn run_steady_episode(env: &mut Environment, start: EpisodeStart) -> Result<Episode> {
    let action = env.scale_input(&env.steady_input());
    run_episode(env, start, &mut |_| {
        Ok(Decision {
            action: action.clone(),
            solve_seconds: 0.0,
            failed: false,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{EnvConfig, PriceSeries, SurrogatePlant};
    use crate::ocp::OcpConfig;
    use std::sync::Arc;

    #[test]
    fn steady_policy_has_no_savings_and_no_violations() {
        let mut env = Environment::new(
            Arc::new(SurrogatePlant::default()),
            Arc::new(PriceSeries::synthetic_year(2023, 2)),
            OcpConfig::default(),
            EnvConfig {
                episode_steps: 48,
                ..EnvConfig::default()
            },
        )
        .unwrap();
        let ep = run_steady_episode(&mut env, EpisodeStart::Hour(100)).unwrap();
        assert_eq!(ep.metrics.steps, 48);
        assert_eq!(ep.metrics.violation_fraction, 0.0);
        assert!(ep.metrics.cost_savings.abs() < 1e-12);
        assert!(ep.metrics.average_reward.abs() < 1e-12);
        assert_eq!(ep.samples.len(), 48 * 3);
        assert!(ep.metrics.storage_residual <= 1e-12);
    }
}
