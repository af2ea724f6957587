use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::buffer::{RolloutBuffer, Transition};
use super::config::PpoConfig;
use super::critic::Critic;
use super::policy::{act, KoopmanActor};
use super::ppo::{ppo_update, UpdateStats};
use crate::envsim::{Environment, Observation};
use crate::episode::{run_enmpc_episode, Episode, EpisodeStart};
use crate::error::{check_dim, Error, Result};
use crate::koopman::KoopmanModel;
use crate::ocp::{ConstraintMode, Enmpc, OcpConfig};
use crate::optim::Adam;

pub const CHECKPOINT_FORMAT: &str = "koopman-enmpc-ppo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub const CURVE_HEADER: &str = "update,env_steps,eval_reward,violation_fraction,cost_savings";

/// One evaluation rollout on the learning curve. Update 0 is the initial
/// model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub update: usize,
    pub env_steps: usize,
    pub eval_reward: f64,
    pub violation_fraction: f64,
    pub cost_savings: f64,
}

impl CurvePoint {
    fn from_episode(update: usize, env_steps: usize, ep: &Episode) -> Self {
        Self {
            update,
            env_steps,
            eval_reward: ep.metrics.average_reward,
            violation_fraction: ep.metrics.violation_fraction,
            cost_savings: ep.metrics.cost_savings,
        }
    }
}

pub fn curve_csv(points: &[CurvePoint], config_hash: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = config_hash {
        let _ = writeln!(out, "# config_hash: {h}");
    }
    let _ = writeln!(out, "{CURVE_HEADER}");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.update, p.env_steps, p.eval_reward, p.violation_fraction, p.cost_savings
        );
    }
    out
}

pub fn write_curve_csv(path: impl AsRef<Path>, points: &[CurvePoint], config_hash: Option<&str>) -> Result<()> {
    fs::write(path, curve_csv(points, config_hash))?;
    Ok(())
}

/// Complete training state after an update round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub update: usize,
    pub env_steps: usize,
    pub model: KoopmanModel<f64>,
    pub critic: Critic,
    pub opt_actor: Adam,
    pub opt_critic: Adam,
    pub actor_rngs: Vec<ChaCha8Rng>,
    pub update_rng: ChaCha8Rng,
    pub best_model: KoopmanModel<f64>,
    pub best_reward: f64,
    pub best_update: usize,
    pub curve: Vec<CurvePoint>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidArgument(format!("not a training checkpoint: `{}`", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: c.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    /// Snapshot with the highest evaluation reward, possibly the initial
    /// model.
    pub best_model: KoopmanModel<f64>,
    pub best_reward: f64,
    pub best_update: usize,
    pub curve: Vec<CurvePoint>,
    pub final_model: KoopmanModel<f64>,
    pub critic: Critic,
    pub updates: Vec<UpdateStats>,
    pub aborted_updates: usize,
    pub env_steps: usize,
}

/// Deterministic rollout of the slack-penalty eNMPC.
pub fn evaluate(
    env: &mut Environment,
    model: &KoopmanModel<f64>,
    ocp: &OcpConfig,
    start: EpisodeStart,
) -> Result<Episode> {
    let mut ctrl = Enmpc::new(model.clone(), ocp.clone(), ConstraintMode::SlackPenalty)?;
    run_enmpc_episode(env, &mut ctrl, start)
}

/// An actor's persistent environment. Episodes continue across collection
/// rounds.
struct Worker {
    env: Environment,
    rng: ChaCha8Rng,
    obs: Option<Observation>,
    previous: Vec<f64>,
}

impl Worker {
    fn collect(
        &mut self,
        actor: &KoopmanActor,
        critic: &Critic,
        std: &[f64],
        steps: usize,
    ) -> Result<(Vec<Transition>, f64)> {
        let mut seg = Vec::with_capacity(steps);
        for _ in 0..steps {
            let obs = match self.obs.take() {
                Some(o) => o,
                None => {
                    let o = self.env.reset(self.rng.random());
                    self.previous = self.env.scale_input(&self.env.steady_input());
                    o
                }
            };
            let value = critic.value(&obs)?;
            let a = act(actor, &obs, std, &mut self.rng, &self.previous)?;
            let res = self.env.step(&a.applied)?;
            self.previous = a.applied;
            seg.push(Transition {
                obs,
                action: a.action,
                log_prob: a.log_prob,
                reward: res.reward,
                value,
                done: res.done,
                differentiable: a.differentiable,
            });
            self.obs = (!res.done).then_some(res.obs);
        }
        let bootstrap = match &self.obs {
            Some(o) => critic.value(o)?,
            None => 0.0,
        };
        Ok((seg, bootstrap))
    }
}

/// Where a training run reports and stores its progress.
pub struct TrainOutput<'a> {
    /// Rewritten after every round when set.
    pub checkpoint: Option<&'a Path>,
    pub config_hash: Option<&'a str>,
}

/// PPO refinement of the eNMPC policy. `env_factory(i)` builds the
/// environment of actor `i`; `initial_model` must already run at the
/// control step. Each round collects `n_actors × steps_per_actor` steps in
/// parallel, updates, and evaluates every `eval_every` rounds. A budget
/// smaller than one round returns the initial model.
#[allow(clippy::too_many_arguments)]
pub fn train(
    env_factory: &(dyn Fn(usize) -> Result<Environment> + Sync),
    eval_env: &mut Environment,
    eval_start: EpisodeStart,
    initial_model: &KoopmanModel<f64>,
    ocp: &OcpConfig,
    cfg: &PpoConfig,
    seed: u64,
    output: &TrainOutput<'_>,
    mut progress: impl FnMut(&CurvePoint, Option<&UpdateStats>),
) -> Result<TrainResult> {
    cfg.validate()?;
    check_dim("action_std length", ocp.n_u(), cfg.action_std.len())?;
    if (initial_model.dt_model - ocp.dt_minutes).abs() > 1e-9 {
        return Err(Error::InvalidArgument("policy model must run at the control step".into()));
    }
    let mut update_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut workers = (0..cfg.n_actors)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            Ok(Worker {
                env: env_factory(i)?,
                rng,
                obs: None,
                previous: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_in = Critic::n_inputs(&workers[0].env.observe());
    let mut critic = Critic::new(n_in, &cfg.critic_hidden, ocp.storage_bounds, &mut update_rng);
    let mut actor = KoopmanActor {
        model: initial_model.clone(),
        ocp: ocp.clone(),
    };
    let mut opt_actor = Adam::new(actor.model.dims.n_params(), cfg.learning_rate);
    let mut opt_critic = Adam::new(critic.n_params(), cfg.learning_rate);

    let ep = evaluate(eval_env, &actor.model, ocp, eval_start)?;
    let first = CurvePoint::from_episode(0, 0, &ep);
    progress(&first, None);
    let mut best = (actor.model.clone(), first.eval_reward, 0usize);
    let mut curve = vec![first];
    let mut updates = Vec::new();
    let mut env_steps = 0;

    for round in 1..=cfg.rounds() {
        let snapshot = actor.clone();
        let collected: Vec<Result<(Vec<Transition>, f64)>> = workers
            .par_iter_mut()
            .map(|w| w.collect(&snapshot, &critic, &cfg.action_std, cfg.steps_per_actor))
            .collect();
        let mut buffer = RolloutBuffer::default();
        for c in collected {
            let (seg, boot) = c?;
            buffer.segments.push(seg);
            buffer.bootstrap.push(boot);
        }
        env_steps += buffer.len();
        let stats = ppo_update(
            &mut actor,
            &mut critic,
            &mut opt_actor,
            &mut opt_critic,
            &buffer,
            cfg,
            &mut update_rng,
        )?;
        if round % cfg.eval_every == 0 {
            let ep = evaluate(eval_env, &actor.model, ocp, eval_start)?;
            let point = CurvePoint::from_episode(round, env_steps, &ep);
            progress(&point, Some(&stats));
            if point.eval_reward > best.1 {
                best = (actor.model.clone(), point.eval_reward, round);
            }
            curve.push(point);
        }
        updates.push(stats);
        if let Some(path) = output.checkpoint {
            Checkpoint {
                format: CHECKPOINT_FORMAT.into(),
                version: CHECKPOINT_VERSION,
                config_hash: output.config_hash.map(str::to_owned),
                update: round,
                env_steps,
                model: actor.model.clone(),
                critic: critic.clone(),
                opt_actor: opt_actor.clone(),
                opt_critic: opt_critic.clone(),
                actor_rngs: workers.iter().map(|w| w.rng.clone()).collect(),
                update_rng: update_rng.clone(),
                best_model: best.0.clone(),
                best_reward: best.1,
                best_update: best.2,
                curve: curve.clone(),
            }
            .save(path)?;
        }
    }
    let aborted_updates = updates.iter().filter(|s| s.aborted).count();
    Ok(TrainResult {
        best_model: best.0,
        best_reward: best.1,
        best_update: best.2,
        curve,
        final_model: actor.model,
        critic,
        updates,
        aborted_updates,
        env_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{EnvConfig, PriceSeries, SurrogatePlant};
    use crate::koopman::KoopmanDims;
    use std::sync::Arc;

    fn ocp() -> OcpConfig {
        OcpConfig {
            horizon: 4,
            ..OcpConfig::default()
        }
    }

    fn env() -> Result<Environment> {
        Environment::new(
            Arc::new(SurrogatePlant::default()),
            Arc::new(PriceSeries::synthetic_year(2023, 1)),
            ocp(),
            EnvConfig {
                episode_steps: 6,
                ..EnvConfig::default()
            },
        )
    }

    fn model() -> KoopmanModel<f64> {
        let dims = KoopmanDims {
            hidden: vec![8],
            ..KoopmanDims::default()
        };
        KoopmanModel::init(dims, 15.0, &mut ChaCha8Rng::seed_from_u64(4))
    }

    fn small(total_steps: usize) -> PpoConfig {
        PpoConfig {
            n_actors: 2,
            steps_per_actor: 8,
            minibatch_size: 8,
            epochs: 2,
            critic_hidden: vec![8],
            total_steps,
            ..PpoConfig::default()
        }
    }

    fn run(cfg: &PpoConfig, checkpoint: Option<&Path>) -> TrainResult {
        let out = TrainOutput {
            checkpoint,
            config_hash: Some("h"),
        };
        train(&|_| env(), &mut env().unwrap(), EpisodeStart::Hour(12), &model(), &ocp(), cfg, 7, &out, |_, _| {}).unwrap()
    }

    #[test]
    fn budget_below_one_round_returns_the_initial_model() {
        let r = run(&small(15), None);
        assert_eq!(r.best_model, model());
        assert_eq!(r.final_model, model());
        assert_eq!(r.curve.len(), 1);
        assert_eq!(r.env_steps, 0);
    }

    #[test]
    fn two_rounds_track_the_best_evaluation_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let r = run(&small(32), Some(&path));
        assert_eq!(r.curve.len(), 3);
        assert_eq!(r.env_steps, 32);
        let max = r.curve.iter().map(|p| p.eval_reward).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.best_reward, max);
        assert_eq!(r.curve[r.curve.iter().position(|p| p.eval_reward == max).unwrap()].update, r.best_update);
        assert_ne!(r.final_model, model());

        let c = Checkpoint::load(&path).unwrap();
        assert_eq!(c.model, r.final_model);
        assert_eq!(c.critic, r.critic);
        assert_eq!(c.curve, r.curve);
        assert_eq!(c.actor_rngs.len(), 2);
        assert_eq!(Checkpoint::from_json(&c.to_json().unwrap()).unwrap(), c);

        assert_eq!(run(&small(32), None).curve, r.curve);
        let csv = curve_csv(&r.curve, Some("h"));
        assert_eq!(csv.lines().count(), 2 + r.curve.len());
    }
}
