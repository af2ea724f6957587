use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use koopman_enmpc::envsim::{write_trajectory_csv, Environment, PlantModel, PriceSeries, SurrogatePlant};
use koopman_enmpc::episode::{run_enmpc_episode, run_steady_episode, Episode, EpisodeStart};
use koopman_enmpc::koopman::{load_model, save_model, KoopmanModel};
use koopman_enmpc::ocp::Enmpc;
use koopman_enmpc::rl::{train, write_curve_csv, CurvePoint, TrainOutput, TrainResult};
use koopman_enmpc::sysid::{iterative_si, SiIteration, SiResult};
use koopman_enmpc::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// A validated configuration with its hash and output directory.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash()?;
        fs::create_dir_all(&cfg.out)?;
        Ok(Self { cfg, hash })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    pub fn plant(&self) -> Arc<dyn PlantModel> {
        Arc::new(SurrogatePlant {
            input_bounds: self.cfg.ocp.input_bounds.clone(),
        })
    }

    fn environment(&self, prices: Arc<PriceSeries>) -> Result<Environment> {
        Environment::new(self.plant(), prices, self.cfg.ocp.clone(), self.cfg.env.clone())
    }

    /// Loads a model and chains it to the control step if it was identified
    /// at a finer sampling period.
    pub fn controller_model(&self, path: &Path) -> Result<KoopmanModel<f64>> {
        let model = load_model(path)?;
        let ratio = self.cfg.ocp.dt_minutes / model.dt_model;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "model step {} min does not divide the control step {} min",
                model.dt_model, self.cfg.ocp.dt_minutes
            )));
        }
        if k == 1.0 {
            Ok(model)
        } else {
            model.upscale(k as usize)
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const SI_HISTORY_HEADER: &str =
    "iteration,n_records,average_reward,violation_fraction,cost_savings,validation_loss,error";

pub fn si_history_csv(rows: &[SiIteration], config_hash: &str) -> String {
    let mut out = format!("# config_hash: {config_hash}\n{SI_HISTORY_HEADER}\n");
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.n_records,
            opt(r.average_reward),
            opt(r.violation_fraction),
            opt(r.cost_savings),
            opt(r.validation_loss),
            err
        );
    }
    out
}

/// Iterative identification. Writes `si_model.json` (sampling period),
/// `controller_model.json` (control step), `si_dataset.json` and
/// `si_history.csv`.
pub fn cmd_sysid(ctx: &Context) -> Result<SiResult> {
    let cfg = &ctx.cfg;
    let prices = Arc::new(cfg.training_prices()?);
    let res = iterative_si(
        ctx.plant(),
        prices,
        &cfg.ocp,
        &cfg.env,
        &cfg.model,
        &cfg.sysid,
        cfg.seed,
        |r| match (&r.error, r.average_reward) {
            (Some(e), _) => eprintln!("sysid iteration {}: failed: {e}", r.iteration),
            (None, Some(rw)) => eprintln!(
                "sysid iteration {}: reward {rw:.5}, violations {:.3}, savings {:.4}",
                r.iteration,
                r.violation_fraction.unwrap_or(f64::NAN),
                r.cost_savings.unwrap_or(f64::NAN)
            ),
            _ => {}
        },
    )?;
    let h = Some(ctx.hash.as_str());
    save_model(&res.model, ctx.out("si_model.json"), h)?;
    save_model(&res.controller_model, ctx.out("controller_model.json"), h)?;
    res.dataset.save(ctx.out("si_dataset.json"), h)?;
    fs::write(ctx.out("si_history.csv"), si_history_csv(&res.history, &ctx.hash))?;
    Ok(res)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub best_reward: Option<f64>,
    pub best_update: Option<usize>,
    pub initial_reward: Option<f64>,
    pub env_steps: usize,
    pub aborted_updates: usize,
    pub error: Option<String>,
}

impl SeedSummary {
    /// The best evaluation beat the evaluation of the initial model.
    pub fn improved(&self) -> bool {
        matches!((self.best_reward, self.initial_reward), (Some(b), Some(i)) if b > i)
    }
}

pub const TRAIN_SUMMARY_HEADER: &str = "seed,best_reward,best_update,initial_reward,env_steps,aborted_updates,error";

pub fn train_summary_csv(rows: &[SeedSummary], config_hash: &str) -> String {
    let mut out = format!("# config_hash: {config_hash}\n{TRAIN_SUMMARY_HEADER}\n");
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.seed,
            opt(r.best_reward),
            r.best_update.map(|u| u.to_string()).unwrap_or_default(),
            opt(r.initial_reward),
            r.env_steps,
            r.aborted_updates,
            err
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub summaries: Vec<SeedSummary>,
    /// Successful runs, in seed order.
    pub runs: Vec<(u64, TrainResult)>,
    /// Seed whose best snapshot has the highest evaluation reward.
    pub best_seed: Option<u64>,
}

/// PPO refinement for every configured seed. Writes per seed
/// `curve_seed<s>.csv`, `best_model_seed<s>.json` and
/// `checkpoint_seed<s>.json`, plus `train_summary.csv` and the overall
/// `best_model.json`. A failing seed is reported in the summary and does
/// not stop the others.
pub fn cmd_train(ctx: &Context, model_path: &Path) -> Result<TrainReport> {
    let cfg = &ctx.cfg;
    let initial = ctx.controller_model(model_path)?;
    let prices = Arc::new(cfg.training_prices()?);
    let factory = |_: usize| ctx.environment(prices.clone());
    let h = Some(ctx.hash.as_str());
    let mut report = TrainReport {
        summaries: Vec::new(),
        runs: Vec::new(),
        best_seed: None,
    };
    for &seed in &cfg.train.seeds {
        let checkpoint = ctx.out(&format!("checkpoint_seed{seed}.json"));
        let output = TrainOutput {
            checkpoint: Some(&checkpoint),
            config_hash: h,
        };
        let run = factory(0).and_then(|mut eval_env| {
            train(
                &factory,
                &mut eval_env,
                EpisodeStart::Hour(cfg.train.eval_hour),
                &initial,
                &cfg.ocp,
                &cfg.ppo,
                seed,
                &output,
                |p: &CurvePoint, _| {
                    eprintln!(
                        "seed {seed} update {}: reward {:.5}, violations {:.3}, savings {:.4}",
                        p.update, p.eval_reward, p.violation_fraction, p.cost_savings
                    )
                },
            )
        });
        let run = run.and_then(|r| {
            write_curve_csv(ctx.out(&format!("curve_seed{seed}.csv")), &r.curve, h)?;
            save_model(&r.best_model, ctx.out(&format!("best_model_seed{seed}.json")), h)?;
            Ok(r)
        });
        match run {
            Ok(r) => {
                report.summaries.push(SeedSummary {
                    seed,
                    best_reward: Some(r.best_reward),
                    best_update: Some(r.best_update),
                    initial_reward: r.curve.first().map(|p| p.eval_reward),
                    env_steps: r.env_steps,
                    aborted_updates: r.aborted_updates,
                    error: None,
                });
                report.runs.push((seed, r));
            }
            Err(e) => {
                eprintln!("seed {seed}: failed: {e}");
                report.summaries.push(SeedSummary {
                    seed,
                    best_reward: None,
                    best_update: None,
                    initial_reward: None,
                    env_steps: 0,
                    aborted_updates: 0,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    fs::write(ctx.out("train_summary.csv"), train_summary_csv(&report.summaries, &ctx.hash))?;
    let best = report
        .runs
        .iter()
        .max_by(|a, b| a.1.best_reward.total_cmp(&b.1.best_reward));
    match best {
        Some((seed, r)) => {
            save_model(&r.best_model, ctx.out("best_model.json"), h)?;
            report.best_seed = Some(*seed);
            Ok(report)
        }
        None => Err(Error::Solver("every training seed failed".into())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    KoopmanSi,
    KoopmanPpo,
    /// Constant steady-state input; the reference of the cost savings.
    Steady,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::KoopmanSi => "koopman-si",
            Self::KoopmanPpo => "koopman-ppo",
            Self::Steady => "steady",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub mode: EvalMode,
    pub steps: usize,
    pub average_reward: f64,
    pub violation_fraction: f64,
    pub cost_savings: f64,
    pub total_cost: f64,
    pub steady_cost: f64,
    pub failed_solves: usize,
    pub storage_residual: f64,
    pub solve_time_min: f64,
    pub solve_time_mean: f64,
    pub solve_time_max: f64,
}

impl EvalReport {
    fn new(config_hash: &str, mode: EvalMode, ep: &Episode) -> Self {
        let m = &ep.metrics;
        let t = ep.solve_times();
        Self {
            config_hash: config_hash.to_owned(),
            mode,
            steps: m.steps,
            average_reward: m.average_reward,
            violation_fraction: m.violation_fraction,
            cost_savings: m.cost_savings,
            total_cost: m.total_cost,
            steady_cost: m.steady_cost,
            failed_solves: m.failed_solves,
            storage_residual: m.storage_residual,
            solve_time_min: t.min,
            solve_time_mean: t.mean,
            solve_time_max: t.max,
        }
    }

    /// The report without wall-clock solve times.
    pub fn deterministic(&self) -> Self {
        Self {
            solve_time_min: 0.0,
            solve_time_mean: 0.0,
            solve_time_max: 0.0,
            ..self.clone()
        }
    }
}

/// One deterministic test episode on the evaluation price series. Writes
/// `metrics_<mode>.json` and `trajectory_<mode>.csv`.
pub fn cmd_eval(ctx: &Context, model_path: Option<&Path>, mode: EvalMode) -> Result<(EvalReport, Episode)> {
    let cfg = &ctx.cfg;
    let training = cfg.training_prices()?;
    let mut env = ctx.environment(Arc::new(cfg.test_prices(&training)?))?;
    let start = match cfg.eval.start_hour {
        Some(h) => EpisodeStart::Hour(h),
        None => EpisodeStart::Seed(cfg.seed),
    };
    let ep = match mode {
        EvalMode::Steady => run_steady_episode(&mut env, start)?,
        EvalMode::KoopmanSi | EvalMode::KoopmanPpo => {
            let path = model_path.ok_or_else(|| Error::InvalidArgument(format!("{} needs --model", mode.name())))?;
            let mut ctrl = Enmpc::new(ctx.controller_model(path)?, cfg.ocp.clone(), cfg.eval.constraint_mode)?;
            run_enmpc_episode(&mut env, &mut ctrl, start)?
        }
    };
    let report = EvalReport::new(&ctx.hash, mode, &ep);
    fs::write(
        ctx.out(&format!("metrics_{}.json", mode.name())),
        serde_json::to_string_pretty(&report)?,
    )?;
    write_trajectory_csv(
        ctx.out(&format!("trajectory_{}.csv", mode.name())),
        &ep.rows,
        Some(&ctx.hash),
    )?;
    Ok((report, ep))
}
