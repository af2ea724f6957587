//! Command-line pipeline: price series, identification, policy training and
//! evaluation.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use koopman_enmpc::envsim::{gen_prices, PriceSeries};
use koopman_enmpc::Result;

pub use commands::{cmd_eval, cmd_sysid, cmd_train, Context, EvalMode, EvalReport, SeedSummary, TrainReport};
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "koopman-enmpc", version, about = "Koopman eNMPC identification, PPO training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    KoopmanSi,
    KoopmanPpo,
    Steady,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Iterative data sampling and system identification.
    Sysid(Common),
    /// PPO refinement of an identified model, one run per seed. `--seed`
    /// replaces the seed list with a single seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Deterministic test episode on the evaluation price series.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "koopman-ppo")]
        mode: ModeArg,
    },
    /// Generate or validate hourly price files.
    #[command(subcommand)]
    Prices(PricesCommand),
}

#[derive(Debug, Subcommand)]
pub enum PricesCommand {
    /// Writes `prices.csv` with the statistics of a reference series.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Reference CSV; the configured training series when omitted.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Hours to generate; the reference length when omitted.
        #[arg(long)]
        length: Option<usize>,
    },
    /// Checks that a file parses and has an hourly cadence.
    Validate { path: PathBuf },
}

fn context(common: &Common, train_seed: bool) -> Result<Context> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        if train_seed {
            cfg.train.seeds = vec![s];
        }
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    Context::new(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sysid(common) => {
            let ctx = context(&common, false)?;
            let res = cmd_sysid(&ctx)?;
            println!(
                "best iteration {} with average reward {:.6}; outputs in {}",
                res.best_iteration,
                res.best_reward,
                ctx.cfg.out.display()
            );
        }
        Command::Train { common, model } => {
            let ctx = context(&common, true)?;
            let rep = cmd_train(&ctx, &model)?;
            for s in &rep.summaries {
                match (&s.error, s.best_reward) {
                    (Some(e), _) => println!("seed {}: failed: {e}", s.seed),
                    (None, Some(b)) => println!(
                        "seed {}: best reward {b:.6} at update {} (initial {:.6})",
                        s.seed,
                        s.best_update.unwrap_or(0),
                        s.initial_reward.unwrap_or(f64::NAN)
                    ),
                    _ => {}
                }
            }
        }
        Command::Eval { common, model, mode } => {
            let ctx = context(&common, false)?;
            let mode = match mode {
                ModeArg::KoopmanSi => EvalMode::KoopmanSi,
                ModeArg::KoopmanPpo => EvalMode::KoopmanPpo,
                ModeArg::Steady => EvalMode::Steady,
            };
            let (r, _) = cmd_eval(&ctx, model.as_deref(), mode)?;
            println!(
                "{}: average reward {:.6}, violation fraction {:.4}, cost savings {:.4}, solve time min/mean/max {:.4}/{:.4}/{:.4} s",
                mode.name(),
                r.average_reward,
                r.violation_fraction,
                r.cost_savings,
                r.solve_time_min,
                r.solve_time_mean,
                r.solve_time_max
            );
        }
        Command::Prices(PricesCommand::Generate {
            common,
            reference,
            length,
        }) => {
            let ctx = context(&common, false)?;
            let reference = match reference {
                Some(p) => PriceSeries::load(p)?,
                None => ctx.cfg.training_prices()?,
            };
            let series = gen_prices(&reference, length.unwrap_or(reference.len()), ctx.cfg.seed)?;
            let path = ctx.out("prices.csv");
            series.save(&path, Some(&ctx.hash))?;
            println!(
                "wrote {} hours to {} (mean {:.3}, std {:.3}; reference mean {:.3}, std {:.3})",
                series.len(),
                path.display(),
                series.mean(),
                series.std(),
                reference.mean(),
                reference.std()
            );
        }
        Command::Prices(PricesCommand::Validate { path }) => {
            let series = PriceSeries::parse(&fs::read_to_string(&path)?)?;
            println!(
                "{}: {} hourly prices from {}, mean {:.3}, std {:.3}",
                path.display(),
                series.len(),
                series.start,
                series.mean(),
                series.std()
            );
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Command::Eval {
        model: None,
        mode: ModeArg::KoopmanSi | ModeArg::KoopmanPpo,
        ..
    } = &cli.command
    {
        let _ = Cli::command()
            .error(ErrorKind::MissingRequiredArgument, "eval needs --model unless --mode steady")
            .print();
        return EXIT_USAGE;
    }
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
