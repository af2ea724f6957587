use std::fs;
use std::path::{Path, PathBuf};

use koopman_enmpc::envsim::{gen_prices, EnvConfig, PriceSeries};
use koopman_enmpc::koopman::KoopmanDims;
use koopman_enmpc::ocp::{ConstraintMode, OcpConfig};
use koopman_enmpc::rl::PpoConfig;
use koopman_enmpc::sysid::SiConfig;
use koopman_enmpc::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriceConfig {
    /// Hourly price CSV used for identification and training. A synthetic
    /// year is generated when unset.
    pub path: Option<PathBuf>,
    pub synthetic_year: i32,
    pub synthetic_seed: u64,
    /// Seed of the evaluation series generated from the training series.
    pub test_seed: u64,
}

impl Default for PriceConfig {
    fn default() -> Self {
        Self {
            path: None,
            synthetic_year: 2023,
            synthetic_seed: 1,
            test_seed: 1001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    /// One training run per seed.
    pub seeds: Vec<u64>,
    /// Start hour of the evaluation rollout in the training series.
    pub eval_hour: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            eval_hour: 4000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Start hour of the test episode in the evaluation series; drawn from
    /// the seed when unset.
    pub start_hour: Option<usize>,
    pub constraint_mode: ConstraintMode,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            start_hour: None,
            constraint_mode: ConstraintMode::SlackPenalty,
        }
    }
}

/// Everything a command needs. Relative paths are resolved against the
/// directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub prices: PriceConfig,
    pub model: KoopmanDims,
    pub ocp: OcpConfig,
    pub env: EnvConfig,
    pub sysid: SiConfig,
    pub ppo: PpoConfig,
    pub train: TrainSettings,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            prices: PriceConfig::default(),
            model: KoopmanDims::default(),
            ocp: OcpConfig {
                horizon: 8,
                ..OcpConfig::default()
            },
            env: EnvConfig::default(),
            sysid: SiConfig::default(),
            ppo: PpoConfig {
                total_steps: 53_248,
                ..PpoConfig::default()
            },
            train: TrainSettings::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::parse(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        if let Some(p) = cfg.prices.path.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.ocp.validate()?;
        self.env.validate(&self.ocp)?;
        self.sysid.validate()?;
        self.ppo.validate()?;
        if self.model.n_u != self.ocp.n_u() || self.model.n_x_pred != self.ocp.n_x_pred() {
            return Err(Error::InvalidArgument("model dims do not match the ocp config".into()));
        }
        if self.ppo.action_std.len() != self.ocp.n_u() {
            return Err(Error::InvalidArgument("ppo.action_std needs one entry per input".into()));
        }
        if self.train.seeds.is_empty() {
            return Err(Error::InvalidArgument("train.seeds must not be empty".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization with the output directory
    /// left out, in hex.
    pub fn hash(&self) -> Result<String> {
        let canonical = Self {
            out: PathBuf::new(),
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn training_prices(&self) -> Result<PriceSeries> {
        match &self.prices.path {
            Some(p) => PriceSeries::load(p),
            None => Ok(PriceSeries::synthetic_year(
                self.prices.synthetic_year,
                self.prices.synthetic_seed,
            )),
        }
    }

    /// A series of the same length with the training statistics, distinct
    /// from the training series.
    pub fn test_prices(&self, training: &PriceSeries) -> Result<PriceSeries> {
        gen_prices(training, training.len(), self.prices.test_seed)
    }
}
