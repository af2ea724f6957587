use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envsim::{integrate, PlantModel, Sample, Scaling};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "koopman-enmpc-si-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Random,
    EnmpcRollout,
}

/// A contiguous record of scaled plant data at a fixed sampling period.
/// `x_obs` has one more entry than `u` and `y`: `y[t]` is the output at the
/// start of period `t` under input `u[t]`, and `x_obs[t + 1]` the
/// observation at its end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub source: DataSource,
    pub dt_minutes: f64,
    pub x_obs: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(source: DataSource, dt_minutes: f64, x0: Vec<f64>) -> Self {
        Self {
            source,
            dt_minutes,
            x_obs: vec![x0],
            u: Vec::new(),
            y: Vec::new(),
        }
    }

    /// Builds a trajectory from consecutive samples and the observation
    /// after the last one.
    pub fn from_samples(source: DataSource, dt_minutes: f64, samples: &[Sample], last_obs: Vec<f64>) -> Self {
        let mut x_obs: Vec<Vec<f64>> = samples.iter().map(|s| s.x_obs.clone()).collect();
        x_obs.push(last_obs);
        Self {
            source,
            dt_minutes,
            x_obs,
            u: samples.iter().map(|s| s.u.clone()).collect(),
            y: samples.iter().map(|s| s.y.clone()).collect(),
        }
    }

    pub fn push(&mut self, u: Vec<f64>, y: Vec<f64>, next_obs: Vec<f64>) {
        self.u.push(u);
        self.y.push(y);
        self.x_obs.push(next_obs);
    }

    /// Number of sampling periods.
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_obs.len() != self.u.len() + 1 || self.y.len() != self.u.len() {
            return Err(Error::InvalidArgument("trajectory lengths are inconsistent".into()));
        }
        if !(self.dt_minutes > 0.0) {
            return Err(Error::InvalidArgument("trajectory sampling period must be positive".into()));
        }
        let finite = self
            .x_obs
            .iter()
            .chain(&self.u)
            .chain(&self.y)
            .all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::NonFinite("trajectory"));
        }
        Ok(())
    }
}

/// All plant data collected for identification. Trajectories are only ever
/// appended.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SIDataset {
    pub trajectories: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    trajectories: Vec<Trajectory>,
}

impl SIDataset {
    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        traj.validate()?;
        if let Some(first) = self.trajectories.first() {
            if (first.dt_minutes - traj.dt_minutes).abs() > 1e-12 {
                return Err(Error::InvalidArgument("all trajectories must share one sampling period".into()));
            }
        }
        if !traj.is_empty() {
            self.trajectories.push(traj);
        }
        Ok(())
    }

    pub fn n_records(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn dt_minutes(&self) -> Option<f64> {
        self.trajectories.first().map(|t| t.dt_minutes)
    }

    /// Start indices `(trajectory, t)` of every window of `h` periods.
    pub fn windows(&self, h: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, tr) in self.trajectories.iter().enumerate() {
            if tr.len() >= h {
                out.extend((0..=tr.len() - h).map(|t| (i, t)));
            }
        }
        out
    }

    pub fn to_json(&self, config_hash: Option<&str>) -> Result<String> {
        let file = DatasetFile {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            config_hash: config_hash.map(str::to_owned),
            trajectories: self.trajectories.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        if file.format != DATASET_FORMAT {
            return Err(Error::InvalidArgument(format!("not a dataset archive: `{}`", file.format)));
        }
        if file.version != DATASET_VERSION {
            return Err(Error::Version {
                found: file.version,
                expected: DATASET_VERSION,
            });
        }
        let mut ds = Self::default();
        for t in file.trajectories {
            ds.push(t)?;
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>, config_hash: Option<&str>) -> Result<()> {
        fs::write(path, self.to_json(config_hash)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomSamplingConfig {
    pub n_trajectories: usize,
    /// Sampling periods per trajectory.
    pub records_per_trajectory: usize,
    pub hold_minutes: f64,
    pub sample_minutes: f64,
    pub substep_minutes: f64,
}

impl Default for RandomSamplingConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 30,
            records_per_trajectory: 288,
            hold_minutes: 30.0,
            sample_minutes: 5.0,
            substep_minutes: 1.0,
        }
    }
}

/// Random actuation from the steady state: inputs are drawn uniformly from
/// the input box and held for `hold_minutes`. A trajectory whose integration
/// fails is truncated at the last good sample and kept.
pub fn sample_random(
    plant: &dyn PlantModel,
    scaling: &Scaling,
    cfg: &RandomSamplingConfig,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if !(cfg.sample_minutes > 0.0 && cfg.hold_minutes >= cfg.sample_minutes) {
        return Err(Error::InvalidArgument("hold period must cover at least one sample".into()));
    }
    let hold = (cfg.hold_minutes / cfg.sample_minutes).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x_ss, _) = plant.steady_state();
    let n_u = plant.n_inputs();
    let mut out = Vec::with_capacity(cfg.n_trajectories);
    for _ in 0..cfg.n_trajectories {
        let mut x = x_ss.clone();
        let mut traj = Trajectory::new(DataSource::Random, cfg.sample_minutes, scaling.scale_obs(&plant.observe(&x)));
        let mut v = vec![0.0; n_u];
        for r in 0..cfg.records_per_trajectory {
            if r % hold == 0 {
                v = (0..n_u).map(|_| rng.random_range(-1.0..=1.0)).collect();
            }
            let u = scaling.unscale_input(&v);
            let y = scaling.scale_output(&plant.output(&x, &u));
            match integrate(plant, &x, &u, cfg.sample_minutes, cfg.substep_minutes) {
                Ok(iv) => {
                    x = iv.x_end;
                    traj.push(v.clone(), y, scaling.scale_obs(&plant.observe(&x)));
                }
                Err(_) => break,
            }
        }
        out.push(traj);
    }
    Ok(out)
}
