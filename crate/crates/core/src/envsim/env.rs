use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plant::{integrate, PlantModel};
use super::prices::{expand_forecast, PriceSeries};
use crate::error::{Error, Result};
use crate::ocp::{Bounds, OcpConfig, OcpInput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub beta: f64,
    /// Weights on the violations of I_prod, ΔT_rc, N_r (scaled) and N_s.
    pub violation_weights: Vec<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            beta: 5e-5,
            violation_weights: vec![1.0; 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub episode_steps: usize,
    /// Integrator step in minutes.
    pub substep_minutes: f64,
    /// Sampling period of the recorded plant data in minutes.
    pub sample_minutes: f64,
    pub forecast_hours: usize,
    /// Physical range used to scale the tray temperature observation.
    pub tray_bounds: Bounds,
    /// Draw the episode start uniformly from the price series.
    pub random_offset: bool,
    /// Initial storage in hours of demand; the storage midpoint if unset.
    pub initial_storage: Option<f64>,
    pub reward: RewardConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            episode_steps: 288,
            substep_minutes: 1.0,
            sample_minutes: 5.0,
            forecast_hours: 9,
            tray_bounds: Bounds::new(78.0, 90.0),
            random_offset: true,
            initial_storage: None,
            reward: RewardConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self, ocp: &OcpConfig) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("env config: {m}")));
        if self.episode_steps == 0 || self.forecast_hours == 0 {
            return bad("episode_steps and forecast_hours must be positive");
        }
        if !(self.substep_minutes > 0.0 && self.sample_minutes > 0.0) {
            return bad("time steps must be positive");
        }
        let per_step = ocp.dt_minutes / self.sample_minutes;
        if (per_step - per_step.round()).abs() > 1e-9 || per_step.round() < 1.0 {
            return bad("sample_minutes must divide the control step");
        }
        if !(self.reward.beta > 0.0) {
            return bad("reward beta must be positive");
        }
        if self.reward.violation_weights.len() != ocp.n_g() {
            return bad("one violation weight per constrained quantity is required");
        }
        if let Some(s) = self.initial_storage {
            if !ocp.storage_bounds.contains(s) {
                return bad("initial storage outside the storage box");
            }
        }
        Ok(())
    }
}

/// Affine maps between physical quantities and the `[-1, 1]` ranges used
/// by the model and the controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub input: Vec<Bounds>,
    pub obs: Vec<Bounds>,
    pub output: Vec<Bounds>,
}

impl Scaling {
    pub fn new(ocp: &OcpConfig, env: &EnvConfig) -> Self {
        let mut obs = ocp.path_bounds.clone();
        obs.push(env.tray_bounds);
        Self {
            input: ocp.input_bounds.clone(),
            obs,
            output: ocp.output_ranges.clone(),
        }
    }

    fn map(values: &[f64], bounds: &[Bounds], f: fn(&Bounds, f64) -> f64) -> Vec<f64> {
        values.iter().zip(bounds).map(|(v, b)| f(b, *v)).collect()
    }

    pub fn scale_input(&self, u: &[f64]) -> Vec<f64> {
        Self::map(u, &self.input, Bounds::scale)
    }

    pub fn unscale_input(&self, v: &[f64]) -> Vec<f64> {
        Self::map(v, &self.input, Bounds::unscale)
    }

    pub fn scale_obs(&self, x: &[f64]) -> Vec<f64> {
        Self::map(x, &self.obs, Bounds::scale)
    }

    pub fn scale_output(&self, y: &[f64]) -> Vec<f64> {
        Self::map(y, &self.output, Bounds::scale)
    }
}

/// `β (steady − step)` when nothing is violated, otherwise the negative
/// weighted violation sum.
pub fn compute_reward(step_cost: f64, steady_cost: f64, violations: &[f64], cfg: &RewardConfig) -> f64 {
    if violations.iter().all(|&v| v == 0.0) {
        cfg.beta * (steady_cost - step_cost)
    } else {
        -violations
            .iter()
            .zip(&cfg.violation_weights)
            .map(|(v, w)| v * w)
            .sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// Observed states scaled to `[-1, 1]` on their ranges.
    pub x_obs: Vec<f64>,
    /// Storage in hours of demand.
    pub storage: f64,
    /// Hourly prices starting with the current hour.
    pub forecast: Vec<f64>,
    pub minute_in_hour: f64,
    pub step: usize,
}

impl Observation {
    /// Flat vector `x_obs ⊕ storage ⊕ forecast`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.x_obs.clone();
        v.push(self.storage);
        v.extend_from_slice(&self.forecast);
        v
    }

    pub fn step_prices(&self, n_steps: usize, dt_minutes: f64) -> Vec<f64> {
        expand_forecast(&self.forecast, self.minute_in_hour, n_steps, dt_minutes)
    }

    pub fn ocp_input(&self, ocp: &OcpConfig) -> OcpInput {
        OcpInput {
            x_obs: self.x_obs.clone(),
            storage: self.storage,
            prices: self.step_prices(ocp.horizon, ocp.dt_minutes),
        }
    }
}

/// One recorded plant sample in scaled units: the observation at the start
/// of a sampling period, the input held over it and the output at that
/// instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x_obs: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    /// Applied input, scaled and physical.
    pub action: Vec<f64>,
    pub u_physical: Vec<f64>,
    pub clipped: bool,
    /// Step-averaged power [MW] and product flow.
    pub power: f64,
    pub production: f64,
    pub price: f64,
    pub step_cost: f64,
    pub steady_cost: f64,
    /// Violations of I_prod, ΔT_rc, N_r (scaled) and storage clipping (hours).
    pub violations: Vec<f64>,
    pub storage_clip: f64,
    pub integrator_failed: bool,
    /// Physical observation at the end of the step.
    pub obs_physical: Vec<f64>,
    pub samples: Vec<Sample>,
}

impl StepInfo {
    pub fn any_violation(&self) -> bool {
        self.violations.iter().any(|&v| v > 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Running terms of the storage balance
/// `N_s(end) − N_s(start) = Σ dt (ṅ_product − ṅ_demand) − Σ clip`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StorageLedger {
    pub initial: f64,
    pub net_flow: f64,
    pub clipped: f64,
}

impl StorageLedger {
    pub fn residual(&self, current: f64) -> f64 {
        (current - self.initial) - (self.net_flow - self.clipped)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub x: Vec<f64>,
    pub storage: f64,
    pub step: usize,
    pub offset_hours: usize,
}

pub struct Environment {
    plant: Arc<dyn PlantModel>,
    prices: Arc<PriceSeries>,
    pub ocp: OcpConfig,
    pub cfg: EnvConfig,
    state: EnvState,
    ledger: StorageLedger,
    scaling: Scaling,
    steady_power: f64,
    done: bool,
}

impl Environment {
    pub fn new(
        plant: Arc<dyn PlantModel>,
        prices: Arc<PriceSeries>,
        ocp: OcpConfig,
        cfg: EnvConfig,
    ) -> Result<Self> {
        ocp.validate()?;
        cfg.validate(&ocp)?;
        let scaling = Scaling::new(&ocp, &cfg);
        if plant.n_obs() != scaling.obs.len() || plant.n_inputs() != ocp.n_u() || plant.n_outputs() != 2 {
            return Err(Error::InvalidArgument("plant layout does not match the configuration".into()));
        }
        let needed = Self::hours_needed(&ocp, &cfg);
        if prices.len() < needed {
            return Err(Error::InvalidArgument(format!(
                "price series has {} hours, an episode needs {needed}",
                prices.len()
            )));
        }
        let (x, u) = plant.steady_state();
        let steady_power = plant.output(&x, &u)[0];
        let storage = cfg.initial_storage.unwrap_or(ocp.storage_bounds.mid());
        Ok(Self {
            plant,
            prices,
            ocp,
            cfg,
            state: EnvState {
                x,
                storage,
                step: 0,
                offset_hours: 0,
            },
            ledger: StorageLedger {
                initial: storage,
                ..Default::default()
            },
            scaling,
            steady_power,
            done: false,
        })
    }

    fn hours_needed(ocp: &OcpConfig, cfg: &EnvConfig) -> usize {
        (cfg.episode_steps as f64 * ocp.dt_minutes / 60.0).ceil() as usize + cfg.forecast_hours
    }

    pub fn plant(&self) -> &Arc<dyn PlantModel> {
        &self.plant
    }

    pub fn prices(&self) -> &Arc<PriceSeries> {
        &self.prices
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn ledger(&self) -> &StorageLedger {
        &self.ledger
    }

    pub fn steady_power(&self) -> f64 {
        self.steady_power
    }

    pub fn scaling(&self) -> &Scaling {
        &self.scaling
    }

    /// Physical input that holds the nominal steady state.
    pub fn steady_input(&self) -> Vec<f64> {
        self.plant.steady_state().1
    }

    pub fn scale_obs(&self, physical: &[f64]) -> Vec<f64> {
        self.scaling.scale_obs(physical)
    }

    pub fn scale_input(&self, physical: &[f64]) -> Vec<f64> {
        self.scaling.scale_input(physical)
    }

    pub fn unscale_input(&self, scaled: &[f64]) -> Vec<f64> {
        self.scaling.unscale_input(scaled)
    }

    pub fn scale_output(&self, physical: &[f64]) -> Vec<f64> {
        self.scaling.scale_output(physical)
    }

    /// Resets to the nominal steady state with storage at its initial level.
    /// The episode start hour is drawn from `seed` when offsets are random.
    pub fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span = self.prices.len() - Self::hours_needed(&self.ocp, &self.cfg);
        let offset = if self.cfg.random_offset {
            rng.random_range(0..=span)
        } else {
            0
        };
        self.reset_at(offset)
    }

    /// Resets with the episode starting at a fixed hour of the price series.
    pub fn reset_at(&mut self, offset_hours: usize) -> Observation {
        let span = self.prices.len() - Self::hours_needed(&self.ocp, &self.cfg);
        let storage = self.cfg.initial_storage.unwrap_or(self.ocp.storage_bounds.mid());
        self.state = EnvState {
            x: self.plant.steady_state().0,
            storage,
            step: 0,
            offset_hours: offset_hours.min(span),
        };
        self.ledger = StorageLedger {
            initial: storage,
            ..Default::default()
        };
        self.done = false;
        self.observe()
    }

    fn current_hour(&self) -> (usize, f64) {
        let minutes = self.state.step as f64 * self.ocp.dt_minutes;
        let hour = (minutes / 60.0).floor();
        (self.state.offset_hours + hour as usize, minutes - 60.0 * hour)
    }

    pub fn observe(&self) -> Observation {
        let (hour, minute) = self.current_hour();
        let phys = self.plant.observe(&self.state.x);
        Observation {
            x_obs: self.scale_obs(&phys),
            storage: self.state.storage,
            forecast: self.prices.prices[hour..hour + self.cfg.forecast_hours].to_vec(),
            minute_in_hour: minute,
            step: self.state.step,
        }
    }

    /// Applies a scaled action for one control step.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::InvalidArgument("step called on a finished episode; reset first".into()));
        }
        if action.len() != self.ocp.n_u() {
            return Err(Error::Dimension {
                context: "action",
                expected: self.ocp.n_u(),
                actual: action.len(),
            });
        }
        let clipped_action: Vec<f64> = action
            .iter()
            .map(|a| if a.is_finite() { a.clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        let clipped = clipped_action.iter().zip(action).any(|(c, a)| c != a);
        let u = self.unscale_input(&clipped_action);
        let (hour, _) = self.current_hour();
        let price = self.prices.prices[hour];
        let dt_h = self.ocp.dt_hours();
        let steady_cost = price * self.steady_power * dt_h;

        let n_chunks = (self.ocp.dt_minutes / self.cfg.sample_minutes).round() as usize;
        let mut x = self.state.x.clone();
        let mut mean = [0.0; 2];
        let mut samples = Vec::with_capacity(n_chunks);
        let mut failed = false;
        for _ in 0..n_chunks {
            let y = self.plant.output(&x, &u);
            samples.push(Sample {
                x_obs: self.scale_obs(&self.plant.observe(&x)),
                u: clipped_action.clone(),
                y: self.scale_output(&y),
            });
            match integrate(self.plant.as_ref(), &x, &u, self.cfg.sample_minutes, self.cfg.substep_minutes) {
                Ok(iv) => {
                    x = iv.x_end;
                    for (m, v) in mean.iter_mut().zip(&iv.output_mean) {
                        *m += v / n_chunks as f64;
                    }
                }
                Err(_) => {
                    failed = true;
                    break;
                }
            }
        }
        self.state.step += 1;
        let obs_physical = self.plant.observe(&x);
        let mut info = StepInfo {
            action: clipped_action,
            u_physical: u,
            clipped,
            power: mean[0],
            production: mean[1],
            price,
            step_cost: 0.0,
            steady_cost,
            violations: vec![0.0; self.ocp.n_g()],
            storage_clip: 0.0,
            integrator_failed: failed,
            obs_physical: obs_physical.clone(),
            samples,
        };
        if failed {
            self.done = true;
            let reward = -self.cfg.reward.violation_weights.iter().sum::<f64>();
            info.violations = vec![1.0; self.ocp.n_g()];
            return Ok(StepResult {
                obs: self.observe(),
                reward,
                done: true,
                info,
            });
        }
        self.state.x = x;
        let flow = dt_h * (mean[1] - self.ocp.demand_rate);
        let raw = self.state.storage + flow;
        let sb = self.ocp.storage_bounds;
        let new_storage = raw.clamp(sb.lower, sb.upper);
        let clip = raw - new_storage;
        self.ledger.net_flow += flow;
        self.ledger.clipped += clip;
        self.state.storage = new_storage;

        for (i, b) in self.ocp.path_bounds.iter().enumerate() {
            info.violations[i] = (b.scale(obs_physical[i]).abs() - 1.0).max(0.0);
        }
        info.violations[self.ocp.n_x_pred()] = clip.abs();
        info.storage_clip = clip;
        info.step_cost = price * mean[0] * dt_h;
        let reward = compute_reward(info.step_cost, steady_cost, &info.violations, &self.cfg.reward);
        self.done = self.state.step >= self.cfg.episode_steps;
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done: self.done,
            info,
        })
    }
}

/// One row of the trajectory export.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    pub u: Vec<f64>,
    pub x_obs: Vec<f64>,
    pub storage: f64,
    pub y: Vec<f64>,
    pub price: f64,
    pub reward: f64,
    pub violations: Vec<bool>,
}

impl TrajectoryRow {
    pub fn from_step(t: usize, res: &StepResult) -> Self {
        Self {
            t,
            u: res.info.u_physical.clone(),
            x_obs: res.info.obs_physical.clone(),
            storage: res.obs.storage,
            y: vec![res.info.power, res.info.production],
            price: res.info.price,
            reward: res.reward,
            violations: res.info.violations.iter().map(|&v| v > 0.0).collect(),
        }
    }
}

pub const TRAJECTORY_HEADER: &str = "t,u_f_mac,u_f_dr,u_xi_phx,u_xi_cond,x_i_prod,x_dt_rc,x_n_r,x_t_tray,n_s,y_power,y_product,price,reward,viol_i_prod,viol_dt_rc,viol_n_r,viol_n_s";

pub fn trajectory_csv(rows: &[TrajectoryRow], config_hash: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = config_hash {
        let _ = writeln!(out, "# config_hash: {h}");
    }
    let _ = writeln!(out, "{TRAJECTORY_HEADER}");
    for r in rows {
        let mut fields = vec![r.t.to_string()];
        fields.extend(r.u.iter().chain(&r.x_obs).map(|v| v.to_string()));
        fields.push(r.storage.to_string());
        fields.extend(r.y.iter().map(|v| v.to_string()));
        fields.push(r.price.to_string());
        fields.push(r.reward.to_string());
        fields.extend(r.violations.iter().map(|&b| u8::from(b).to_string()));
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

pub fn write_trajectory_csv(path: impl AsRef<Path>, rows: &[TrajectoryRow], config_hash: Option<&str>) -> Result<()> {
    std::fs::write(path, trajectory_csv(rows, config_hash))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::plant::SurrogatePlant;

    fn env(steps: usize) -> Environment {
        let prices = Arc::new(PriceSeries::synthetic_year(2023, 1));
        let cfg = EnvConfig {
            episode_steps: steps,
            ..EnvConfig::default()
        };
        Environment::new(Arc::new(SurrogatePlant::default()), prices, OcpConfig::default(), cfg).unwrap()
    }

    #[test]
    fn reset_is_deterministic_and_scaled() {
        let mut e = env(20);
        let a = e.reset(5);
        let b = e.reset(5);
        assert_eq!(a, b);
        assert!(a.x_obs.iter().all(|v| v.abs() <= 1.0));
        let h = e.state().offset_hours;
        assert_eq!(a.forecast, e.prices().prices[h..h + 9].to_vec());
        assert_eq!(a.storage, 3.0);
    }

    #[test]
    fn steady_input_gives_balanced_storage_and_zero_reward() {
        let mut e = env(8);
        e.reset(1);
        let steady = e.scale_input(&e.steady_input());
        for _ in 0..8 {
            let r = e.step(&steady).unwrap();
            assert!((r.obs.storage - 3.0).abs() < 1e-12);
            assert!(r.reward.abs() < 1e-12);
            assert!(!r.info.any_violation());
        }
        assert!(e.step(&steady).is_err());
    }

    #[test]
    fn reward_formula_cases() {
        let cfg = RewardConfig::default();
        assert_eq!(compute_reward(10.0, 10.0, &[0.0; 4], &cfg), 0.0);
        assert!((compute_reward(0.0, 2000.0, &[0.0; 4], &cfg) - 0.1).abs() < 1e-15);
        assert_eq!(compute_reward(0.0, 2000.0, &[0.26, 0.0, 0.0, 0.0], &cfg), -0.26);
    }

    #[test]
    fn ledger_identity_and_violation_sign() {
        let mut e = env(60);
        e.reset(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        loop {
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
            let r = e.step(&a).unwrap();
            if r.info.any_violation() {
                assert!(r.reward < 0.0);
            }
            assert!(e.ledger().residual(r.obs.storage).abs() <= 1e-12);
            assert_eq!(r.info.samples.len(), 3);
            if r.done {
                break;
            }
        }
    }

    #[test]
    fn trajectory_csv_has_one_row_per_step() {
        let mut e = env(4);
        e.reset(0);
        let rows: Vec<TrajectoryRow> = (0..4)
            .map(|t| TrajectoryRow::from_step(t, &e.step(&[0.1, 0.0, 0.0, 0.0]).unwrap()))
            .collect();
        let text = trajectory_csv(&rows, Some("h"));
        assert_eq!(text.lines().count(), 6);
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 18);
    }
}
