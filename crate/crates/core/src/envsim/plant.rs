use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::ocp::Bounds;

/// A continuous-time process driven by piecewise-constant inputs.
///
/// All quantities are physical. Time is in minutes. Outputs may depend on
/// the input at the same instant.
pub trait PlantModel: Send + Sync {
    fn n_states(&self) -> usize;
    fn n_inputs(&self) -> usize;
    /// Observed quantities: I_prod [ppm], ΔT_rc [K], N_r [kmol], T_tray [K].
    fn n_obs(&self) -> usize;
    /// Outputs: electric power [MW], product flow [hours of demand per hour].
    fn n_outputs(&self) -> usize;
    /// Nominal steady state and the input that holds it.
    fn steady_state(&self) -> (Vec<f64>, Vec<f64>);
    /// State derivative per minute.
    fn rhs(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
    fn observe(&self, x: &[f64]) -> Vec<f64>;
    fn output(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
}

/// One classical Runge-Kutta step of length `h` minutes.
pub fn rk4_step(plant: &dyn PlantModel, x: &[f64], u: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let k1 = plant.rhs(x, u);
    let x2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k1[i]).collect();
    let k2 = plant.rhs(&x2, u);
    let x3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k2[i]).collect();
    let k3 = plant.rhs(&x3, u);
    let x4: Vec<f64> = (0..n).map(|i| x[i] + h * k3[i]).collect();
    let k4 = plant.rhs(&x4, u);
    (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Result of holding one input over an interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Interval {
    pub x_end: Vec<f64>,
    /// Trapezoidal time average of each output over the interval.
    pub output_mean: Vec<f64>,
}

/// Integrates over `minutes` with fixed substeps of (at most) `substep`
/// minutes and averages the outputs.
pub fn integrate(
    plant: &dyn PlantModel,
    x: &[f64],
    u: &[f64],
    minutes: f64,
    substep: f64,
) -> Result<Interval> {
    if !(minutes > 0.0 && substep > 0.0) {
        return Err(Error::InvalidArgument("integration interval and substep must be positive".into()));
    }
    let n_sub = (minutes / substep - 1e-9).ceil().max(1.0) as usize;
    let h = minutes / n_sub as f64;
    let mut xk = x.to_vec();
    let mut y_prev = plant.output(&xk, u);
    let mut acc = vec![0.0; y_prev.len()];
    for step in 0..n_sub {
        xk = rk4_step(plant, &xk, u, h);
        if !xk.iter().all(|v| v.is_finite()) {
            return Err(Error::Integrator {
                step,
                reason: "non-finite state".into(),
            });
        }
        let y = plant.output(&xk, u);
        for (a, (p, c)) in acc.iter_mut().zip(y_prev.iter().zip(&y)) {
            *a += 0.5 * (p + c) / n_sub as f64;
        }
        y_prev = y;
    }
    Ok(Interval {
        x_end: xk,
        output_mean: acc,
    })
}

/// Desk-scale stand-in for an air separation unit.
///
/// States are kept in scaled form `w ∈ ℝ⁴` (impurity, reboiler-condenser
/// temperature difference, reboiler holdup, tray temperature), inputs are
/// mapped to `v ∈ [-1, 1]⁴` through `input_bounds`. With `v = 0` the plant
/// rests at `w = (-0.2, 0.1, 0, -0.08)`. Dynamics per minute:
///
/// ```text
/// w1' = (−0.2 + 0.55 v1 + 0.25 v3 − 0.5 v4 + 0.25 v1 w3 − w1) / 20
/// w2' = ( 0.1 + 0.4 v1 − 0.4 v3 + 0.2 tanh(2 w3) − w2) / 15
/// w3' = ( 0.5 v1 − 0.6 v2 + 0.3 v4 − 0.5 w3 − 0.3 w3³) / 60
/// w4' = ( 0.3 w1 − 0.2 w2 + 0.1 v4 − w4) / 10
/// ```
///
/// Physical observations are `I_prod = 900 + 900 w1`, `ΔT_rc = 3.5 + 1.5 w2`,
/// `N_r = 6 + 4 w3`, `T_tray = 84 + 6 w4`. Outputs:
///
/// ```text
/// E     = 60 + 15 v1 + 1.5 v1² − 6 v3 + 4 v4 + 2 w2          [MW]
/// n_prod = 1 + 0.3 v1 − 0.1 v2 − 0.1 v3 + 0.05 w3            [h of demand / h]
/// ```
#[derive(Clone, Debug)]
pub struct SurrogatePlant {
    pub input_bounds: Vec<Bounds>,
}

impl Default for SurrogatePlant {
    fn default() -> Self {
        Self {
            input_bounds: crate::ocp::OcpConfig::default().input_bounds,
        }
    }
}

impl SurrogatePlant {
    pub const STEADY_STATE: [f64; 4] = [-0.2, 0.1, 0.0, -0.08];

    fn scaled_inputs(&self, u: &[f64]) -> [f64; 4] {
        std::array::from_fn(|i| self.input_bounds[i].scale(u[i]))
    }
}

impl PlantModel for SurrogatePlant {
    fn n_states(&self) -> usize {
        4
    }

    fn n_inputs(&self) -> usize {
        4
    }

    fn n_obs(&self) -> usize {
        4
    }

    fn n_outputs(&self) -> usize {
        2
    }

    fn steady_state(&self) -> (Vec<f64>, Vec<f64>) {
        (
            Self::STEADY_STATE.to_vec(),
            self.input_bounds.iter().map(Bounds::mid).collect(),
        )
    }

    fn rhs(&self, w: &[f64], u: &[f64]) -> Vec<f64> {
        let v = self.scaled_inputs(u);
        let w1s = -0.2 + 0.55 * v[0] + 0.25 * v[2] - 0.5 * v[3] + 0.25 * v[0] * w[2];
        let w2s = 0.1 + 0.4 * v[0] - 0.4 * v[2] + 0.2 * (2.0 * w[2]).tanh();
        let w4s = 0.3 * w[0] - 0.2 * w[1] + 0.1 * v[3];
        vec![
            (w1s - w[0]) / 20.0,
            (w2s - w[1]) / 15.0,
            (0.5 * v[0] - 0.6 * v[1] + 0.3 * v[3] - 0.5 * w[2] - 0.3 * w[2].powi(3)) / 60.0,
            (w4s - w[3]) / 10.0,
        ]
    }

    fn observe(&self, w: &[f64]) -> Vec<f64> {
        vec![
            900.0 + 900.0 * w[0],
            3.5 + 1.5 * w[1],
            6.0 + 4.0 * w[2],
            84.0 + 6.0 * w[3],
        ]
    }

    fn output(&self, w: &[f64], u: &[f64]) -> Vec<f64> {
        let v = self.scaled_inputs(u);
        vec![
            60.0 + 15.0 * v[0] + 1.5 * v[0] * v[0] - 6.0 * v[2] + 4.0 * v[3] + 2.0 * w[1],
            1.0 + 0.3 * v[0] - 0.1 * v[1] - 0.1 * v[2] + 0.05 * w[2],
        ]
    }
}

/// Linear time-invariant plant in scaled coordinates,
/// `w' = F w + G v` per minute and `y = D w + E v`, at rest at `w = 0`,
/// `v = 0`. A fixed-step Runge-Kutta integration of it is an exactly linear
/// sampled system.
#[derive(Clone, Debug)]
pub struct LinearPlant {
    pub f: Matrix<f64>,
    pub g: Matrix<f64>,
    pub d: Matrix<f64>,
    pub e: Matrix<f64>,
    pub input_bounds: Vec<Bounds>,
    /// Physical ranges of the observations (one per state).
    pub obs_bounds: Vec<Bounds>,
    /// Physical ranges of the outputs.
    pub output_ranges: Vec<Bounds>,
}

impl LinearPlant {
    fn scaled_inputs(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.input_bounds).map(|(x, b)| b.scale(*x)).collect()
    }
}

impl PlantModel for LinearPlant {
    fn n_states(&self) -> usize {
        self.f.rows()
    }

    fn n_inputs(&self) -> usize {
        self.g.cols()
    }

    fn n_obs(&self) -> usize {
        self.f.rows()
    }

    fn n_outputs(&self) -> usize {
        self.d.rows()
    }

    fn steady_state(&self) -> (Vec<f64>, Vec<f64>) {
        (
            vec![0.0; self.f.rows()],
            self.input_bounds.iter().map(Bounds::mid).collect(),
        )
    }

    fn rhs(&self, w: &[f64], u: &[f64]) -> Vec<f64> {
        let v = self.scaled_inputs(u);
        let mut dw = self.f.matvec_unchecked(w);
        for (a, b) in dw.iter_mut().zip(self.g.matvec_unchecked(&v)) {
            *a += b;
        }
        dw
    }

    fn observe(&self, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&self.obs_bounds).map(|(x, b)| b.unscale(*x)).collect()
    }

    fn output(&self, w: &[f64], u: &[f64]) -> Vec<f64> {
        let v = self.scaled_inputs(u);
        let mut y = self.d.matvec_unchecked(w);
        for (a, b) in y.iter_mut().zip(self.e.matvec_unchecked(&v)) {
            *a += b;
        }
        y.iter().zip(&self.output_ranges).map(|(x, b)| b.unscale(*x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_rests_at_its_steady_state() {
        let p = SurrogatePlant::default();
        let (x, u) = p.steady_state();
        assert!(p.rhs(&x, &u).iter().all(|d| d.abs() < 1e-15));
        let next = integrate(&p, &x, &u, 15.0, 1.0).unwrap();
        assert!(next.x_end.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-14));
        let obs = p.observe(&x);
        let cfg = crate::ocp::OcpConfig::default();
        for (o, b) in obs.iter().zip(&cfg.path_bounds) {
            assert!(b.lower < *o && *o < b.upper);
        }
    }

    #[test]
    fn power_output_has_direct_feedthrough() {
        let p = SurrogatePlant::default();
        let (x, mut u) = p.steady_state();
        let e0 = p.output(&x, &u)[0];
        u[0] += 1.0;
        assert!((p.output(&x, &u)[0] - e0).abs() > 0.1);
    }

    #[test]
    fn aggressive_inputs_leave_the_path_box_within_a_few_steps() {
        let p = SurrogatePlant::default();
        let (mut x, _) = p.steady_state();
        let u = [50.0, 0.0, 0.1, 0.51];
        for _ in 0..6 {
            x = integrate(&p, &x, &u, 15.0, 1.0).unwrap().x_end;
        }
        assert!(x[0] > 1.0 || x[1] > 1.0);
    }

    #[test]
    fn trajectories_stay_bounded_for_box_inputs() {
        let p = SurrogatePlant::default();
        for mask in 0..16u32 {
            let u: Vec<f64> = (0..4)
                .map(|i| {
                    let b = p.input_bounds[i];
                    if mask & (1 << i) == 0 { b.lower } else { b.upper }
                })
                .collect();
            let (mut x, _) = p.steady_state();
            for _ in 0..400 {
                x = integrate(&p, &x, &u, 15.0, 1.0).unwrap().x_end;
            }
            assert!(x.iter().all(|v| v.abs() < 3.0), "{x:?}");
        }
    }
}
