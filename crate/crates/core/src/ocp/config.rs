use serde::{Deserialize, Serialize};

use super::qp::QpSettings;
use crate::error::{Error, Result};

/// Closed interval `[lower, upper]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn half_range(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }

    /// Affine map of `[lower, upper]` onto `[-1, 1]`.
    pub fn scale(&self, v: f64) -> f64 {
        (v - self.mid()) / self.half_range()
    }

    pub fn unscale(&self, v: f64) -> f64 {
        self.mid() + self.half_range() * v
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    /// Distance outside the interval, zero inside.
    pub fn violation(&self, v: f64) -> f64 {
        (self.lower - v).max(v - self.upper).max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    SlackPenalty,
    Hard,
}

/// How the QP is laid out. `Condensed` eliminates states, outputs, slacks and
/// storage as affine functions of the inputs; `FullSpace` keeps them as
/// decision variables tied together by equalities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    Condensed,
    FullSpace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcpConfig {
    pub horizon: usize,
    /// Control step in minutes.
    pub dt_minutes: f64,
    /// Physical input boxes: F_mac [mol/s], F_dr [mol/s], ξ_phx, ξ_cond.
    pub input_bounds: Vec<Bounds>,
    /// Physical path boxes of the predicted states: I_prod [ppm], ΔT_rc [K], N_r [kmol].
    pub path_bounds: Vec<Bounds>,
    /// Storage box in hours of demand.
    pub storage_bounds: Bounds,
    /// Physical ranges the scaled outputs map onto: electric power [MW] and
    /// product flow [hours of demand per hour].
    pub output_ranges: Vec<Bounds>,
    pub penalty: f64,
    pub delta: f64,
    /// Product demand in hours of demand per hour.
    pub demand_rate: f64,
    pub formulation: Formulation,
    pub solver: QpSettings,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            horizon: 36,
            dt_minutes: 15.0,
            input_bounds: vec![
                Bounds::new(30.0, 50.0),
                Bounds::new(0.0, 2.0),
                Bounds::new(0.0, 0.1),
                Bounds::new(0.51, 0.54),
            ],
            path_bounds: vec![
                Bounds::new(0.0, 1800.0),
                Bounds::new(2.0, 5.0),
                Bounds::new(2.0, 10.0),
            ],
            storage_bounds: Bounds::new(0.0, 6.0),
            output_ranges: vec![Bounds::new(30.0, 90.0), Bounds::new(0.5, 1.5)],
            penalty: 1e4,
            delta: 0.2,
            demand_rate: 1.0,
            formulation: Formulation::Condensed,
            solver: QpSettings::default(),
        }
    }
}

impl OcpConfig {
    pub fn dt_hours(&self) -> f64 {
        self.dt_minutes / 60.0
    }

    pub fn n_u(&self) -> usize {
        self.input_bounds.len()
    }

    pub fn n_x_pred(&self) -> usize {
        self.path_bounds.len()
    }

    /// Number of path-constrained quantities: predicted states plus storage.
    pub fn n_g(&self) -> usize {
        self.n_x_pred() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("ocp config: {m}")));
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if !(self.dt_minutes > 0.0 && self.dt_minutes.is_finite()) {
            return bad("dt_minutes must be positive".into());
        }
        let all = self
            .input_bounds
            .iter()
            .chain(&self.path_bounds)
            .chain(&self.output_ranges)
            .chain(std::iter::once(&self.storage_bounds));
        for b in all {
            if !(b.lower.is_finite() && b.upper.is_finite() && b.lower < b.upper) {
                return bad(format!("bounds [{}, {}] must satisfy lower < upper", b.lower, b.upper));
            }
        }
        if self.output_ranges.len() != 2 {
            return bad("exactly two output channels (power, product) are required".into());
        }
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return bad("penalty must be positive".into());
        }
        if !(self.delta >= 0.0) {
            return bad("delta must be non-negative".into());
        }
        // Scaled states have a half range of one; storage is unscaled.
        if self.delta >= 1.0 || self.delta >= self.storage_bounds.half_range() {
            return bad("delta must be below half of every admissible range".into());
        }
        if !self.demand_rate.is_finite() {
            return bad("demand_rate must be finite".into());
        }
        if !(self.solver.tol > 0.0 && self.solver.max_iter > 0) {
            return bad("solver tolerance and iteration limit must be positive".into());
        }
        Ok(())
    }
}
