use std::time::Instant;

use super::build::{build_ocp, OcpInput};
use super::config::{ConstraintMode, OcpConfig};
use super::qp::{solve_qp, QpStatus};
use crate::error::{Error, Result};
use crate::koopman::KoopmanModel;

/// Outcome of one receding-horizon decision.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlStep {
    /// Scaled input to apply.
    pub action: Vec<f64>,
    pub status: QpStatus,
    /// Constraint handling of the solve that produced `action`.
    pub mode: ConstraintMode,
    pub iterations: usize,
    /// Wall-clock time of building and solving, in seconds.
    pub solve_seconds: f64,
    /// No solve succeeded and the previous action was held.
    pub held: bool,
}

/// Koopman eNMPC: builds and solves the OCP at every step, warm-starting
/// from the shifted previous solution. A hard-constrained problem that
/// cannot be solved is retried with slack penalties.
#[derive(Clone, Debug)]
pub struct Enmpc {
    pub model: KoopmanModel<f64>,
    pub cfg: OcpConfig,
    pub mode: ConstraintMode,
    warm: Option<(ConstraintMode, Vec<f64>)>,
    last_action: Vec<f64>,
}

impl Enmpc {
    pub fn new(model: KoopmanModel<f64>, cfg: OcpConfig, mode: ConstraintMode) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        if (model.dt_model - cfg.dt_minutes).abs() > 1e-9 * cfg.dt_minutes {
            return Err(Error::InvalidArgument(format!(
                "controller needs a {} min model, got {} min",
                cfg.dt_minutes, model.dt_model
            )));
        }
        let n_u = cfg.n_u();
        Ok(Self {
            model,
            cfg,
            mode,
            warm: None,
            last_action: vec![0.0; n_u],
        })
    }

    pub fn reset(&mut self) {
        self.warm = None;
        self.last_action = vec![0.0; self.cfg.n_u()];
    }

    fn solve(&self, input: &OcpInput, mode: ConstraintMode) -> Result<(Vec<f64>, QpStatus, usize, Vec<f64>)> {
        let ocp = build_ocp(&self.model, input, &self.cfg, mode)?;
        let warm = self.warm.as_ref().filter(|(m, _)| *m == mode).map(|(_, x)| x.as_slice());
        let sol = solve_qp(&ocp.qp, &self.cfg.solver, warm)?;
        Ok((ocp.first_input(&sol.x), sol.status, sol.iterations, ocp.shifted_guess(&sol.x)))
    }

    pub fn act(&mut self, input: &OcpInput) -> Result<ControlStep> {
        let start = Instant::now();
        let mut modes = vec![self.mode];
        if self.mode == ConstraintMode::Hard {
            modes.push(ConstraintMode::SlackPenalty);
        }
        let mut last_status = QpStatus::NumericalError;
        let mut iterations = 0;
        for mode in modes {
            let (u0, status, iters, guess) = match self.solve(input, mode) {
                Ok(r) => r,
                Err(Error::Solver(_)) => continue,
                Err(e) => return Err(e),
            };
            iterations += iters;
            last_status = status;
            if status == QpStatus::Solved {
                let action: Vec<f64> = u0.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
                self.warm = Some((mode, guess));
                self.last_action = action.clone();
                return Ok(ControlStep {
                    action,
                    status,
                    mode,
                    iterations,
                    solve_seconds: start.elapsed().as_secs_f64(),
                    held: false,
                });
            }
        }
        self.warm = None;
        Ok(ControlStep {
            action: self.last_action.clone(),
            status: last_status,
            mode: self.mode,
            iterations,
            solve_seconds: start.elapsed().as_secs_f64(),
            held: true,
        })
    }
}
