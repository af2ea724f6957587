pub mod build;
pub mod config;
pub mod controller;
pub mod grad;
pub mod qp;

pub use build::{build_ocp, OcpInput, OcpProblem, Responses};
pub use controller::{ControlStep, Enmpc};
pub use config::{Bounds, ConstraintMode, Formulation, OcpConfig};
pub use qp::{solve_qp, KktResiduals, QpProblem, QpSettings, QpSolution, QpStatus};
pub use grad::{grad_ocp, qp_gradient, PolicyEval, QpGradient};
