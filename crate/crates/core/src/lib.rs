//! Koopman surrogate models trained end-to-end for economic model predictive
//! control.

pub mod envsim;
pub mod episode;
pub mod error;
pub mod gradtape;
pub mod koopman;
pub mod linalg;
pub mod ocp;
pub mod optim;
pub mod rl;
pub mod scalar;
pub mod sysid;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type KoopmanModel = koopman::KoopmanModel<f64>;
pub type KoopmanModelF32 = koopman::KoopmanModel<f32>;
pub type Matrix = linalg::Matrix<f64>;
pub type ParamVector = koopman::ParamVector<f64>;
