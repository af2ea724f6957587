//! Iterative data sampling and system identification of the Koopman model.

pub mod dataset;
pub mod fit;
pub mod iterative;

pub use dataset::{
    sample_random, DataSource, RandomSamplingConfig, SIDataset, Trajectory, DATASET_FORMAT, DATASET_VERSION,
};
pub use fit::{
    fit_koopman, fit_koopman_from, least_squares_linear_maps, multi_step_loss, prediction_error, FitConfig,
    FitResult, PredictionError,
};
pub use iterative::{enmpc_rollout, iterative_si, PatienceTracker, SiConfig, SiIteration, SiResult};
