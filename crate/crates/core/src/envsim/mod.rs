//! Plant simulation environment: plant interface, surrogate plant, prices,
//! storage balance and reward.

pub mod env;
pub mod plant;
pub mod prices;

pub use env::{
    compute_reward, trajectory_csv, write_trajectory_csv, EnvConfig, EnvState, Environment, Observation,
    RewardConfig, Sample, Scaling, StepInfo, StepResult, StorageLedger, TrajectoryRow,
};
pub use plant::{integrate, rk4_step, LinearPlant, PlantModel, SurrogatePlant};
pub use prices::{expand_forecast, gen_prices, PriceSeries};
