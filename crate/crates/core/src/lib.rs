//! Quality-diversity exploration of voxel soft robots: morphology metrics,
//! a planar mass-spring simulator, locomotion tasks, PPO controllers with
//! forward-pass FLOPs accounting, a MAP-Elites archive, and regression and
//! sensitivity analysis of the results.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for common use.

pub mod analysis;
pub mod controller;
pub mod error;
pub mod genome;
pub mod mapelites;
pub mod morphometrics;
pub mod physics;
pub mod scalar;
pub mod seed;
pub mod tasks;

pub use error::{Error, Result};
pub use genome::{Genome, VoxelType};
pub use scalar::Scalar;

pub type MorphoMetricsF64 = morphometrics::MorphoMetrics<f64>;
pub type MorphoMetricsF32 = morphometrics::MorphoMetrics<f32>;
pub type SimConfigF64 = physics::SimConfig<f64>;
pub type SimConfigF32 = physics::SimConfig<f32>;
pub type SoftBodyF64 = physics::SoftBody<f64>;
pub type SoftBodyF32 = physics::SoftBody<f32>;
pub type TerrainF64 = physics::Terrain<f64>;
pub type TerrainF32 = physics::Terrain<f32>;
pub type TaskEnvF64 = tasks::TaskEnv<f64>;
pub type TaskEnvF32 = tasks::TaskEnv<f32>;
pub type PolicyF64 = controller::Policy<f64>;
pub type PolicyF32 = controller::Policy<f32>;
pub type RegressionFitF64 = analysis::RegressionFit<f64>;
pub type RegressionFitF32 = analysis::RegressionFit<f32>;
