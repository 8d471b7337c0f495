//! Hybrid trajectory prediction for road traffic scenarios.
//!
//! The toolkit couples a compact learned scenario encoder / action decoder
//! with exact kinematic motion models (constant velocity and constant turn
//! rate & acceleration). The network predicts per-timestep *actions* (CV:
//! velocities, CTRA: acceleration and yaw rate); the motion model integrates
//! them into trajectories. Training constrains the action space to expert
//! bounds and penalises offroad trajectories; evaluation reports ADE/FDE and
//! audits physical feasibility.
//!
//! Crate layout:
//!
//! - [`scenario`] — scenario data model, neutral JSON + Argoverse v1 CSV
//!   loading, attribute derivation, synthetic data generation, ego framing
//! - [`motion`] — CV/CTRA step functions, rollouts, trajectory inversion and
//!   an independent Euler integration oracle
//! - [`raster`] — drivable-area grids, trajectory rasterization, offroad
//!   counting, and a distance-transform penalty field for training
//! - [`autodiff`] — minimal reverse-mode tape the networks are built on
//! - [`nn`] — object/map encoders, the cross-attention merger, the recurrent
//!   action decoder, and checkpointing
//! - [`objectives`] — the composite loss (MSE + action-bound + offroad) in
//!   exact reporting and differentiable training forms
//! - [`pipeline`] — single-shot and multi-step prediction, training loop,
//!   CV baseline
//! - [`eval`] — ADE/FDE, acceleration histograms, feasibility audits,
//!   report emission
//!
//! Core numerics are generic over the scalar type via [`scalar::Scalar`]:
//! f32 for training throughput, f64 for gradient checks and audits.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod motion;
pub mod nn;
pub mod objectives;
pub mod pipeline;
pub mod raster;
pub mod scalar;
pub mod scenario;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used for training (throughput over precision).
pub type TrainScalar = f32;
/// Scalar type used for gradient checks and feasibility audits.
pub type CheckScalar = f64;
