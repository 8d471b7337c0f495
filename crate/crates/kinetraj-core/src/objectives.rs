//! The composite learning objective: trajectory MSE, the action-bound count
//! penalty, and the offroad pixel penalty.
//!
//! The bound and offroad terms have exact reporting forms (integer counts,
//! zero gradient almost everywhere) and differentiable training surrogates: a
//! hinge on bound excess and the sampled distance-transform penalty. The
//! surrogates share their zero set with the exact forms, so a zero surrogate
//! certifies feasibility.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Value};
use crate::error::{Error, Result};
use crate::motion::{ActionSeries, ModelKind};
use crate::raster::{offroad_count, rasterize, PenaltyField};
use crate::scalar::Scalar;
use crate::scenario::MapGrid;

/// Expert bounds on the two action features of a motion model.
///
/// Defaults follow normal-driving envelopes: CTRA acceleration within
/// +/- 8 m/s^2 and yaw rate within +/- 0.7 rad/s; CV velocities within
/// [-30, 40] m/s longitudinally and +/- 10 m/s laterally (ego frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl BoundSpec {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Cv => Self { lower: [-30.0, -10.0], upper: [40.0, 10.0] },
            ModelKind::Ctra => Self { lower: [-8.0, -0.7], upper: [8.0, 0.7] },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..2 {
            if !(self.lower[i].is_finite() && self.upper[i].is_finite()) {
                return Err(Error::invalid_config("bounds must be finite"));
            }
            if self.lower[i] >= self.upper[i] {
                return Err(Error::invalid_config(format!(
                    "bound {} empty: [{}, {}]",
                    i, self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    /// Inclusive membership: boundary values are within bounds.
    pub fn contains(&self, action: [f64; 2]) -> bool {
        (0..2).all(|i| self.lower[i] <= action[i] && action[i] <= self.upper[i])
    }
}

/// All loss terms of one batch or scenario, exact and surrogate forms side
/// by side.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub mse: f64,
    /// Exact count of (agent, step) pairs with any feature out of bounds.
    pub delta_exact: usize,
    pub delta_surrogate: f64,
    /// Exact offroad pixel count.
    pub offroad_exact: usize,
    pub offroad_surrogate: f64,
    /// Training total: mse + delta_surrogate + offroad_surrogate.
    pub total: f64,
    pub per_agent: Vec<AgentLoss>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AgentLoss {
    pub agent: usize,
    pub mse: f64,
    pub delta_exact: usize,
}

/// Which agents the offroad penalty covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffroadScope {
    AllAgents,
    EgoOnly,
}

/// Mean over valid (agent, step) pairs of the squared Euclidean displacement.
pub fn mse_loss(
    pred: &[Vec<[f64; 2]>],
    truth: &[Vec<[f64; 2]>],
    valid: &[Vec<bool>],
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((p, t), m) in pred.iter().zip(truth).zip(valid) {
        if p.len() != t.len() || p.len() != m.len() {
            return Err(Error::dimension("mse_loss: prediction/truth/mask lengths differ"));
        }
        for ((pp, tt), &ok) in p.iter().zip(t).zip(m) {
            if ok {
                let dx = pp[0] - tt[0];
                let dy = pp[1] - tt[1];
                sum += dx * dx + dy * dy;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::empty("mse_loss: no valid steps"));
    }
    Ok(sum / count as f64)
}

/// Exact bound-violation count: one per (agent, step) with any feature
/// outside the inclusive bounds.
pub fn delta_loss_exact(actions: &[ActionSeries<f64>], bounds: &BoundSpec) -> usize {
    actions
        .iter()
        .flat_map(|series| series.steps.iter())
        .filter(|step| !bounds.contains(**step))
        .count()
}

/// Differentiable hinge surrogate; zero exactly where the exact count is
/// zero, with subgradient zero on the boundary.
pub fn delta_loss_surrogate(actions: &[ActionSeries<f64>], bounds: &BoundSpec, weight: f64) -> f64 {
    let mut sum = 0.0;
    for series in actions {
        for step in &series.steps {
            for i in 0..2 {
                sum += (step[i] - bounds.upper[i]).max(0.0) + (bounds.lower[i] - step[i]).max(0.0);
            }
        }
    }
    weight * sum
}

/// Exact offroad count over the union of the included agents' trajectories.
pub fn offroad_loss_exact(
    trajectories: &[Vec<[f64; 2]>],
    map: &MapGrid,
    scope: OffroadScope,
    ego_index: usize,
) -> Result<usize> {
    let mut points = Vec::new();
    for (agent, traj) in trajectories.iter().enumerate() {
        if scope == OffroadScope::EgoOnly && agent != ego_index {
            continue;
        }
        points.extend_from_slice(traj);
    }
    let raster = rasterize(&points, map);
    offroad_count(&raster, map)
}

/// Smooth offroad surrogate: weighted sum of sampled penalties at every
/// included trajectory point.
pub fn offroad_loss_surrogate(
    trajectories: &[Vec<[f64; 2]>],
    field: &PenaltyField,
    scope: OffroadScope,
    ego_index: usize,
    weight: f64,
) -> f64 {
    let mut sum = 0.0;
    for (agent, traj) in trajectories.iter().enumerate() {
        if scope == OffroadScope::EgoOnly && agent != ego_index {
            continue;
        }
        for p in traj {
            sum += field.sample(*p);
        }
    }
    weight * sum
}

/// Assembles the report; the training total is the weighted sum of the MSE
/// and the two surrogates (unit weights by default).
pub fn total_loss(
    mse: f64,
    delta_exact: usize,
    delta_surrogate: f64,
    offroad_exact: usize,
    offroad_surrogate: f64,
    per_agent: Vec<AgentLoss>,
) -> LossReport {
    LossReport {
        mse,
        delta_exact,
        delta_surrogate,
        offroad_exact,
        offroad_surrogate,
        total: mse + delta_surrogate + offroad_surrogate,
        per_agent,
    }
}

// ---------------------------------------------------------------------------
// Taped builders (training path)
// ---------------------------------------------------------------------------

/// MSE over valid steps, on the tape. `pred` holds scalar position nodes per
/// agent per step; `truth`/`valid` are constants.
pub fn taped_mse<T: Scalar>(
    tape: &Tape<T>,
    pred: &[Vec<[Value; 2]>],
    truth: &[Vec<[f64; 2]>],
    valid: &[Vec<bool>],
) -> Result<Value> {
    let mut terms = Vec::new();
    let mut count = 0usize;
    for ((p, t), m) in pred.iter().zip(truth).zip(valid) {
        for ((node, tt), &ok) in p.iter().zip(t).zip(m) {
            if ok {
                let dx = tape.add_scalar(node[0], T::from_f64(-tt[0]));
                let dy = tape.add_scalar(node[1], T::from_f64(-tt[1]));
                terms.push(tape.add(tape.mul(dx, dx), tape.mul(dy, dy)));
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::empty("taped_mse: no valid steps"));
    }
    let flat = tape.concat_flat(&terms);
    Ok(tape.mul_scalar(tape.sum(flat), T::from_f64(1.0 / count as f64)))
}

/// Hinge bound penalty on per-step action vector nodes (shape [2]).
pub fn taped_delta_surrogate<T: Scalar>(
    tape: &Tape<T>,
    actions: &[Vec<Value>],
    bounds: &BoundSpec,
    weight: f64,
) -> Value {
    let upper = tape.leaf(
        vec![T::from_f64(bounds.upper[0]), T::from_f64(bounds.upper[1])],
        vec![2],
    );
    let lower = tape.leaf(
        vec![T::from_f64(bounds.lower[0]), T::from_f64(bounds.lower[1])],
        vec![2],
    );
    let mut terms = Vec::new();
    for agent in actions {
        for &a in agent {
            let over = tape.relu(tape.sub(a, upper));
            let under = tape.relu(tape.sub(lower, a));
            terms.push(tape.sum(over));
            terms.push(tape.sum(under));
        }
    }
    if terms.is_empty() {
        return tape.scalar_leaf(T::zero());
    }
    let flat = tape.concat_flat(&terms);
    tape.mul_scalar(tape.sum(flat), T::from_f64(weight))
}

/// Sampled offroad penalty on taped positions.
pub fn taped_offroad_surrogate<T: Scalar>(
    tape: &Tape<T>,
    positions: &[Vec<[Value; 2]>],
    field: &PenaltyField,
    scope: OffroadScope,
    ego_index: usize,
    weight: f64,
) -> Value {
    let mut terms = Vec::new();
    for (agent, traj) in positions.iter().enumerate() {
        if scope == OffroadScope::EgoOnly && agent != ego_index {
            continue;
        }
        for p in traj {
            terms.push(field.sample_taped(tape, p[0], p[1]));
        }
    }
    if terms.is_empty() {
        return tape.scalar_leaf(T::zero());
    }
    let flat = tape.concat_flat(&terms);
    tape.mul_scalar(tape.sum(flat), T::from_f64(weight))
}
