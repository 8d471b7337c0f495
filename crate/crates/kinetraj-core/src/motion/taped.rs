//! Motion-model steps recorded on the autodiff tape.
//!
//! Mirrors the closed forms in the parent module so that losses computed on
//! rolled-out positions differentiate back into the action series. Branch
//! selection (closed form vs small-yaw-rate series, standstill clamp) happens
//! on forward values; each traced branch is smooth.

use crate::autodiff::{Tape, Value};
use crate::motion::{KinematicState, ModelKind, EPS_YAW_RATE};
use crate::scalar::{wrap_angle, Scalar};

/// Scalar-node view of a kinematic state.
#[derive(Debug, Clone, Copy)]
pub struct TapedState {
    pub x: Value,
    pub y: Value,
    pub yaw: Value,
    pub speed: Value,
}

/// Enters a concrete state onto the tape as constants.
pub fn taped_init<T: Scalar>(tape: &Tape<T>, state: &KinematicState<T>) -> TapedState {
    TapedState {
        x: tape.scalar_leaf(state.x),
        y: tape.scalar_leaf(state.y),
        yaw: tape.scalar_leaf(state.yaw),
        speed: tape.scalar_leaf(state.speed),
    }
}

pub fn taped_cv_step<T: Scalar>(
    tape: &Tape<T>,
    state: &TapedState,
    action: [Value; 2],
    dt: T,
) -> TapedState {
    let x = tape.add(state.x, tape.mul_scalar(action[0], dt));
    let y = tape.add(state.y, tape.mul_scalar(action[1], dt));
    TapedState { x, y, yaw: state.yaw, speed: state.speed }
}

pub fn taped_ctra_step<T: Scalar>(
    tape: &Tape<T>,
    state: &TapedState,
    action: [Value; 2],
    dt: T,
) -> TapedState {
    let (accel, yaw_rate) = (action[0], action[1]);
    let c = |x: f64| T::from_f64(x);
    let dtf = dt.to_f64();
    let theta = tape.mul_scalar(yaw_rate, dt);
    let v = state.speed;

    let (along, across) = if tape.scalar(yaw_rate).abs().to_f64() >= EPS_YAW_RATE {
        let sin_t = tape.sin(theta);
        let cos_t = tape.cos(theta);
        let s_half = tape.sin(tape.mul_scalar(theta, c(0.5)));
        let one_minus_cos = tape.mul_scalar(tape.mul(s_half, s_half), c(2.0));
        let w2 = tape.mul(yaw_rate, yaw_rate);
        let v_end = tape.add(v, tape.mul_scalar(accel, dt));
        let along = tape.sub(
            tape.div(tape.mul(v_end, sin_t), yaw_rate),
            tape.div(tape.mul(accel, one_minus_cos), w2),
        );
        let across = tape.add(
            tape.div(tape.mul(v, one_minus_cos), yaw_rate),
            tape.div(tape.mul(accel, tape.sub(sin_t, tape.mul(theta, cos_t))), w2),
        );
        (along, across)
    } else {
        // Cubic series in the yaw rate, matching the untaped branch.
        let w2 = tape.mul(yaw_rate, yaw_rate);
        let w3 = tape.mul(w2, yaw_rate);
        let along = tape.add(
            tape.mul(v, tape.add_scalar(tape.mul_scalar(w2, c(-dtf * dtf * dtf / 6.0)), dt)),
            tape.mul(
                accel,
                tape.add_scalar(
                    tape.mul_scalar(w2, c(-dtf.powi(4) / 8.0)),
                    c(dtf * dtf / 2.0),
                ),
            ),
        );
        let across = tape.add(
            tape.mul(
                v,
                tape.add(
                    tape.mul_scalar(yaw_rate, c(dtf * dtf / 2.0)),
                    tape.mul_scalar(w3, c(-dtf.powi(4) / 24.0)),
                ),
            ),
            tape.mul(
                accel,
                tape.add(
                    tape.mul_scalar(yaw_rate, c(dtf * dtf * dtf / 3.0)),
                    tape.mul_scalar(w3, c(-dtf.powi(5) / 30.0)),
                ),
            ),
        );
        (along, across)
    };

    let sin_yaw = tape.sin(state.yaw);
    let cos_yaw = tape.cos(state.yaw);
    let x = tape.add(state.x, tape.sub(tape.mul(cos_yaw, along), tape.mul(sin_yaw, across)));
    let y = tape.add(state.y, tape.add(tape.mul(sin_yaw, along), tape.mul(cos_yaw, across)));

    // Host-side wrap: shifting by the constant multiple of 2*pi keeps the
    // gradient an identity.
    let yaw_raw = tape.add(state.yaw, theta);
    let raw = tape.scalar(yaw_raw);
    let delta = wrap_angle(raw) - raw;
    let yaw = if delta == T::zero() { yaw_raw } else { tape.add_scalar(yaw_raw, delta) };

    let speed = tape.relu(tape.add(v, tape.mul_scalar(accel, dt)));
    TapedState { x, y, yaw, speed }
}

/// Sequential taped rollout; returns the position nodes after each step.
pub fn taped_rollout<T: Scalar>(
    tape: &Tape<T>,
    init: &KinematicState<T>,
    kind: ModelKind,
    actions: &[[Value; 2]],
    dt: T,
) -> (Vec<[Value; 2]>, Vec<TapedState>) {
    let mut state = taped_init(tape, init);
    let mut positions = Vec::with_capacity(actions.len());
    let mut states = Vec::with_capacity(actions.len());
    for &action in actions {
        state = match kind {
            ModelKind::Cv => taped_cv_step(tape, &state, action, dt),
            ModelKind::Ctra => taped_ctra_step(tape, &state, action, dt),
        };
        positions.push([state.x, state.y]);
        states.push(state);
    }
    (positions, states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{rollout, ActionSeries};

    fn rollout_loss(actions: &[[f64; 2]], init: &KinematicState<f64>, kind: ModelKind) -> f64 {
        let tape = Tape::new();
        let leaves: Vec<[Value; 2]> = actions
            .iter()
            .map(|a| [tape.scalar_leaf(a[0]), tape.scalar_leaf(a[1])])
            .collect();
        let (positions, _) = taped_rollout(&tape, init, kind, &leaves, 0.1);
        let mut terms = Vec::new();
        for p in &positions {
            terms.push(tape.mul(p[0], p[0]));
            terms.push(tape.mul(p[1], p[1]));
        }
        let flat = tape.concat_flat(&terms);
        tape.scalar(tape.sum(flat))
    }

    #[test]
    fn taped_matches_untaped_positions() {
        let init = KinematicState::from_pose(0.5, -1.0, 0.4, 6.0);
        let steps: Vec<[f64; 2]> = (0..12).map(|i| [0.3 - 0.02 * i as f64, 0.15]).collect();
        let plain = rollout(&init, &ActionSeries::new(ModelKind::Ctra, steps.clone()), 0.1).unwrap();
        let tape = Tape::new();
        let leaves: Vec<[Value; 2]> = steps
            .iter()
            .map(|a| [tape.scalar_leaf(a[0]), tape.scalar_leaf(a[1])])
            .collect();
        let (positions, _) = taped_rollout(&tape, &init, ModelKind::Ctra, &leaves, 0.1);
        for (p, q) in plain.positions.iter().zip(&positions) {
            assert!((p[0] - tape.scalar(q[0])).abs() < 1e-12);
            assert!((p[1] - tape.scalar(q[1])).abs() < 1e-12);
        }
    }

    /// Rollout gradients w.r.t. each action match central finite differences
    /// (h = 1e-5) to relative 1e-4.
    #[test]
    fn rollout_action_gradients_match_finite_differences() {
        for kind in [ModelKind::Cv, ModelKind::Ctra] {
            let init = KinematicState::from_pose(0.0, 0.0, 0.3, 5.0);
            let actions: Vec<[f64; 2]> = (0..8)
                .map(|i| match kind {
                    ModelKind::Cv => [4.0 - 0.1 * i as f64, 1.0 + 0.05 * i as f64],
                    ModelKind::Ctra => [1.5 - 0.2 * i as f64, 0.25],
                })
                .collect();

            let tape = Tape::new();
            let leaves: Vec<[Value; 2]> = actions
                .iter()
                .map(|a| [tape.scalar_leaf(a[0]), tape.scalar_leaf(a[1])])
                .collect();
            let (positions, _) = taped_rollout(&tape, &init, kind, &leaves, 0.1);
            let mut terms = Vec::new();
            for p in &positions {
                terms.push(tape.mul(p[0], p[0]));
                terms.push(tape.mul(p[1], p[1]));
            }
            let loss = tape.sum(tape.concat_flat(&terms));
            let grads = tape.backward(loss);

            let h = 1e-5;
            for step in 0..actions.len() {
                for feat in 0..2 {
                    let mut plus = actions.clone();
                    plus[step][feat] += h;
                    let mut minus = actions.clone();
                    minus[step][feat] -= h;
                    let fd = (rollout_loss(&plus, &init, kind) - rollout_loss(&minus, &init, kind))
                        / (2.0 * h);
                    let an = grads.of(leaves[step][feat])[0];
                    let denom = fd.abs().max(an.abs()).max(1e-8);
                    assert!(
                        (fd - an).abs() / denom < 1e-4,
                        "{kind:?} step {step} feat {feat}: analytic {an} vs fd {fd}"
                    );
                }
            }
        }
    }
}
