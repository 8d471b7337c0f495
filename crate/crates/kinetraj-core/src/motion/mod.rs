//! Kinematic motion models: constant velocity (CV) and constant turn rate &
//! acceleration (CTRA).
//!
//! The models are parameter-free integrators. Given a per-timestep action
//! series — CV: (vx, vy), CTRA: (acceleration, yaw rate) — they advance a
//! [`KinematicState`] step by step and produce the trajectory. The inverse
//! mapping recovers the implied actions of an arbitrary trajectory, which is
//! what the feasibility audit runs on. [`euler_oracle`] is an independent
//! fine-step integrator used to verify the closed forms.

pub mod taped;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{wrap_angle, Scalar};

/// Below this |yaw rate| (rad/s) the CTRA closed form switches to a series
/// expansion; the 1/omega^2 terms are numerically unstable there.
pub const EPS_YAW_RATE: f64 = 1e-4;

/// Displacements below this (meters) count as standing still; headings are
/// carried forward instead of re-estimated.
pub const EPS_STILL: f64 = 1e-3;

/// Which motion model interprets an action series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cv,
    Ctra,
}

impl ModelKind {
    pub fn feature_names(self) -> [&'static str; 2] {
        match self {
            ModelKind::Cv => ["vx", "vy"],
            ModelKind::Ctra => ["accel", "yaw_rate"],
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Cv => write!(f, "cv"),
            ModelKind::Ctra => write!(f, "ctra"),
        }
    }
}

/// Pose and velocity of one traffic participant at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState<T: Scalar> {
    pub x: T,
    pub y: T,
    /// Heading, wrapped to (-pi, pi].
    pub yaw: T,
    /// Signed speed along the heading (CTRA integrates this).
    pub speed: T,
    pub vx: T,
    pub vy: T,
}

impl<T: Scalar> KinematicState<T> {
    /// State from a pose and scalar speed; velocity components follow the heading.
    pub fn from_pose(x: T, y: T, yaw: T, speed: T) -> Self {
        let yaw = wrap_angle(yaw);
        Self { x, y, yaw, speed, vx: speed * yaw.cos(), vy: speed * yaw.sin() }
    }

    /// State from a position and velocity vector; heading from the velocity
    /// direction when moving, 0 otherwise.
    pub fn from_velocity(x: T, y: T, vx: T, vy: T) -> Self {
        let speed = (vx * vx + vy * vy).sqrt();
        let yaw = if speed.to_f64() > EPS_STILL { vy.atan2(vx) } else { T::zero() };
        Self { x, y, yaw, speed, vx, vy }
    }

    pub fn position(&self) -> [T; 2] {
        [self.x, self.y]
    }

    fn ensure_finite(&self, context: &str) -> Result<()> {
        let ok = self.x.is_finite()
            && self.y.is_finite()
            && self.yaw.is_finite()
            && self.speed.is_finite()
            && self.vx.is_finite()
            && self.vy.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite { context: context.to_string() })
        }
    }
}

/// Per-timestep motion-model inputs for one agent.
///
/// CV: (vx, vy) in m/s. CTRA: (acceleration m/s^2, yaw rate rad/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSeries<T: Scalar> {
    pub kind: ModelKind,
    pub steps: Vec<[T; 2]>,
}

impl<T: Scalar> ActionSeries<T> {
    pub fn new(kind: ModelKind, steps: Vec<[T; 2]>) -> Self {
        Self { kind, steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// One CV step: integrate the commanded velocity for `dt`.
///
/// The stored velocity is replaced by the commanded one; heading follows the
/// velocity direction when moving (CV itself has no yaw dynamics).
pub fn cv_step<T: Scalar>(state: &KinematicState<T>, action: [T; 2], dt: T) -> Result<KinematicState<T>> {
    state.ensure_finite("cv_step state")?;
    if !(action[0].is_finite() && action[1].is_finite() && dt.is_finite()) {
        return Err(Error::NonFinite { context: "cv_step action".to_string() });
    }
    let [vx, vy] = action;
    let speed = (vx * vx + vy * vy).sqrt();
    let yaw = if speed.to_f64() > EPS_STILL { vy.atan2(vx) } else { state.yaw };
    Ok(KinematicState {
        x: state.x + vx * dt,
        y: state.y + vy * dt,
        yaw,
        speed,
        vx,
        vy,
    })
}

/// Outcome of one CTRA step.
#[derive(Debug, Clone, Copy)]
pub struct CtraStep<T: Scalar> {
    pub state: KinematicState<T>,
    /// Speed integrated below zero and was clamped to standstill.
    pub reverse_clamped: bool,
}

/// One CTRA step: integrate constant acceleration and yaw rate for `dt`.
///
/// Displacement in the body frame of the starting pose:
///
/// ```text
/// along   = integral of (v + a*tau) cos(omega*tau) dtau over [0, dt]
/// across  = integral of (v + a*tau) sin(omega*tau) dtau over [0, dt]
/// ```
///
/// evaluated in closed form for |omega| >= EPS_YAW_RATE (written via
/// 2*sin^2(theta/2) and (sin theta - theta cos theta) to avoid catastrophic
/// cancellation near the threshold) and as a cubic series in omega below it,
/// so the two branches agree to well under 1e-9 m at the switch. Speed may
/// integrate through zero; the carried speed is clamped at standstill and the
/// event reported.
pub fn ctra_step<T: Scalar>(state: &KinematicState<T>, action: [T; 2], dt: T) -> Result<CtraStep<T>> {
    state.ensure_finite("ctra_step state")?;
    if !(action[0].is_finite() && action[1].is_finite() && dt.is_finite()) {
        return Err(Error::NonFinite { context: "ctra_step action".to_string() });
    }
    let [accel, yaw_rate] = action;
    let v = state.speed;
    let theta = yaw_rate * dt;

    let (along, across) = if yaw_rate.abs().to_f64() >= EPS_YAW_RATE {
        let sin_t = theta.sin();
        let half = T::from_f64(0.5);
        let s_half = (theta * half).sin();
        let one_minus_cos = (T::one() + T::one()) * s_half * s_half;
        let cos_t = theta.cos();
        let w = yaw_rate;
        let along = (v + accel * dt) * sin_t / w - accel * one_minus_cos / (w * w);
        let across = v * one_minus_cos / w + accel * (sin_t - theta * cos_t) / (w * w);
        (along, across)
    } else {
        // Cubic series in omega; truncation error O(omega^4 v dt^5) is far
        // below the 1e-9 continuity band at the branch switch.
        let w = yaw_rate;
        let dt2 = dt * dt;
        let dt3 = dt2 * dt;
        let c = |x: f64| T::from_f64(x);
        let along = v * (dt - w * w * dt3 / c(6.0)) + accel * (dt2 / c(2.0) - w * w * dt2 * dt2 / c(8.0));
        let across = v * (w * dt2 / c(2.0) - w * w * w * dt2 * dt2 / c(24.0))
            + accel * (w * dt3 / c(3.0) - w * w * w * dt3 * dt2 / c(30.0));
        (along, across)
    };

    let (sin_yaw, cos_yaw) = (state.yaw.sin(), state.yaw.cos());
    let x = state.x + cos_yaw * along - sin_yaw * across;
    let y = state.y + sin_yaw * along + cos_yaw * across;
    let yaw = wrap_angle(state.yaw + theta);
    let v_raw = v + accel * dt;
    let (speed, reverse_clamped) = if v_raw < T::zero() { (T::zero(), true) } else { (v_raw, false) };
    let state = KinematicState {
        x,
        y,
        yaw,
        speed,
        vx: speed * yaw.cos(),
        vy: speed * yaw.sin(),
    };
    Ok(CtraStep { state, reverse_clamped })
}

/// Trajectory produced by a rollout, one point per action.
#[derive(Debug, Clone)]
pub struct Rollout<T: Scalar> {
    /// Position after each step.
    pub positions: Vec<[T; 2]>,
    /// Full state after each step.
    pub states: Vec<KinematicState<T>>,
    /// Number of CTRA steps where speed was clamped at standstill.
    pub reverse_clamps: usize,
}

impl<T: Scalar> Rollout<T> {
    pub fn final_state(&self) -> &KinematicState<T> {
        self.states.last().expect("rollout is never empty")
    }
}

/// Applies the per-step model sequentially over the whole action series.
pub fn rollout<T: Scalar>(
    init: &KinematicState<T>,
    actions: &ActionSeries<T>,
    dt: T,
) -> Result<Rollout<T>> {
    if actions.is_empty() {
        return Err(Error::empty("rollout of empty action series"));
    }
    let mut positions = Vec::with_capacity(actions.len());
    let mut states = Vec::with_capacity(actions.len());
    let mut state = *init;
    let mut reverse_clamps = 0;
    for &action in &actions.steps {
        state = match actions.kind {
            ModelKind::Cv => cv_step(&state, action, dt)?,
            ModelKind::Ctra => {
                let step = ctra_step(&state, action, dt)?;
                if step.reverse_clamped {
                    reverse_clamps += 1;
                }
                step.state
            }
        };
        positions.push([state.x, state.y]);
        states.push(state);
    }
    Ok(Rollout { positions, states, reverse_clamps })
}

/// Result of recovering implied actions from a trajectory.
#[derive(Debug, Clone)]
pub struct Inversion<T: Scalar> {
    pub actions: ActionSeries<T>,
    /// Whole trajectory was a standstill (CTRA yaw estimation degenerate).
    pub stillness: bool,
    /// Largest per-step position residual (m) left by the solver.
    pub max_residual: f64,
}

/// Recovers the action series that reproduces `trajectory` from `init`.
///
/// CV actions are exact per-step displacements over dt. CTRA actions are
/// solved per step with a damped Newton iteration on the closed form; the
/// state is advanced with the solved actions so residuals do not accumulate.
/// A standstill trajectory maps to all-zero actions with a stillness flag.
pub fn invert_trajectory<T: Scalar>(
    trajectory: &[[T; 2]],
    init: &KinematicState<T>,
    dt: T,
    kind: ModelKind,
) -> Result<Inversion<T>> {
    if trajectory.is_empty() {
        return Err(Error::empty("invert_trajectory needs at least one point"));
    }
    match kind {
        ModelKind::Cv => {
            let mut steps = Vec::with_capacity(trajectory.len());
            let mut prev = [init.x, init.y];
            for p in trajectory {
                steps.push([(p[0] - prev[0]) / dt, (p[1] - prev[1]) / dt]);
                prev = *p;
            }
            Ok(Inversion {
                actions: ActionSeries::new(ModelKind::Cv, steps),
                stillness: false,
                max_residual: 0.0,
            })
        }
        ModelKind::Ctra => invert_ctra(trajectory, init, dt),
    }
}

fn invert_ctra<T: Scalar>(
    trajectory: &[[T; 2]],
    init: &KinematicState<T>,
    dt: T,
) -> Result<Inversion<T>> {
    let dt = dt.to_f64();
    let mut state = KinematicState::<f64> {
        x: init.x.to_f64(),
        y: init.y.to_f64(),
        yaw: init.yaw.to_f64(),
        speed: init.speed.to_f64(),
        vx: init.vx.to_f64(),
        vy: init.vy.to_f64(),
    };
    let all_still = init.speed.to_f64().abs() < EPS_STILL
        && trajectory.iter().all(|p| {
            let dx = p[0].to_f64() - state.x;
            let dy = p[1].to_f64() - state.y;
            dx.hypot(dy) < EPS_STILL
        });
    if all_still {
        let steps = vec![[T::zero(), T::zero()]; trajectory.len()];
        return Ok(Inversion {
            actions: ActionSeries::new(ModelKind::Ctra, steps),
            stillness: true,
            max_residual: 0.0,
        });
    }

    let mut steps = Vec::with_capacity(trajectory.len());
    let mut max_residual = 0.0f64;
    for p in trajectory {
        let target = [p[0].to_f64(), p[1].to_f64()];
        let dx = target[0] - state.x;
        let dy = target[1] - state.y;
        let action = if dx.hypot(dy) < EPS_STILL && state.speed.abs() < EPS_STILL {
            [0.0, 0.0]
        } else {
            let (a, w, res) = solve_ctra_action(&state, target, dt);
            max_residual = max_residual.max(res);
            [a, w]
        };
        state = ctra_step(&state, action, dt)?.state;
        steps.push([T::from_f64(action[0]), T::from_f64(action[1])]);
    }
    Ok(Inversion {
        actions: ActionSeries::new(ModelKind::Ctra, steps),
        stillness: false,
        max_residual,
    })
}

/// Newton solve for the (accel, yaw rate) pair whose single CTRA step from
/// `state` lands on `target`. Returns the best action found and its residual.
fn solve_ctra_action(state: &KinematicState<f64>, target: [f64; 2], dt: f64) -> (f64, f64, f64) {
    // Initial guess from chord geometry: the chord of a constant-turn step
    // deviates from the starting heading by about half the heading change.
    let dx = target[0] - state.x;
    let dy = target[1] - state.y;
    let (s, c) = state.yaw.sin_cos();
    let along = c * dx + s * dy;
    let across = -s * dx + c * dy;
    let chord = along.hypot(across);
    let mut a = 2.0 * (chord / dt - state.speed) / dt;
    let mut w = 2.0 * across.atan2(along) / dt;

    let residual = |a: f64, w: f64| -> [f64; 2] {
        let next = ctra_step(state, [a, w], dt).expect("finite inversion step").state;
        [next.x - target[0], next.y - target[1]]
    };

    let mut best = (a, w, {
        let r = residual(a, w);
        r[0].hypot(r[1])
    });
    for _ in 0..40 {
        let r = residual(a, w);
        let norm = r[0].hypot(r[1]);
        if norm < best.2 {
            best = (a, w, norm);
        }
        if norm < 1e-12 {
            break;
        }
        // Central-difference Jacobian; the closed form is smooth in (a, w).
        let ha = 1e-6 * (1.0 + a.abs());
        let hw = 1e-7 * (1.0 + w.abs());
        let ra_p = residual(a + ha, w);
        let ra_m = residual(a - ha, w);
        let rw_p = residual(a, w + hw);
        let rw_m = residual(a, w - hw);
        let j00 = (ra_p[0] - ra_m[0]) / (2.0 * ha);
        let j10 = (ra_p[1] - ra_m[1]) / (2.0 * ha);
        let j01 = (rw_p[0] - rw_m[0]) / (2.0 * hw);
        let j11 = (rw_p[1] - rw_m[1]) / (2.0 * hw);
        let det = j00 * j11 - j01 * j10;
        if det.abs() < 1e-14 || !det.is_finite() {
            break;
        }
        let da = (r[0] * j11 - r[1] * j01) / det;
        let dw = (j00 * r[1] - j10 * r[0]) / det;
        a -= da;
        w -= dw;
        if !(a.is_finite() && w.is_finite()) {
            return best;
        }
    }
    let r = residual(a, w);
    let norm = r[0].hypot(r[1]);
    if norm < best.2 {
        best = (a, w, norm);
    }
    best
}

/// Explicit first-order integration of the CTRA ordinary differential
/// equations at dt/substeps, used as an independent oracle for the closed
/// forms. For CV actions every substep is exact.
pub fn euler_oracle<T: Scalar>(
    init: &KinematicState<T>,
    actions: &ActionSeries<T>,
    dt: T,
    substeps: usize,
) -> Result<Vec<[T; 2]>> {
    if substeps == 0 {
        return Err(Error::invalid_config("euler_oracle requires substeps >= 1"));
    }
    if actions.is_empty() {
        return Err(Error::empty("euler_oracle of empty action series"));
    }
    init.ensure_finite("euler_oracle init")?;
    let h = dt.to_f64() / substeps as f64;
    let mut x = init.x.to_f64();
    let mut y = init.y.to_f64();
    let mut yaw = init.yaw.to_f64();
    let mut v = init.speed.to_f64();
    let mut out = Vec::with_capacity(actions.len());
    for &action in &actions.steps {
        match actions.kind {
            ModelKind::Cv => {
                let (ax, ay) = (action[0].to_f64(), action[1].to_f64());
                for _ in 0..substeps {
                    x += ax * h;
                    y += ay * h;
                }
            }
            ModelKind::Ctra => {
                let (a, w) = (action[0].to_f64(), action[1].to_f64());
                for _ in 0..substeps {
                    let (sy, cy) = yaw.sin_cos();
                    x += v * cy * h;
                    y += v * sy * h;
                    v += a * h;
                    yaw += w * h;
                }
                // Mirror the per-step carry semantics of `rollout`.
                if v < 0.0 {
                    v = 0.0;
                }
                yaw = wrap_angle(yaw);
            }
        }
        out.push([T::from_f64(x), T::from_f64(y)]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
