use super::*;
use approx::assert_relative_eq;

fn origin_pose(yaw: f64, speed: f64) -> KinematicState<f64> {
    KinematicState::from_pose(0.0, 0.0, yaw, speed)
}

#[test]
fn cv_step_uniform_motion() {
    let s = KinematicState::from_velocity(0.0, 0.0, 2.0, 0.0);
    let next = cv_step(&s, [2.0, 0.0], 0.1).unwrap();
    assert_relative_eq!(next.x, 0.2, epsilon = 1e-15);
    assert_relative_eq!(next.y, 0.0, epsilon = 1e-15);
}

#[test]
fn cv_step_zero_velocity_fixed_point() {
    let s = KinematicState::from_velocity(1.0, 1.0, 0.0, 0.0);
    let next = cv_step(&s, [0.0, 0.0], 0.1).unwrap();
    assert_eq!(next.position(), [1.0, 1.0]);
}

#[test]
fn cv_step_hand_multiplication() {
    let s = KinematicState::from_velocity(0.0, 0.0, 0.0, 0.0);
    let next = cv_step(&s, [3.0, 4.0], 0.5).unwrap();
    assert_relative_eq!(next.x, 1.5, epsilon = 1e-15);
    assert_relative_eq!(next.y, 2.0, epsilon = 1e-15);
    assert_relative_eq!(next.speed, 5.0, epsilon = 1e-15);
}

#[test]
fn ctra_step_cv_limit() {
    let s = origin_pose(0.0, 10.0);
    let next = ctra_step(&s, [0.0, 0.0], 1.0).unwrap().state;
    assert_relative_eq!(next.x, 10.0, epsilon = 1e-12);
    assert_relative_eq!(next.y, 0.0, epsilon = 1e-12);
}

#[test]
fn ctra_step_arc() {
    // Constant turn at v=10, omega=0.1: analytic arc x=R sin(theta), y=R(1-cos(theta)).
    let s = origin_pose(0.0, 10.0);
    let next = ctra_step(&s, [0.0, 0.1], 1.0).unwrap().state;
    assert_relative_eq!(next.x, 9.98334, epsilon = 1e-4);
    assert_relative_eq!(next.y, 0.49958, epsilon = 1e-4);
    assert_relative_eq!(next.yaw, 0.1, epsilon = 1e-12);
    let r = 10.0 / 0.1;
    assert_relative_eq!(next.x, r * (0.1f64).sin(), epsilon = 1e-12);
    assert_relative_eq!(next.y, r * (1.0 - (0.1f64).cos()), epsilon = 1e-12);
}

#[test]
fn ctra_step_pure_acceleration() {
    let s = origin_pose(0.0, 0.0);
    let next = ctra_step(&s, [2.0, 0.0], 1.0).unwrap().state;
    assert_relative_eq!(next.x, 1.0, epsilon = 1e-12);
    assert_relative_eq!(next.y, 0.0, epsilon = 1e-12);
    assert_relative_eq!(next.speed, 2.0, epsilon = 1e-12);
}

#[test]
fn ctra_reverse_clamp() {
    let s = origin_pose(0.0, 1.0);
    let step = ctra_step(&s, [-5.0, 0.0], 1.0).unwrap();
    assert!(step.reverse_clamped);
    assert_eq!(step.state.speed, 0.0);
}

#[test]
fn ctra_degenerates_to_cv_at_zero_yaw_rate() {
    for &(yaw, v, dt) in &[(0.3f64, 12.0, 0.1), (-2.1, 4.0, 0.5), (1.4, 0.7, 1.0)] {
        let s = KinematicState::from_pose(3.0, -2.0, yaw, v);
        let ctra = ctra_step(&s, [0.0, 0.0], dt).unwrap().state;
        let cv = cv_step(&s, [v * yaw.cos(), v * yaw.sin()], dt).unwrap();
        assert_relative_eq!(ctra.x, cv.x, epsilon = 1e-12);
        assert_relative_eq!(ctra.y, cv.y, epsilon = 1e-12);
    }
}

#[test]
fn ctra_branch_switch_is_continuous() {
    // Positions on both sides of the EPS_YAW_RATE switch agree to < 1e-9 m.
    // Representative of the 10 Hz operating regime; the true cross-branch
    // gap scales with v * dt^2 * EPS_YAW_RATE * 1e-6.
    for &(yaw, v, a, dt) in &[
        (0.0f64, 10.0, 0.0, 0.1),
        (0.7, 10.0, 3.0, 0.1),
        (-1.2, 25.0, -6.0, 0.1),
        (2.9, 3.0, 8.0, 0.5),
    ] {
        let s = KinematicState::from_pose(1.0, -4.0, yaw, v);
        for sign in [1.0, -1.0] {
            let hi = ctra_step(&s, [a, sign * EPS_YAW_RATE], dt).unwrap().state;
            let lo = ctra_step(&s, [a, sign * EPS_YAW_RATE * (1.0 - 1e-6)], dt)
                .unwrap()
                .state;
            let gap = (hi.x - lo.x).hypot(hi.y - lo.y);
            assert!(gap < 1e-9, "switch gap {gap} at yaw={yaw} v={v} a={a} dt={dt}");
        }
    }
}

#[test]
fn rollout_cv_cumulative_sum() {
    let init = KinematicState::from_velocity(0.0, 0.0, 2.0, 0.0);
    let actions = ActionSeries::new(ModelKind::Cv, vec![[2.0, 0.0]; 30]);
    let r = rollout(&init, &actions, 0.1).unwrap();
    assert_eq!(r.positions.len(), 30);
    let last = r.positions[29];
    assert_relative_eq!(last[0], 6.0, epsilon = 1e-12);
    assert_relative_eq!(last[1], 0.0, epsilon = 1e-12);
}

#[test]
fn rollout_ctra_matches_euler_oracle() {
    let init = origin_pose(0.0, 5.0);
    let actions = ActionSeries::new(ModelKind::Ctra, vec![[0.0, 0.2]; 30]);
    let r = rollout(&init, &actions, 0.1).unwrap();
    let oracle = euler_oracle(&init, &actions, 0.1, 20_000).unwrap();
    let last = r.positions[29];
    let oracle_last = oracle[29];
    let err = (last[0] - oracle_last[0]).hypot(last[1] - oracle_last[1]);
    assert!(err < 1e-3, "rollout vs oracle end-point error {err}");
}

#[test]
fn rollout_empty_actions_errors() {
    let init = origin_pose(0.0, 5.0);
    let actions = ActionSeries::<f64>::new(ModelKind::Ctra, vec![]);
    assert!(rollout(&init, &actions, 0.1).is_err());
}

#[test]
fn rollout_prefix_property() {
    let init = origin_pose(0.4, 7.0);
    let steps: Vec<[f64; 2]> = (0..20)
        .map(|i| [0.5 - 0.05 * i as f64, 0.1 + 0.01 * i as f64])
        .collect();
    let actions = ActionSeries::new(ModelKind::Ctra, steps.clone());
    let full = rollout(&init, &actions, 0.1).unwrap();
    for k in 1..=20 {
        let prefix = ActionSeries::new(ModelKind::Ctra, steps[..k].to_vec());
        let partial = rollout(&init, &prefix, 0.1).unwrap();
        assert_eq!(partial.positions, full.positions[..k].to_vec());
    }
}

#[test]
fn invert_cv_exact() {
    let init = KinematicState::from_velocity(1.0, -2.0, 1.0, 2.0);
    let actions = ActionSeries::new(ModelKind::Cv, vec![[1.0, 2.0]; 10]);
    let r = rollout(&init, &actions, 0.1).unwrap();
    let inv = invert_trajectory(&r.positions, &init, 0.1, ModelKind::Cv).unwrap();
    for step in &inv.actions.steps {
        assert_relative_eq!(step[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(step[1], 2.0, epsilon = 1e-9);
    }
}

#[test]
fn invert_ctra_arc_recovers_actions() {
    let init = origin_pose(0.3, 8.0);
    let actions = ActionSeries::new(ModelKind::Ctra, vec![[0.5, 0.1]; 30]);
    let r = rollout(&init, &actions, 0.1).unwrap();
    let inv = invert_trajectory(&r.positions, &init, 0.1, ModelKind::Ctra).unwrap();
    let mean_a: f64 = inv.actions.steps.iter().map(|s| s[0]).sum::<f64>() / 30.0;
    let mean_w: f64 = inv.actions.steps.iter().map(|s| s[1]).sum::<f64>() / 30.0;
    assert_relative_eq!(mean_a, 0.5, epsilon = 5e-2);
    assert_relative_eq!(mean_w, 0.1, epsilon = 5e-2);
}

#[test]
fn invert_empty_errors() {
    let init = origin_pose(0.0, 1.0);
    let empty: Vec<[f64; 2]> = vec![];
    assert!(invert_trajectory(&empty, &init, 0.1, ModelKind::Ctra).is_err());
}

#[test]
fn invert_standstill_sets_flag() {
    let init = origin_pose(0.0, 0.0);
    let traj = vec![[0.0, 0.0]; 5];
    let inv = invert_trajectory(&traj, &init, 0.1, ModelKind::Ctra).unwrap();
    assert!(inv.stillness);
    assert!(inv.actions.steps.iter().all(|s| s == &[0.0, 0.0]));
}

#[test]
fn euler_oracle_converges_to_closed_form() {
    let init = origin_pose(0.0, 10.0);
    let actions = ActionSeries::new(ModelKind::Ctra, vec![[0.0, 0.1]]);
    let closed = rollout(&init, &actions, 1.0).unwrap().positions[0];
    let fine = euler_oracle(&init, &actions, 1.0, 100_000).unwrap()[0];
    let err = (closed[0] - fine[0]).hypot(closed[1] - fine[1]);
    assert!(err < 1e-4, "1e5-substep oracle error {err}");
}

#[test]
fn euler_oracle_first_order_rate() {
    // Doubling substeps halves the error against the closed form.
    let init = origin_pose(0.0, 10.0);
    let actions = ActionSeries::new(ModelKind::Ctra, vec![[0.0, 0.1]]);
    let closed = rollout(&init, &actions, 1.0).unwrap().positions[0];
    let err_at = |n: usize| {
        let p = euler_oracle(&init, &actions, 1.0, n).unwrap()[0];
        (closed[0] - p[0]).hypot(closed[1] - p[1])
    };
    let mut prev = err_at(200);
    for n in [400, 800, 1600] {
        let err = err_at(n);
        let ratio = prev / err;
        assert!((ratio - 2.0).abs() < 0.2, "convergence ratio {ratio} at substeps {n}");
        prev = err;
    }
}

#[test]
fn euler_oracle_cv_exact_for_any_substeps() {
    let init = origin_pose(0.7, 4.0);
    let actions = ActionSeries::new(ModelKind::Ctra, vec![[0.0, 0.0]; 5]);
    let closed = rollout(&init, &actions, 0.1).unwrap().positions;
    for substeps in [1, 3, 17] {
        let oracle = euler_oracle(&init, &actions, 0.1, substeps).unwrap();
        for (c, o) in closed.iter().zip(&oracle) {
            assert_relative_eq!(c[0], o[0], epsilon = 1e-9);
            assert_relative_eq!(c[1], o[1], epsilon = 1e-9);
        }
    }
}

#[test]
fn non_finite_inputs_rejected() {
    let init = origin_pose(0.0, 1.0);
    assert!(cv_step(&init, [f64::NAN, 0.0], 0.1).is_err());
    assert!(ctra_step(&init, [0.0, f64::INFINITY], 0.1).is_err());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        /// Round trip: invert(rollout(A)) then rollout again reproduces the
        /// trajectory within 1e-2 m per point on noiseless kinematic tracks.
        #[test]
        fn ctra_invert_round_trip(
            yaw in -3.0f64..3.0,
            v in 0.5f64..20.0,
            a in -4.0f64..4.0,
            w in -0.6f64..0.6,
            n in 2usize..20,
        ) {
            let init = KinematicState::from_pose(0.0, 0.0, yaw, v);
            let actions = ActionSeries::new(ModelKind::Ctra, vec![[a, w]; n]);
            let traj = rollout(&init, &actions, 0.1).unwrap().positions;
            let inv = invert_trajectory(&traj, &init, 0.1, ModelKind::Ctra).unwrap();
            let re = rollout(&init, &inv.actions, 0.1).unwrap().positions;
            for (p, q) in traj.iter().zip(&re) {
                let err = (p[0] - q[0]).hypot(p[1] - q[1]);
                prop_assert!(err < 1e-2, "round-trip error {err}");
            }
        }

        /// The closed-form step stays within oracle tolerance across the
        /// operating envelope.
        #[test]
        fn ctra_step_matches_oracle(
            yaw in -3.1f64..3.1,
            v in 0.0f64..25.0,
            a in -8.0f64..8.0,
            w in -0.7f64..0.7,
        ) {
            let init = KinematicState::from_pose(0.0, 0.0, yaw, v);
            let actions = ActionSeries::new(ModelKind::Ctra, vec![[a, w]]);
            let closed = rollout(&init, &actions, 0.1).unwrap().positions[0];
            let fine = euler_oracle(&init, &actions, 0.1, 20_000).unwrap()[0];
            let err = (closed[0] - fine[0]).hypot(closed[1] - fine[1]);
            prop_assert!(err < 1e-4, "closed vs oracle {err}");
        }
    }
}
