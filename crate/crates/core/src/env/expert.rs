//! Stateless scripted expert for both tasks.
//!
//! The phase is inferred from the current state, so the expert can resume
//! from arbitrary configurations (including after perturbations). Motions
//! head toward a phase waypoint, scaled so no coordinate exceeds the step
//! clip while the direction is preserved, with optional Gaussian noise.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Action, EnvState, GripperCmd, TaskKind, GRASP_RADIUS, STEP_CLIP, TARGET_RADIUS};

/// Height at which the gripper travels between table positions.
pub const LIFT_HEIGHT: f64 = 0.15;
/// Horizontal alignment tolerance before descending onto the object.
const ALIGN_TOL: f64 = 0.01;
/// Within this horizontal distance the approach descends directly onto the
/// object instead of re-aligning at travel height.
const NEAR_XY: f64 = 0.05;
/// Close once within this fraction of the grasp radius.
const CLOSE_DIST: f64 = 0.8 * GRASP_RADIUS;
/// Open once horizontally within this distance of the target.
const DROP_TOL: f64 = 0.02;
/// Push: starting offset behind the object along the push line.
const BEHIND_DIST: f64 = 0.05;
/// Vertical speed cap while descending onto or lifting off the object.
/// Deliberately larger than the grasp radius: a close command issued one
/// descend step early cannot reach the object.
const Z_APPROACH_SPEED: f64 = 0.035;

/// Direction-preserving clip: scales `v` so every coordinate magnitude is at
/// most the step limit.
pub(crate) fn toward(v: [f64; 3]) -> [f64; 3] {
    let max_c = v.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    if max_c <= STEP_CLIP {
        return v;
    }
    let s = STEP_CLIP / max_c;
    [v[0] * s, v[1] * s, v[2] * s]
}

fn to_waypoint(state: &EnvState, wp: [f64; 3]) -> [f64; 3] {
    toward([
        wp[0] - state.gripper_pos[0],
        wp[1] - state.gripper_pos[1],
        wp[2] - state.gripper_pos[2],
    ])
}

/// Like [`to_waypoint`] but with the vertical component additionally capped.
fn to_waypoint_slow_z(state: &EnvState, wp: [f64; 3]) -> [f64; 3] {
    let mut v = to_waypoint(state, wp);
    v[2] = v[2].clamp(-Z_APPROACH_SPEED, Z_APPROACH_SPEED);
    v
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn dist_xy(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Demonstration action for the current state.
pub fn scripted_expert<R: Rng>(state: &EnvState, noise_std: f64, rng: &mut R) -> Action {
    let (mut delta, cmd) = match state.task_kind {
        TaskKind::PickAndDrop => pick_phase(state),
        TaskKind::Push => push_phase(state),
    };
    if noise_std > 0.0 {
        for d in &mut delta {
            *d += noise_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Action::new(delta, cmd)
}

fn pick_phase(state: &EnvState) -> ([f64; 3], GripperCmd) {
    let g = state.gripper_pos;
    let obj = state.object_pos;
    let tgt = state.target_pos;

    if state.attached {
        // Carrying: drop when above the target, otherwise lift then travel.
        if dist_xy(g, tgt) <= DROP_TOL {
            return ([0.0, 0.0, 0.0], GripperCmd::Open);
        }
        if g[2] < LIFT_HEIGHT - ALIGN_TOL {
            return (
                to_waypoint_slow_z(state, [g[0], g[1], LIFT_HEIGHT]),
                GripperCmd::Close,
            );
        }
        return (
            to_waypoint(state, [tgt[0], tgt[1], LIFT_HEIGHT]),
            GripperCmd::Close,
        );
    }

    // Approaching: close once inside the grasp radius with margin.
    if dist3(g, obj) <= CLOSE_DIST {
        return ([0.0, 0.0, 0.0], GripperCmd::Close);
    }
    if dist_xy(g, obj) > NEAR_XY {
        // Travel above the object at lift height first.
        return (
            to_waypoint(state, [obj[0], obj[1], LIFT_HEIGHT]),
            GripperCmd::Open,
        );
    }
    // Nearly above the object: descend straight onto it, correcting the
    // remaining horizontal offset on the way down.
    (to_waypoint_slow_z(state, obj), GripperCmd::Open)
}

fn push_phase(state: &EnvState) -> ([f64; 3], GripperCmd) {
    let g = state.gripper_pos;
    let obj = state.object_pos;
    let tgt = state.target_pos;

    // Push until well inside the completion ring, not merely onto it.
    if dist_xy(obj, tgt) <= 0.8 * TARGET_RADIUS {
        return ([0.0, 0.0, 0.0], GripperCmd::Close);
    }

    // Push direction in the table plane.
    let to_target = [tgt[0] - obj[0], tgt[1] - obj[1]];
    let norm = (to_target[0] * to_target[0] + to_target[1] * to_target[1]).sqrt();
    let dir = [to_target[0] / norm, to_target[1] / norm];
    let behind = [obj[0] - BEHIND_DIST * dir[0], obj[1] - BEHIND_DIST * dir[1], 0.0];

    // In pushing position (behind the object, on the table): push through.
    let behind_xy = dist_xy(g, behind);
    let in_push_lane = behind_xy <= 1.5 * ALIGN_TOL && g[2] <= 0.01;
    let touching = dist3(g, obj) < super::CONTACT_RADIUS;
    if in_push_lane || touching {
        return (toward([dir[0] * STEP_CLIP * 2.0, dir[1] * STEP_CLIP * 2.0, -g[2]]), GripperCmd::Close);
    }
    if behind_xy > 1.5 * ALIGN_TOL {
        // Travel at lift height to a point behind the object.
        return (
            to_waypoint(state, [behind[0], behind[1], LIFT_HEIGHT]),
            GripperCmd::Close,
        );
    }
    // Aligned behind the object: descend to the table.
    (to_waypoint_slow_z(state, behind), GripperCmd::Close)
}
