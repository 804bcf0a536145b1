//! Deterministic desk-scale tabletop environment.
//!
//! A fully observable MDP standing in for the robot workspace: the state is
//! the gripper and object pose, actions are clipped Euclidean translations
//! of the gripper plus a binary gripper command, and observations are
//! synthetic top-down Gaussian-blob images with two appended scalars.

mod dataset;
mod expert;

pub use dataset::{
    collect_demos, collect_explore, shift_actions, CollectionKind, Dataset, DatasetMeta,
    TrajStep, Trajectory,
};
pub use expert::scripted_expert;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Side length of the square observation grid.
pub const IMAGE_GRID: usize = 16;
/// Blob standard deviation in table units.
pub const PIXEL_SIGMA: f64 = 1.5 / IMAGE_GRID as f64;
/// Per-coordinate action magnitude limit.
pub const STEP_CLIP: f64 = 0.05;
/// Close commands within this gripper-to-object distance attach the object.
pub const GRASP_RADIUS: f64 = 0.03;
/// Push task: object inherits the gripper displacement within this distance.
pub const CONTACT_RADIUS: f64 = 0.04;
/// Completion radius around the target in the table plane.
pub const TARGET_RADIUS: f64 = 0.05;
/// Hard per-episode step cap for collection and evaluation.
pub const EPISODE_CAP: usize = 200;
/// Fixed target position.
pub const TARGET_POS: [f64; 3] = [0.75, 0.5, 0.0];
/// Gripper pose after reset.
pub const GRIPPER_START: [f64; 3] = [0.25, 0.5, 0.3];
/// Workspace bounds: x and y in [0,1], z in [0, Z_MAX].
pub const Z_MAX: f64 = 0.5;

/// Observation length: three stacked K x K channels plus two scalars.
pub const fn observation_len() -> usize {
    3 * IMAGE_GRID * IMAGE_GRID + 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PickAndDrop,
    Push,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCmd {
    Open,
    Close,
}

/// Ground-truth simulator state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub gripper_pos: [f64; 3],
    pub object_pos: [f64; 3],
    pub target_pos: [f64; 3],
    pub attached: bool,
    pub gripper_closed: bool,
    pub task_kind: TaskKind,
}

/// A gripper translation plus gripper command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub delta: [f64; 3],
    pub gripper_cmd: GripperCmd,
}

impl Action {
    pub fn new(delta: [f64; 3], gripper_cmd: GripperCmd) -> Self {
        Self { delta, gripper_cmd }
    }
}

/// Rendered observation: flattened channels plus `[z, gripper_closed]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The gripper-closed scalar appended at the end of the vector.
    pub fn gripper_closed(&self) -> bool {
        *self.0.last().expect("observation is non-empty") > 0.5
    }

    /// The gripper height scalar.
    pub fn gripper_height(&self) -> f64 {
        self.0[self.0.len() - 2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessFlags {
    /// The object is currently attached (pick) or in contact (push); episode
    /// runners accumulate this flag across steps to report "ever grasped".
    pub grasped: bool,
    pub completed: bool,
}

pub fn clamp_to_workspace(p: [f64; 3]) -> [f64; 3] {
    [
        p[0].clamp(0.0, 1.0),
        p[1].clamp(0.0, 1.0),
        p[2].clamp(0.0, Z_MAX),
    ]
}

/// Per-coordinate clamp of an action delta to the step limit.
pub fn clip_delta(delta: [f64; 3]) -> [f64; 3] {
    [
        delta[0].clamp(-STEP_CLIP, STEP_CLIP),
        delta[1].clamp(-STEP_CLIP, STEP_CLIP),
        delta[2].clamp(-STEP_CLIP, STEP_CLIP),
    ]
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn dist_xy(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Samples a fresh episode: the object lands uniformly in the left half of
/// the table, the target is fixed, the gripper starts raised at mid-left.
pub fn reset<R: Rng>(rng: &mut R, task_kind: TaskKind) -> EnvState {
    let object_pos = [
        rng.gen_range(0.05..=0.45),
        rng.gen_range(0.1..=0.9),
        0.0,
    ];
    EnvState {
        gripper_pos: GRIPPER_START,
        object_pos,
        target_pos: TARGET_POS,
        attached: false,
        gripper_closed: matches!(task_kind, TaskKind::Push),
        task_kind,
    }
}

/// Applies one action: clip the delta, move the gripper, clamp to the
/// workspace, then resolve attachment (pick) or sticky contact (push).
pub fn step(state: &EnvState, action: &Action) -> Result<EnvState> {
    if action.delta.iter().any(|d| !d.is_finite()) {
        return Err(CoreError::Input(format!(
            "step: non-finite action delta {:?}",
            action.delta
        )));
    }
    let delta = clip_delta(action.delta);
    let mut next = *state;
    next.gripper_pos = clamp_to_workspace([
        state.gripper_pos[0] + delta[0],
        state.gripper_pos[1] + delta[1],
        state.gripper_pos[2] + delta[2],
    ]);

    match state.task_kind {
        TaskKind::PickAndDrop => {
            if next.attached {
                next.object_pos = next.gripper_pos;
            }
            match action.gripper_cmd {
                GripperCmd::Close => {
                    next.gripper_closed = true;
                    if !next.attached && dist3(next.gripper_pos, next.object_pos) <= GRASP_RADIUS {
                        next.attached = true;
                        next.object_pos = next.gripper_pos;
                    }
                }
                GripperCmd::Open => {
                    next.gripper_closed = false;
                    if next.attached {
                        next.attached = false;
                        next.object_pos = [next.object_pos[0], next.object_pos[1], 0.0];
                    }
                }
            }
        }
        TaskKind::Push => {
            next.gripper_closed = true;
            if dist3(next.gripper_pos, next.object_pos) < CONTACT_RADIUS {
                next.object_pos = clamp_to_workspace([
                    next.object_pos[0] + delta[0],
                    next.object_pos[1] + delta[1],
                    next.object_pos[2] + delta[2],
                ]);
            }
        }
    }
    Ok(next)
}

/// Renders the top-down blob image plus the `[height, closed]` extras.
///
/// Channel order: gripper, manipulated object, target. Pixel `(i, j)` of a
/// channel centred at `(cx, cy)` reads
/// `exp(-((cx-x)^2 + (cy-y)^2) / (2 sigma^2))`.
pub fn render(state: &EnvState) -> Observation {
    let k = IMAGE_GRID;
    let mut data = Vec::with_capacity(observation_len());
    let centers: [[f64; 3]; 3] = [state.gripper_pos, state.object_pos, state.target_pos];
    let inv_two_sigma_sq = 1.0 / (2.0 * PIXEL_SIGMA * PIXEL_SIGMA);
    for center in centers {
        for i in 0..k {
            let cx = (i as f64 + 0.5) / k as f64;
            let dx2 = (cx - center[0]) * (cx - center[0]);
            for j in 0..k {
                let cy = (j as f64 + 0.5) / k as f64;
                let dy2 = (cy - center[1]) * (cy - center[1]);
                data.push((-(dx2 + dy2) * inv_two_sigma_sq).exp());
            }
        }
    }
    data.push(state.gripper_pos[2]);
    data.push(if state.gripper_closed { 1.0 } else { 0.0 });
    Observation(data)
}

/// Task completion test. `grasped` reports the instantaneous attachment or
/// contact; "ever grasped" is accumulated by the episode runner.
pub fn success_flags(state: &EnvState, task_kind: TaskKind) -> SuccessFlags {
    match task_kind {
        TaskKind::PickAndDrop => SuccessFlags {
            grasped: state.attached,
            completed: !state.gripper_closed
                && dist_xy(state.object_pos, state.target_pos) <= TARGET_RADIUS,
        },
        TaskKind::Push => SuccessFlags {
            grasped: dist3(state.gripper_pos, state.object_pos) < CONTACT_RADIUS,
            completed: dist_xy(state.object_pos, state.target_pos) <= TARGET_RADIUS,
        },
    }
}

/// Teleports the gripper by `magnitude` in a uniformly random direction,
/// clamped to the workspace. Attachment is preserved: an attached object
/// follows the gripper.
pub fn perturb<R: Rng>(state: &EnvState, magnitude: f64, rng: &mut R) -> EnvState {
    let mut dir;
    loop {
        dir = [
            rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.sample::<f64, _>(rand_distr::StandardNormal),
        ];
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        if norm > 1e-12 {
            dir = [dir[0] / norm, dir[1] / norm, dir[2] / norm];
            break;
        }
    }
    let mut next = *state;
    next.gripper_pos = clamp_to_workspace([
        state.gripper_pos[0] + magnitude * dir[0],
        state.gripper_pos[1] + magnitude * dir[1],
        state.gripper_pos[2] + magnitude * dir[2],
    ]);
    if next.attached {
        next.object_pos = next.gripper_pos;
    }
    next
}
