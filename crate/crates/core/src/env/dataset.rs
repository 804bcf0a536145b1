//! Trajectory datasets: expert demonstrations, task-agnostic exploration,
//! the shifted-actions corruption, and JSON Lines persistence.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    clip_delta, render, reset, scripted_expert, step, success_flags, Action, EnvState, GripperCmd,
    Observation, TaskKind, EPISODE_CAP, Z_MAX,
};
use crate::error::{CoreError, Result};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectionKind {
    Demo,
    Explore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub task_kind: TaskKind,
    pub seed: u64,
    pub collection_kind: CollectionKind,
}

/// One recorded transition. The action stores the realized gripper
/// displacement (identical to the commanded delta away from the workspace
/// boundary), so replaying `action` from `obs` reproduces `next_obs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajStep {
    pub obs: Observation,
    pub action: [f64; 3],
    pub gripper_cmd: GripperCmd,
    pub next_obs: Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial_observation: Observation,
    pub steps: Vec<TrajStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub metadata: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Writes the dataset as JSON Lines: metadata record first, then one
    /// trajectory record per line, numbers at full double precision.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &self.metadata)?;
        w.write_all(b"\n")?;
        for traj in &self.trajectories {
            serde_json::to_writer(&mut w, traj)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let meta_line = lines
            .next()
            .ok_or_else(|| CoreError::Input(format!("{}: empty dataset file", path.display())))??;
        let metadata: DatasetMeta = serde_json::from_str(&meta_line)?;
        let mut trajectories = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            trajectories.push(serde_json::from_str(&line)?);
        }
        Ok(Self {
            metadata,
            trajectories,
        })
    }
}

struct EpisodeRecorder {
    state: EnvState,
    obs: Observation,
    initial_observation: Observation,
    steps: Vec<TrajStep>,
}

impl EpisodeRecorder {
    fn new(state: EnvState) -> Self {
        let obs = render(&state);
        Self {
            state,
            initial_observation: obs.clone(),
            obs,
            steps: Vec::new(),
        }
    }

    /// Applies the action and records the realized transition.
    fn apply(&mut self, action: &Action) -> Result<()> {
        let next = step(&self.state, action)?;
        let next_obs = render(&next);
        let realized = [
            next.gripper_pos[0] - self.state.gripper_pos[0],
            next.gripper_pos[1] - self.state.gripper_pos[1],
            next.gripper_pos[2] - self.state.gripper_pos[2],
        ];
        self.steps.push(TrajStep {
            obs: std::mem::replace(&mut self.obs, next_obs.clone()),
            action: realized,
            gripper_cmd: action.gripper_cmd,
            next_obs,
        });
        self.state = next;
        Ok(())
    }

    fn finish(self) -> Trajectory {
        Trajectory {
            initial_observation: self.initial_observation,
            steps: self.steps,
        }
    }
}

/// Steps recorded past task completion; the expert does not freeze the
/// instant the success predicate fires, so end-of-task poses are part of
/// the demonstrated state distribution.
const FOLLOW_THROUGH: usize = 4;

/// Collects expert demonstrations: each trajectory runs the scripted expert
/// to success (plus a short follow-through) or the step cap. Fails if more
/// than 10% of trajectories do not complete, which signals a broken expert
/// or configuration.
pub fn collect_demos(
    n_traj: usize,
    task_kind: TaskKind,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_traj == 0 {
        return Err(CoreError::Config("collect_demos: n_traj must be >= 1".into()));
    }
    let mut trajectories = Vec::with_capacity(n_traj);
    let mut failures = 0usize;
    for t in 0..n_traj {
        let mut rng = stream(seed, "demo-traj", t as u64);
        let state = reset(&mut rng, task_kind);
        let mut rec = EpisodeRecorder::new(state);
        let mut completed = false;
        let mut extra = FOLLOW_THROUGH;
        for _ in 0..EPISODE_CAP {
            let action = scripted_expert(&rec.state, noise_std, &mut rng);
            rec.apply(&action)?;
            if success_flags(&rec.state, task_kind).completed {
                completed = true;
            }
            if completed {
                if extra == 0 {
                    break;
                }
                extra -= 1;
            }
        }
        if !completed {
            failures += 1;
        }
        trajectories.push(rec.finish());
    }
    if failures * 10 > n_traj {
        return Err(CoreError::Collection(format!(
            "scripted expert failed on {failures}/{n_traj} trajectories"
        )));
    }
    Ok(Dataset {
        metadata: DatasetMeta {
            task_kind,
            seed,
            collection_kind: CollectionKind::Demo,
        },
        trajectories,
    })
}

// Exploration sweeps an 8 x 8 x 4 occupancy grid over the workspace.
const SWEEP_X: usize = 8;
const SWEEP_Y: usize = 8;
const SWEEP_Z: usize = 4;
/// A waypoint counts as reached within this distance of the cell center
/// (strictly inside the cell: half the smallest cell extent is 0.0625).
const REACH_TOL: f64 = 0.05;
/// Steps of attached carries inserted between sweep segments.
const CARRY_LEN: usize = 12;
/// Sweep waypoints between two grasp-and-carry interaction segments.
const WAYPOINTS_PER_INTERACTION: usize = 14;

/// Serpentine ordering of the sweep cell centers, adjacent cells at every
/// transition.
fn sweep_cells() -> Vec<[f64; 3]> {
    let mut cells = Vec::with_capacity(SWEEP_X * SWEEP_Y * SWEEP_Z);
    for zi in 0..SWEEP_Z {
        let z = (zi as f64 + 0.5) * Z_MAX / SWEEP_Z as f64;
        for yi in 0..SWEEP_Y {
            let y_idx = if zi % 2 == 0 { yi } else { SWEEP_Y - 1 - yi };
            let y = (y_idx as f64 + 0.5) / SWEEP_Y as f64;
            for xi in 0..SWEEP_X {
                let x_idx = if (zi + yi) % 2 == 0 { xi } else { SWEEP_X - 1 - xi };
                let x = (x_idx as f64 + 0.5) / SWEEP_X as f64;
                cells.push([x, y, z]);
            }
        }
    }
    cells
}

/// Smoothed random-walk exploration with a workspace sweep and periodic
/// grasp-and-carry segments, so the encoder sees both well-distributed
/// gripper motion and object interaction.
pub fn collect_explore(n_traj: usize, steps_per_traj: usize, seed: u64) -> Result<Dataset> {
    if n_traj == 0 {
        return Err(CoreError::Config(
            "collect_explore: n_traj must be >= 1".into(),
        ));
    }
    let cells = sweep_cells();
    let per_traj = cells.len().div_ceil(n_traj);
    let mut trajectories = Vec::with_capacity(n_traj);
    for t in 0..n_traj {
        let mut rng = stream(seed, "explore-traj", t as u64);
        let chunk: Vec<[f64; 3]> = cells
            .iter()
            .copied()
            .cycle()
            .skip(t * per_traj)
            .take(cells.len())
            .collect();
        trajectories.push(explore_trajectory(&chunk, steps_per_traj, &mut rng)?);
    }
    Ok(Dataset {
        metadata: DatasetMeta {
            task_kind: TaskKind::PickAndDrop,
            seed,
            collection_kind: CollectionKind::Explore,
        },
        trajectories,
    })
}

fn explore_trajectory(
    waypoints: &[[f64; 3]],
    steps_budget: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let state = reset(rng, TaskKind::PickAndDrop);
    let mut rec = EpisodeRecorder::new(state);
    let mut filtered = [0.0f64; 3];
    let mut wp_iter = waypoints.iter().copied().cycle();
    let mut wp = wp_iter.next().expect("non-empty sweep");
    let mut visited_since_interaction = 0usize;
    let mut carry_left = 0usize;
    let mut approaching = false;

    while rec.steps.len() < steps_budget {
        // Low-pass filtered Gaussian velocity overlay.
        for f in &mut filtered {
            *f = 0.8 * *f + 0.2 * 0.02 * rng.sample::<f64, _>(StandardNormal);
        }

        let action = if carry_left > 0 {
            carry_left -= 1;
            let drift = [
                filtered[0] * 3.0,
                filtered[1] * 3.0,
                filtered[2] * 3.0 + 0.01,
            ];
            let cmd = if carry_left == 0 {
                GripperCmd::Open
            } else {
                GripperCmd::Close
            };
            Action::new(clip_delta(drift), cmd)
        } else if approaching {
            // Reuse the expert's approach to grasp the object wherever it is.
            scripted_expert(&rec.state, 0.0, rng)
        } else {
            let g = rec.state.gripper_pos;
            let to_wp = [wp[0] - g[0], wp[1] - g[1], wp[2] - g[2]];
            let d = (to_wp[0] * to_wp[0] + to_wp[1] * to_wp[1] + to_wp[2] * to_wp[2]).sqrt();
            if d <= REACH_TOL {
                wp = wp_iter.next().expect("cycled");
                visited_since_interaction += 1;
                if visited_since_interaction >= WAYPOINTS_PER_INTERACTION
                    && steps_budget - rec.steps.len() > 45
                {
                    visited_since_interaction = 0;
                    approaching = true;
                }
            }
            let pull = super::expert::toward(to_wp);
            Action::new(
                clip_delta([
                    pull[0] + filtered[0],
                    pull[1] + filtered[1],
                    pull[2] + filtered[2],
                ]),
                GripperCmd::Open,
            )
        };
        rec.apply(&action)?;
        if approaching && rec.state.attached {
            approaching = false;
            carry_left = CARRY_LEN;
        }
    }
    Ok(rec.finish())
}

/// Pairs each observation with the action of the following step, dropping
/// the last step of every trajectory; observations are untouched. Simulates
/// a one-step sensing/actuation delay.
pub fn shift_actions(dataset: &Dataset) -> Result<Dataset> {
    let mut trajectories = Vec::with_capacity(dataset.trajectories.len());
    for (i, traj) in dataset.trajectories.iter().enumerate() {
        if traj.len() < 2 {
            return Err(CoreError::Input(format!(
                "shift_actions: trajectory {i} has {} steps, need >= 2",
                traj.len()
            )));
        }
        let steps = traj
            .steps
            .windows(2)
            .map(|w| TrajStep {
                obs: w[0].obs.clone(),
                action: w[1].action,
                gripper_cmd: w[1].gripper_cmd,
                next_obs: w[0].next_obs.clone(),
            })
            .collect();
        trajectories.push(Trajectory {
            initial_observation: traj.initial_observation.clone(),
            steps,
        });
    }
    Ok(Dataset {
        metadata: dataset.metadata,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::STEP_CLIP;

    fn tiny_demo() -> Dataset {
        collect_demos(3, TaskKind::PickAndDrop, 0.0, 404).unwrap()
    }

    #[test]
    fn demo_chain_property_holds() {
        let ds = tiny_demo();
        for traj in &ds.trajectories {
            assert_eq!(traj.initial_observation, traj.steps[0].obs);
            for w in traj.steps.windows(2) {
                assert_eq!(w[0].next_obs, w[1].obs);
            }
        }
    }

    #[test]
    fn demo_collection_is_deterministic() {
        let a = tiny_demo();
        let b = tiny_demo();
        assert_eq!(a, b);
    }

    #[test]
    fn hopeless_expert_noise_is_a_collection_error() {
        // Noise an order of magnitude above the step clip turns the expert
        // into a random walk; most episodes hit the cap.
        let res = collect_demos(10, TaskKind::PickAndDrop, 0.5, 406);
        assert!(matches!(res, Err(CoreError::Collection(_))));
    }

    #[test]
    fn demo_actions_respect_clip() {
        let ds = collect_demos(3, TaskKind::PickAndDrop, 0.01, 405).unwrap();
        for traj in &ds.trajectories {
            for s in &traj.steps {
                for c in s.action {
                    assert!(c.abs() <= STEP_CLIP + 1e-12);
                }
            }
        }
    }

    #[test]
    fn shift_drops_one_step_per_trajectory() {
        let ds = tiny_demo();
        let shifted = shift_actions(&ds).unwrap();
        assert_eq!(
            shifted.total_steps(),
            ds.total_steps() - ds.trajectories.len()
        );
        for (orig, sh) in ds.trajectories.iter().zip(shifted.trajectories.iter()) {
            for (t, s) in sh.steps.iter().enumerate() {
                assert_eq!(s.action, orig.steps[t + 1].action);
                assert_eq!(s.gripper_cmd, orig.steps[t + 1].gripper_cmd);
                assert_eq!(s.obs, orig.steps[t].obs);
                assert_eq!(s.next_obs, orig.steps[t].next_obs);
            }
        }
    }

    #[test]
    fn shift_rejects_short_trajectories() {
        let mut ds = tiny_demo();
        ds.trajectories[0].steps.truncate(1);
        assert!(matches!(shift_actions(&ds), Err(CoreError::Input(_))));
    }

    #[test]
    fn shift_of_constant_actions_is_stepwise_identical() {
        let mut ds = tiny_demo();
        let constant = [0.01, -0.02, 0.0];
        for s in &mut ds.trajectories[0].steps {
            s.action = constant;
        }
        let shifted = shift_actions(&ds).unwrap();
        for s in &shifted.trajectories[0].steps {
            assert_eq!(s.action, constant);
        }
    }

    #[test]
    fn explore_respects_budget_and_clip() {
        let ds = collect_explore(2, 60, 77).unwrap();
        assert_eq!(ds.total_steps(), 120);
        for traj in &ds.trajectories {
            assert_eq!(traj.len(), 60);
            for s in &traj.steps {
                for c in s.action {
                    assert!(c.abs() <= STEP_CLIP + 1e-12);
                }
            }
        }
    }

    #[test]
    fn explore_is_deterministic() {
        let a = collect_explore(2, 40, 78).unwrap();
        let b = collect_explore(2, 40, 78).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jsonl_roundtrip_is_exact() {
        let ds = tiny_demo();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.jsonl");
        ds.save_jsonl(&path).unwrap();
        let back = Dataset::load_jsonl(&path).unwrap();
        assert_eq!(ds, back);
        // Chain property survives the round trip bit-exactly.
        for traj in &back.trajectories {
            for w in traj.steps.windows(2) {
                assert_eq!(w[0].next_obs, w[1].obs);
            }
        }
    }

    #[test]
    fn jsonl_serialization_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a_path = dir.path().join("a.jsonl");
        let b_path = dir.path().join("b.jsonl");
        collect_demos(2, TaskKind::PickAndDrop, 0.005, 9)
            .unwrap()
            .save_jsonl(&a_path)
            .unwrap();
        collect_demos(2, TaskKind::PickAndDrop, 0.005, 9)
            .unwrap()
            .save_jsonl(&b_path)
            .unwrap();
        assert_eq!(
            std::fs::read(&a_path).unwrap(),
            std::fs::read(&b_path).unwrap()
        );
    }
}
