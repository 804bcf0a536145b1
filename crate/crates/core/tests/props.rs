//! Property tests: shape closure of the gradient stack, workspace closure of
//! the simulator, and exact serialization round-trips.

use proptest::prelude::*;

use deskrec_core::env::{
    clamp_to_workspace, reset, step, Action, GripperCmd, TaskKind, Z_MAX,
};
use deskrec_core::nn::{backward, init_model, GradBundle};
use deskrec_core::rng::stream;

fn arb_architecture() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=16, 2..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_shapes_always_match_the_model(
        layer_sizes in arb_architecture(),
        seed in any::<u64>(),
    ) {
        let model = init_model(&layer_sizes, seed).unwrap();
        let input = vec![0.5; layer_sizes[0]];
        let upstream = vec![1.0; *layer_sizes.last().unwrap()];
        let grads = backward(&model, &input, &upstream).unwrap();
        prop_assert_eq!(grads.weights.len(), model.weights().len());
        prop_assert_eq!(grads.biases.len(), model.biases().len());
        for (g, w) in grads.weights.iter().zip(model.weights().iter()) {
            prop_assert_eq!(g.len(), w.len());
        }
        for (g, b) in grads.biases.iter().zip(model.biases().iter()) {
            prop_assert_eq!(g.len(), b.len());
        }
        prop_assert_eq!(grads.input.len(), layer_sizes[0]);
        let zeros = GradBundle::zeros_like(&model);
        prop_assert_eq!(zeros.input.len(), grads.input.len());
    }

    #[test]
    fn model_json_roundtrip_is_exact(
        layer_sizes in arb_architecture(),
        seed in any::<u64>(),
    ) {
        let model = init_model(&layer_sizes, seed).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: deskrec_core::nn::MlpModel = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(model, back);
    }

    #[test]
    fn no_action_sequence_escapes_the_workspace(
        task_pick in any::<bool>(),
        reset_seed in any::<u64>(),
        actions in prop::collection::vec(
            (
                -0.2f64..0.2,
                -0.2f64..0.2,
                -0.2f64..0.2,
                any::<bool>(),
            ),
            1..60,
        ),
    ) {
        let task = if task_pick { TaskKind::PickAndDrop } else { TaskKind::Push };
        let mut state = reset(&mut stream(reset_seed, "prop-reset", 0), task);
        for (dx, dy, dz, close) in actions {
            let cmd = if close { GripperCmd::Close } else { GripperCmd::Open };
            state = step(&state, &Action::new([dx, dy, dz], cmd)).unwrap();
            for p in [state.gripper_pos, state.object_pos] {
                prop_assert!((0.0..=1.0).contains(&p[0]));
                prop_assert!((0.0..=1.0).contains(&p[1]));
                prop_assert!((0.0..=Z_MAX).contains(&p[2]));
                prop_assert_eq!(p, clamp_to_workspace(p));
            }
            if state.attached {
                prop_assert!(state.gripper_closed);
                prop_assert_eq!(state.object_pos, state.gripper_pos);
            }
        }
    }

    #[test]
    fn dataset_jsonl_roundtrip_preserves_everything(
        n_traj in 1usize..3,
        steps in 3usize..8,
        seed in any::<u64>(),
    ) {
        let ds = deskrec_core::env::collect_explore(n_traj, steps, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        ds.save_jsonl(&path).unwrap();
        let back = deskrec_core::env::Dataset::load_jsonl(&path).unwrap();
        prop_assert_eq!(ds, back);
    }
}
