//! Per-step rollout log records (JSON Lines).

use serde::{Deserialize, Serialize};

use deskrec_core::env::GripperCmd;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub gripper_pos: [f64; 3],
    /// Latent embedding of the observation at `t`.
    pub z: [f64; 3],
    pub density: f64,
    pub gate_weight: f64,
    pub bc_delta: [f64; 3],
    pub recovery_delta: [f64; 3],
    pub applied_delta: [f64; 3],
    pub gripper_cmd: GripperCmd,
}

pub fn load_trace(path: &std::path::Path) -> deskrec_core::Result<Vec<TraceRecord>> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}
