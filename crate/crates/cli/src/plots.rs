//! Plot-data export: CSV summaries derived from rollout traces.
//!
//! For every trace `<name>.jsonl` three files are written next to each
//! other in the output directory: the latent trajectory projected to the
//! table plane, the density curve, and the gate-weight timeline. Numbers are
//! printed with the shortest round-trip representation, so re-exporting is
//! byte-identical.

use std::path::{Path, PathBuf};

use deskrec_core::{CoreError, Result};

use crate::trace::load_trace;

/// Exports one trace; returns the written file paths.
pub fn export_trace(trace_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let records = load_trace(trace_path)?;
    let stem = trace_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| {
            CoreError::Input(format!("{}: unusable trace file name", trace_path.display()))
        })?;
    std::fs::create_dir_all(out_dir)?;

    let mut latent = String::from("t,z_x,z_y\n");
    let mut density = String::from("t,density\n");
    let mut gate = String::from("t,gate_weight\n");
    for r in &records {
        latent.push_str(&format!("{},{},{}\n", r.t, r.z[0], r.z[1]));
        density.push_str(&format!("{},{}\n", r.t, r.density));
        gate.push_str(&format!("{},{}\n", r.t, r.gate_weight));
    }

    let files = vec![
        out_dir.join(format!("{stem}.latent.csv")),
        out_dir.join(format!("{stem}.density.csv")),
        out_dir.join(format!("{stem}.gate.csv")),
    ];
    std::fs::write(&files[0], latent)?;
    std::fs::write(&files[1], density)?;
    std::fs::write(&files[2], gate)?;
    Ok(files)
}

/// Exports every `.jsonl` trace in a directory (or a single trace file).
pub fn export_plots(traces: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if traces.is_file() {
        written.extend(export_trace(traces, out_dir)?);
        return Ok(written);
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(traces)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("jsonl"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(CoreError::Input(format!(
            "{}: no .jsonl traces found",
            traces.display()
        )));
    }
    for path in entries {
        written.extend(export_trace(&path, out_dir)?);
    }
    Ok(written)
}
