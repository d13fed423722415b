//! Files written by the command-line front end: per-species snapshot CSVs,
//! the diagnostics ledger and a JSON manifest indexing everything.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::fmt17;
use crate::geometry::MeshedDomain;
use crate::solver::{Simulator, State, Trajectory};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.to_path_buf(), source }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), OutputError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    fs::write(path, contents).map_err(io_err(path))
}

pub fn read_file(path: &Path) -> Result<String, OutputError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn snapshot_name(step: usize, species: usize) -> String {
    format!("snap_{step}_{species}.csv")
}

/// Columns x(,y),value; one row per cell in mesh order.
pub fn snapshot_csv(mesh: &MeshedDomain, values: &[f64]) -> String {
    let axes = ["x", "y", "z"];
    let mut out = axes[..mesh.dim()].join(",");
    out.push_str(",value\n");
    for (c, v) in mesh.centers().zip(values) {
        for x in c {
            out.push_str(&fmt17(*x));
            out.push(',');
        }
        out.push_str(&fmt17(*v));
        out.push('\n');
    }
    out
}

/// Values column of a snapshot file.
pub fn read_snapshot(path: &Path) -> Result<Vec<f64>, OutputError> {
    let text = read_file(path)?;
    let bad = |message: String| OutputError::Format { path: path.to_path_buf(), message };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    if !header.ends_with("value") {
        return Err(bad(format!("unexpected header `{header}`")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            line.rsplit(',')
                .next()
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("line {}: bad value", i + 2)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub step: usize,
    pub t: f64,
    /// One file per species, in species order.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    /// Canonical config text the run used.
    pub config: String,
    pub files: Vec<String>,
    pub snapshots: Vec<SnapshotEntry>,
    pub wall_clock_seconds: f64,
    pub verdict: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: String) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            files: Vec::new(),
            snapshots: Vec::new(),
            wall_clock_seconds: 0.0,
            verdict: serde_json::Value::Null,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, OutputError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(&path, &(text + "\n"))?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self, OutputError> {
        let path = dir.join("manifest.json");
        let text = read_file(&path)?;
        serde_json::from_str(&text).map_err(|e| OutputError::Format { path, message: e.to_string() })
    }
}

/// Snapshots and ledger into `dir`; the returned manifest still needs its
/// verdict and timing filled in before [`RunManifest::write`].
pub fn write_trajectory(dir: &Path, sim: &Simulator, traj: &Trajectory, config: String) -> Result<RunManifest, OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = RunManifest::new("run", config);
    for snap in &traj.snapshots {
        let mut files = Vec::new();
        for (k, values) in snap.state.fields.iter().enumerate() {
            let name = snapshot_name(snap.step, k + 1);
            write_file(&dir.join(&name), &snapshot_csv(sim.species_mesh(k), values))?;
            files.push(name.clone());
            manifest.files.push(name);
        }
        manifest.snapshots.push(SnapshotEntry { step: snap.step, t: snap.state.t, files });
    }
    write_file(&dir.join("ledger.csv"), &traj.ledger.to_csv())?;
    manifest.files.push("ledger.csv".into());
    Ok(manifest)
}

/// Rebuilds the states stored under a manifest.
pub fn read_states(dir: &Path, manifest: &RunManifest, sim: &Simulator) -> Result<Vec<State>, OutputError> {
    manifest
        .snapshots
        .iter()
        .map(|entry| {
            let fields = entry
                .files
                .iter()
                .enumerate()
                .map(|(k, name)| {
                    let path = dir.join(name);
                    let values = read_snapshot(&path)?;
                    if k >= sim.model().m() || values.len() != sim.species_mesh(k).len() {
                        return Err(OutputError::Format { path, message: "snapshot does not match the model mesh".into() });
                    }
                    Ok(values)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(State { t: entry.t, fields })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Domain};

    #[test]
    fn snapshot_round_trip() {
        let mesh = build_mesh(&Domain::new(1, vec![0.0, 0.0], vec![1.0, 2.0]).unwrap(), &[3, 2]).unwrap();
        let values = vec![0.1, 1.0 / 3.0, 2.0, 1e-300, 0.0, 7.25];
        let csv = snapshot_csv(&mesh, &values);
        assert!(csv.starts_with("x,y,value\n"));
        assert_eq!(csv.lines().count(), 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_file(&path, &csv).unwrap();
        assert_eq!(read_snapshot(&path).unwrap(), values);
    }
}
