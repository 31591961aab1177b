// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probe suite persistence: `index.json` plus one raw little-endian `f32`
//! weight blob per probe under `weights/`. Weights are rounded to 32-bit
//! on save; the bias and metrics are kept at full precision in the index.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LinearProbe, ProbeSuite};
use crate::error::ProbeError;

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    action: String,
    layer: usize,
    bias: f64,
    val_auc: f64,
    val_f1: f64,
    trained_epochs: usize,
    best_epoch: usize,
    seed: u64,
    weights: String,
}

#[derive(Serialize, Deserialize)]
struct Index {
    hidden_dim: usize,
    probes: Vec<IndexEntry>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ProbeError + '_ {
    move |source| ProbeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the suite under `dir` and returns the index path.
pub fn save_suite(suite: &ProbeSuite, dir: &Path) -> Result<PathBuf, ProbeError> {
    let weights_dir = dir.join("weights");
    fs::create_dir_all(&weights_dir).map_err(io(&weights_dir))?;
    let hidden_dim = suite.probes().first().map_or(0, |p| p.weights.len());
    let mut entries = Vec::with_capacity(suite.len());
    for probe in suite.probes() {
        let rel = format!("weights/{}__L{}.bin", probe.action, probe.layer);
        let path = dir.join(&rel);
        let blob: Vec<u8> = probe
            .weights
            .iter()
            .flat_map(|&w| (w as f32).to_le_bytes())
            .collect();
        fs::write(&path, blob).map_err(io(&path))?;
        entries.push(IndexEntry {
            action: probe.action.clone(),
            layer: probe.layer,
            bias: probe.bias,
            val_auc: probe.val_auc,
            val_f1: probe.val_f1,
            trained_epochs: probe.trained_epochs,
            best_epoch: probe.best_epoch,
            seed: probe.seed,
            weights: rel,
        });
    }
    let index_path = dir.join("index.json");
    let json = serde_json::to_string_pretty(&Index {
        hidden_dim,
        probes: entries,
    })
    .expect("index serializes");
    fs::write(&index_path, json).map_err(io(&index_path))?;
    Ok(index_path)
}

pub fn load_suite(index_path: &Path) -> Result<ProbeSuite, ProbeError> {
    let text = fs::read_to_string(index_path).map_err(io(index_path))?;
    let index: Index = serde_json::from_str(&text).map_err(|e| ProbeError::Index {
        path: index_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = index_path.parent().unwrap_or(Path::new("."));
    let mut probes = Vec::with_capacity(index.probes.len());
    for entry in index.probes {
        let path = base.join(&entry.weights);
        let blob = fs::read(&path).map_err(io(&path))?;
        if blob.len() != index.hidden_dim * 4 {
            return Err(ProbeError::Index {
                path: path.clone(),
                message: format!(
                    "expected {} bytes, found {}",
                    index.hidden_dim * 4,
                    blob.len()
                ),
            });
        }
        let weights = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        probes.push(LinearProbe {
            action: entry.action,
            layer: entry.layer,
            weights,
            bias: entry.bias,
            val_auc: entry.val_auc,
            val_f1: entry.val_f1,
            trained_epochs: entry.trained_epochs,
            best_epoch: entry.best_epoch,
            seed: entry.seed,
        });
    }
    ProbeSuite::new(probes)
}

/// Tab-separated report: `action layer auc f1 epochs`.
pub fn suite_table(suite: &ProbeSuite) -> String {
    let mut out = String::from("action\tlayer\tauc\tf1\tepochs\n");
    for p in suite.probes() {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{}",
            p.action, p.layer, p.val_auc, p.val_f1, p.trained_epochs
        );
    }
    out
}
