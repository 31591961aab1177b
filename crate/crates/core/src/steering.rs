// SPDX-License-Identifier: MIT OR Apache-2.0

//! Contrastive activation addition.
//!
//! A steering vector for layer `l` is built from paired final-token
//! activations of a correct and an incorrect completion of the same prompt.
//! With per-pair differences `d_i = pos_i - neg_i`:
//!
//! - `mean_diff`: the direction is `mean(d)`.
//! - `pca_top1`: the direction is the top principal component of the centered
//!   differences `d_i - mean(d)`, signed so that it points along `mean(d)` and
//!   scaled to `|mean(d)|`.
//!
//! Application is plain addition, `x + alpha * direction`.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::activation_store::ActivationDataset;
use crate::error::SteeringError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefCondition {
    FalseBelief,
    TrueBelief,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveTriplet {
    pub story: String,
    pub question: String,
    /// Completion with the correct belief attribution.
    pub positive: String,
    pub negative: String,
    pub condition: BeliefCondition,
}

impl ContrastiveTriplet {
    fn check(&self) -> Result<(), String> {
        for (name, text) in [
            ("story", &self.story),
            ("question", &self.question),
            ("positive", &self.positive),
            ("negative", &self.negative),
        ] {
            if text.trim().is_empty() {
                return Err(format!("empty {name}"));
            }
        }
        if self.positive == self.negative {
            return Err("positive and negative completions are identical".into());
        }
        Ok(())
    }

    /// Text whose final token is read for the positive (`true`) or negative
    /// completion.
    pub fn completion_text(&self, positive: bool) -> String {
        let completion = if positive {
            &self.positive
        } else {
            &self.negative
        };
        format!("{} {} {}", self.story, self.question, completion)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletSet {
    pub triplets: Vec<ContrastiveTriplet>,
    pub n_false_belief: usize,
    pub n_true_belief: usize,
    pub warnings: Vec<String>,
}

pub fn save_triplets(triplets: &[ContrastiveTriplet], path: &Path) -> Result<(), SteeringError> {
    let mut out = String::new();
    for t in triplets {
        out.push_str(&serde_json::to_string(t).expect("triplet serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| SteeringError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_triplets(path: &Path) -> Result<TripletSet, SteeringError> {
    let file = fs::File::open(path).map_err(|source| SteeringError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut triplets = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| SteeringError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| SteeringError::MalformedTriplet {
            line: i + 1,
            message,
        };
        let triplet: ContrastiveTriplet =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        triplet.check().map_err(malformed)?;
        triplets.push(triplet);
    }
    let n_false_belief = triplets
        .iter()
        .filter(|t| t.condition == BeliefCondition::FalseBelief)
        .count();
    let n_true_belief = triplets.len() - n_false_belief;
    let mut warnings = Vec::new();
    if triplets.is_empty() {
        warnings.push(format!("{} contains no triplets", path.display()));
    } else if n_false_belief != n_true_belief {
        warnings.push(format!(
            "condition split is {n_false_belief} false-belief / {n_true_belief} true-belief"
        ));
    }
    Ok(TripletSet {
        triplets,
        n_false_belief,
        n_true_belief,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SteeringMode {
    #[default]
    MeanDiff,
    PcaTop1,
}

/// Which token positions receive the steering addition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositionPolicy {
    #[default]
    AllPositions,
    FinalPosition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVector {
    pub layer: usize,
    pub direction: Vec<f64>,
    pub mode: SteeringMode,
    pub n_pairs: usize,
}

impl SteeringVector {
    pub fn norm(&self) -> f64 {
        self.direction.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteeringConfig {
    pub layers: Vec<usize>,
    pub multiplier: f64,
    pub mode: SteeringMode,
    pub position: PositionPolicy,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            layers: (14..=30).collect(),
            multiplier: 1.0,
            mode: SteeringMode::MeanDiff,
            position: PositionPolicy::AllPositions,
        }
    }
}

impl SteeringConfig {
    /// `depth` is the number of capture points (layers) of the model.
    pub fn validate(&self, depth: usize) -> Result<(), SteeringError> {
        if self.layers.is_empty() {
            return Err(SteeringError::NoLayers);
        }
        if let Some(&layer) = self.layers.iter().find(|&&l| l >= depth) {
            return Err(SteeringError::LayerOutOfRange { layer, depth });
        }
        Ok(())
    }
}

/// `mean(rows)` computed as `rows[0] + mean(rows[i] - rows[0])`, which is
/// exact when all rows are equal.
pub fn shifted_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let first = &rows[0];
    let n = rows.len() as f64;
    let mut acc = vec![0.0; first.len()];
    for row in &rows[1..] {
        for ((a, x), f) in acc.iter_mut().zip(row).zip(first) {
            *a += x - f;
        }
    }
    first.iter().zip(&acc).map(|(f, a)| f + a / n).collect()
}

/// Unit-norm top principal direction of `rows` (already centered), or `None`
/// when they have no variance.
pub fn top_principal_direction(rows: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = rows.len();
    let dim = rows.first()?.len();
    let data = DMatrix::from_fn(n, dim, |i, j| rows[i][j]);
    // eigen-decompose whichever Gram matrix is smaller
    let direction = if n <= dim {
        let gram = &data * data.transpose();
        let eig = SymmetricEigen::new(gram);
        let top = argmax(eig.eigenvalues.as_slice())?;
        if eig.eigenvalues[top] <= 0.0 {
            return None;
        }
        data.transpose() * eig.eigenvectors.column(top)
    } else {
        let cov = data.transpose() * &data;
        let eig = SymmetricEigen::new(cov);
        let top = argmax(eig.eigenvalues.as_slice())?;
        if eig.eigenvalues[top] <= 0.0 {
            return None;
        }
        eig.eigenvectors.column(top).into_owned()
    };
    let norm = direction.norm();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(direction.iter().map(|x| x / norm).collect())
}

fn argmax(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}

/// Builds the direction for one layer from row-aligned differences.
pub fn direction_from_differences(
    diffs: &[Vec<f64>],
    mode: SteeringMode,
) -> Result<Vec<f64>, SteeringError> {
    if diffs.is_empty() {
        return Err(SteeringError::Shape("no pairs".into()));
    }
    let mean = shifted_mean(diffs);
    match mode {
        SteeringMode::MeanDiff => Ok(mean),
        SteeringMode::PcaTop1 => {
            if diffs.len() < 2 {
                return Err(SteeringError::TooFewPairs(diffs.len()));
            }
            let centered: Vec<Vec<f64>> = diffs
                .iter()
                .map(|d| d.iter().zip(&mean).map(|(x, m)| x - m).collect())
                .collect();
            let mean_norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
            let Some(mut pc) = top_principal_direction(&centered) else {
                // no spread around the mean: the mean is the only direction
                return Ok(mean);
            };
            let along: f64 = pc.iter().zip(&mean).map(|(p, m)| p * m).sum();
            if along < 0.0 {
                pc.iter_mut().for_each(|x| *x = -*x);
            }
            Ok(pc.into_iter().map(|x| x * mean_norm).collect())
        }
    }
}

/// One vector per configured layer from row-aligned positive/negative
/// activation datasets (record `i` of each belongs to pair `i`).
pub fn build_steering_vectors(
    pos: &ActivationDataset,
    neg: &ActivationDataset,
    config: &SteeringConfig,
) -> Result<Vec<SteeringVector>, SteeringError> {
    if (pos.n_layers, pos.hidden_dim) != (neg.n_layers, neg.hidden_dim) {
        return Err(SteeringError::Shape(format!(
            "positive activations are {}x{}, negative {}x{}",
            pos.n_layers, pos.hidden_dim, neg.n_layers, neg.hidden_dim
        )));
    }
    if pos.records.len() != neg.records.len() {
        return Err(SteeringError::Shape(format!(
            "{} positive rows vs {} negative rows",
            pos.records.len(),
            neg.records.len()
        )));
    }
    config.validate(pos.n_layers)?;
    let n_pairs = pos.records.len();
    if config.mode == SteeringMode::PcaTop1 && n_pairs < 2 {
        return Err(SteeringError::TooFewPairs(n_pairs));
    }
    if n_pairs == 0 {
        return Err(SteeringError::Shape("no pairs".into()));
    }
    let hidden = pos.hidden_dim;
    config
        .layers
        .iter()
        .map(|&layer| {
            let diffs: Vec<Vec<f64>> = pos
                .records
                .iter()
                .zip(&neg.records)
                .map(|(p, n)| {
                    p.layer(layer, hidden)
                        .iter()
                        .zip(n.layer(layer, hidden))
                        .map(|(&a, &b)| a as f64 - b as f64)
                        .collect()
                })
                .collect();
            Ok(SteeringVector {
                layer,
                direction: direction_from_differences(&diffs, config.mode)?,
                mode: config.mode,
                n_pairs,
            })
        })
        .collect()
}

/// Adds `multiplier * direction` to `activation` in place. A zero multiplier
/// leaves the input untouched, signed zeros included.
pub fn add_steering(activation: &mut [f64], direction: &[f64], multiplier: f64) {
    if multiplier == 0.0 {
        return;
    }
    for (x, d) in activation.iter_mut().zip(direction) {
        *x += multiplier * d;
    }
}

pub fn apply_steering(
    activation: &[f64],
    vector: &SteeringVector,
    multiplier: f64,
) -> Result<Vec<f64>, SteeringError> {
    if activation.len() != vector.direction.len() {
        return Err(SteeringError::Shape(format!(
            "activation has {} values, direction {}",
            activation.len(),
            vector.direction.len()
        )));
    }
    let mut out = activation.to_vec();
    add_steering(&mut out, &vector.direction, multiplier);
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct VectorEntry {
    layer: usize,
    mode: SteeringMode,
    n_pairs: usize,
    norm: f64,
    /// Offset into the blob, in floats.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct VectorIndex {
    hidden_dim: usize,
    blob: String,
    vectors: Vec<VectorEntry>,
}

/// Writes `vectors.json` and `vectors.bin` (little-endian `f32`) under `dir`.
/// Directions are rounded to 32-bit.
pub fn save_vectors(vectors: &[SteeringVector], dir: &Path) -> Result<PathBuf, SteeringError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SteeringError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let hidden_dim = vectors.first().map_or(0, |v| v.direction.len());
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        if v.direction.len() != hidden_dim {
            return Err(SteeringError::Shape("vectors differ in width".into()));
        }
        entries.push(VectorEntry {
            layer: v.layer,
            mode: v.mode,
            n_pairs: v.n_pairs,
            norm: v.norm(),
            offset: i * hidden_dim,
        });
        blob.extend(v.direction.iter().flat_map(|&x| (x as f32).to_le_bytes()));
    }
    let blob_path = dir.join("vectors.bin");
    fs::write(&blob_path, blob).map_err(io(&blob_path))?;
    let index_path = dir.join("vectors.json");
    let json = serde_json::to_string_pretty(&VectorIndex {
        hidden_dim,
        blob: "vectors.bin".into(),
        vectors: entries,
    })
    .expect("index serializes");
    fs::write(&index_path, json).map_err(io(&index_path))?;
    Ok(index_path)
}

pub fn load_vectors(index_path: &Path) -> Result<Vec<SteeringVector>, SteeringError> {
    let read_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SteeringError::Io { path, source }
    };
    let text = fs::read_to_string(index_path).map_err(read_err(index_path))?;
    let bad = |message: String| SteeringError::Index {
        path: index_path.to_path_buf(),
        message,
    };
    let index: VectorIndex = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let blob_path = index_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(&index.blob);
    let blob = fs::read(&blob_path).map_err(read_err(&blob_path))?;
    let floats: Vec<f64> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    index
        .vectors
        .into_iter()
        .map(|e| {
            let end = e.offset + index.hidden_dim;
            if end > floats.len() {
                return Err(bad(format!(
                    "vector for layer {} runs past the blob",
                    e.layer
                )));
            }
            Ok(SteeringVector {
                layer: e.layer,
                direction: floats[e.offset..end].to_vec(),
                mode: e.mode,
                n_pairs: e.n_pairs,
            })
        })
        .collect()
}
