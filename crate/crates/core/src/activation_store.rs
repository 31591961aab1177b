// SPDX-License-Identifier: MIT OR Apache-2.0

//! ACTV1 activation datasets.
//!
//! A dataset lives in two files next to each other:
//!
//! - `<name>.actv`: a 20-byte header followed by the tensor payload.
//!   Header: magic `ACTV`, version byte `0x01`, three reserved zero bytes,
//!   then `n_records`, `n_layers`, `hidden_dim` as little-endian `u32`.
//!   Payload: `n_records` records, each `n_layers * hidden_dim` little-endian
//!   `f32` values stored layer-major.
//! - `<name>.meta.jsonl`: one JSON object per record, in payload order, with
//!   fields `id`, `label`, `category`, `split`, `text_hash`.
//!
//! The dataset `source` string is not part of either file; `read_dataset`
//! sets it to the path it was loaded from.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::StoreError;
use crate::seed::keyed_hash;
use crate::taxonomy::CognitiveAction;

pub const MAGIC: &[u8; 4] = b"ACTV";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    None,
}

/// Final-token activations of one example at every captured layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub id: String,
    /// Row-major `n_layers x hidden_dim`.
    pub values: Vec<f32>,
    pub label: Option<String>,
    pub category: Option<String>,
    pub split: Split,
    pub text_hash: u64,
}

impl ActivationRecord {
    pub fn layer(&self, layer: usize, hidden_dim: usize) -> &[f32] {
        &self.values[layer * hidden_dim..(layer + 1) * hidden_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub records: Vec<ActivationRecord>,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteSummary {
    /// Size of the `.actv` file, header included.
    pub bytes_written: usize,
    pub records: usize,
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    id: String,
    label: Option<String>,
    category: Option<String>,
    split: Split,
    text_hash: u64,
}

impl ActivationDataset {
    pub fn new(n_layers: usize, hidden_dim: usize, source: impl Into<String>) -> Self {
        Self {
            n_layers,
            hidden_dim,
            records: Vec::new(),
            source: source.into(),
        }
    }

    pub fn record_len(&self) -> usize {
        self.n_layers * self.hidden_dim
    }

    /// Checks shapes, finiteness and id uniqueness.
    pub fn validate(&self) -> Result<(), StoreError> {
        let expected = self.record_len();
        let mut seen = HashSet::with_capacity(self.records.len());
        for record in &self.records {
            if !seen.insert(record.id.as_str()) {
                return Err(StoreError::DuplicateId(record.id.clone()));
            }
            if record.values.len() != expected {
                return Err(StoreError::Shape {
                    record_id: record.id.clone(),
                    expected,
                    found: record.values.len(),
                });
            }
            if record.values.iter().any(|v| !v.is_finite()) {
                return Err(StoreError::NonFinite {
                    record_id: record.id.clone(),
                });
            }
        }
        Ok(())
    }

    /// Checks that every present label names an action of `actions`.
    pub fn validate_labels(&self, actions: &[CognitiveAction]) -> Result<(), StoreError> {
        let names: HashSet<&str> = actions.iter().map(|a| a.name.as_str()).collect();
        for (line, record) in self.records.iter().enumerate() {
            if let Some(label) = &record.label {
                if !names.contains(label.as_str()) {
                    return Err(StoreError::Metadata {
                        line: line + 1,
                        message: format!("label {label:?} is not in the taxonomy"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Distinct labels in first-seen order.
    pub fn labels(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter_map(|r| r.label.as_ref())
            .filter(|l| seen.insert(l.as_str()))
            .cloned()
            .collect()
    }
}

/// Path of the metadata sidecar belonging to `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.jsonl"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn encode_header(n_records: usize, n_layers: usize, hidden_dim: usize) -> [u8; HEADER_LEN] {
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(MAGIC);
    header[4] = VERSION;
    header[8..12].copy_from_slice(&(n_records as u32).to_le_bytes());
    header[12..16].copy_from_slice(&(n_layers as u32).to_le_bytes());
    header[16..20].copy_from_slice(&(hidden_dim as u32).to_le_bytes());
    header
}

pub fn write_dataset(dataset: &ActivationDataset, path: &Path) -> Result<WriteSummary, StoreError> {
    dataset.validate()?;

    let mut bytes =
        Vec::with_capacity(HEADER_LEN + dataset.records.len() * dataset.record_len() * 4);
    bytes.extend_from_slice(&encode_header(
        dataset.records.len(),
        dataset.n_layers,
        dataset.hidden_dim,
    ));
    for record in &dataset.records {
        for v in &record.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, &bytes).map_err(io_err(path))?;

    let meta_path = sidecar_path(path);
    let file = fs::File::create(&meta_path).map_err(io_err(&meta_path))?;
    let mut out = BufWriter::new(file);
    for record in &dataset.records {
        let line = MetaLine {
            id: record.id.clone(),
            label: record.label.clone(),
            category: record.category.clone(),
            split: record.split,
            text_hash: record.text_hash,
        };
        let json = serde_json::to_string(&line).expect("metadata serializes");
        writeln!(out, "{json}").map_err(io_err(&meta_path))?;
    }
    out.flush().map_err(io_err(&meta_path))?;

    Ok(WriteSummary {
        bytes_written: bytes.len(),
        records: dataset.records.len(),
    })
}

/// Parsed ACTV1 header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub n_records: usize,
    pub n_layers: usize,
    pub hidden_dim: usize,
}

pub fn decode_header(bytes: &[u8]) -> Result<Header, StoreError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(StoreError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(StoreError::TruncatedHeader);
    }
    if bytes[4] != VERSION {
        return Err(StoreError::UnsupportedVersion(bytes[4]));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    Ok(Header {
        n_records: word(8),
        n_layers: word(12),
        hidden_dim: word(16),
    })
}

/// Decodes the tensor file alone. Records get placeholder ids `#<index>`.
pub fn decode_tensor(bytes: &[u8]) -> Result<(Header, Vec<Vec<f32>>), StoreError> {
    let header = decode_header(bytes)?;
    let per_record = header.n_layers * header.hidden_dim;
    let expected = header.n_records * per_record * 4;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(StoreError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(StoreError::CountMismatch {
            declared: header.n_records,
            found: payload.len() - expected,
        });
    }
    let mut records = Vec::with_capacity(header.n_records);
    for chunk in payload
        .chunks_exact((per_record * 4).max(1))
        .take(header.n_records)
    {
        records.push(
            chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        );
    }
    // zero-width records: chunks_exact yields nothing
    records.resize(header.n_records, Vec::new());
    Ok((header, records))
}

pub fn read_dataset(path: &Path) -> Result<ActivationDataset, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (header, values) = decode_tensor(&bytes)?;

    let meta_path = sidecar_path(path);
    let file = fs::File::open(&meta_path).map_err(io_err(&meta_path))?;
    let mut metas = Vec::with_capacity(header.n_records);
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&meta_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let meta: MetaLine = serde_json::from_str(&line).map_err(|e| StoreError::Metadata {
            line: index + 1,
            message: e.to_string(),
        })?;
        metas.push(meta);
    }
    if metas.len() != header.n_records {
        return Err(StoreError::MetadataCount {
            declared: header.n_records,
            found: metas.len(),
        });
    }

    let records = metas
        .into_iter()
        .zip(values)
        .map(|(meta, values)| ActivationRecord {
            id: meta.id,
            values,
            label: meta.label,
            category: meta.category,
            split: meta.split,
            text_hash: meta.text_hash,
        })
        .collect();
    let dataset = ActivationDataset {
        n_layers: header.n_layers,
        hidden_dim: header.hidden_dim,
        records,
        source: path.display().to_string(),
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Stratified train/val assignment.
///
/// Within each label class (unlabeled records form their own class) records
/// are ordered by a keyed hash of their id, the first
/// `floor(train_fraction * class_size)` go to train and the rest to val.
/// The result depends only on the record ids and the seed.
pub fn split_dataset(
    dataset: &ActivationDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<ActivationDataset, StoreError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(StoreError::BadFraction(train_fraction));
    }
    let mut classes: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
    for (i, record) in dataset.records.iter().enumerate() {
        classes.entry(record.label.as_deref()).or_default().push(i);
    }

    let mut out = dataset.clone();
    for (label, mut members) in classes {
        if members.len() < 2 {
            return Err(StoreError::ClassTooSmall {
                label: label.map(str::to_owned),
                count: members.len(),
            });
        }
        members.sort_by_cached_key(|&i| {
            let id = &dataset.records[i].id;
            (keyed_hash(seed, id), id.clone())
        });
        let n_train = (train_fraction * members.len() as f64).floor() as usize;
        for (rank, &i) in members.iter().enumerate() {
            out.records[i].split = if rank < n_train {
                Split::Train
            } else {
                Split::Val
            };
        }
    }
    Ok(out)
}
