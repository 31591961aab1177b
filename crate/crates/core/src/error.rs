// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error types, one enum per pipeline module plus a crate-level wrapper
//! whose `Display` names the module that failed.

use std::path::PathBuf;

use thiserror::Error;

/// Errors from reading or writing ACTV1 activation datasets.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("record count mismatch: header declares {declared} records, payload holds {found} bytes beyond them")]
    CountMismatch { declared: usize, found: usize },
    #[error("metadata line count mismatch: header declares {declared} records, sidecar has {found} lines")]
    MetadataCount { declared: usize, found: usize },
    #[error("malformed metadata at line {line}: {message}")]
    Metadata { line: usize, message: String },
    #[error("record {record_id} contains a non-finite value")]
    NonFinite { record_id: String },
    #[error("record {record_id} has {found} values, expected {expected}")]
    Shape {
        record_id: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error("label class {label:?} has {count} record(s); at least 2 required")]
    ClassTooSmall { label: Option<String>, count: usize },
    #[error("train fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed taxonomy line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate action name {0}")]
    Duplicate(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("unknown domain {0:?}")]
    UnknownDomain(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("non-finite gradient at index {0}")]
    NonFiniteGradient(usize),
    #[error("epoch {t} outside [0, {total}]")]
    EpochOutOfRange { t: usize, total: usize },
    #[error("auc requires at least one positive and one negative label")]
    SingleClass,
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("action {0:?} has no training records")]
    ActionAbsent(String),
    #[error("action {0:?} has no validation positives")]
    NoValPositives(String),
    #[error("action {0:?} has no negatives available")]
    NoNegatives(String),
    #[error("layer {layer} out of range for dataset with {n_layers} layers")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("missing probe for action {action:?} at layer {layer}")]
    MissingProbe { action: String, layer: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed probe index {path}: {message}")]
    Index { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum SteeringError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed triplet at line {line}: {message}")]
    MalformedTriplet { line: usize, message: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("pca_top1 needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("layer {layer} outside model depth {depth}")]
    LayerOutOfRange { layer: usize, depth: usize },
    #[error("steering config has no layers")]
    NoLayers,
    #[error("malformed vector index {path}: {message}")]
    Index { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("sequence of {len} tokens exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("steering vector for layer {layer} does not fit the model: {message}")]
    Steering { layer: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty scenario list")]
    Empty,
    #[error("scenario id mismatch at index {index}: {baseline} vs {steered}")]
    IdMismatch {
        index: usize,
        baseline: String,
        steered: String,
    },
    #[error("result counts differ: {baseline} baseline vs {steered} steered")]
    LengthMismatch { baseline: usize, steered: usize },
    #[error("position mismatch for scenario {0}")]
    PositionMismatch(String),
    #[error("invalid scenario {id}: {message}")]
    InvalidScenario { id: String, message: String },
    #[error("duplicate scenario id {0}")]
    DuplicateId(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum DecompositionError {
    #[error("unpaired capture for scenario {scenario} at {timepoint}")]
    Unpaired { scenario: String, timepoint: String },
    #[error("capture shape mismatch: {0}")]
    Shape(String),
    #[error("empty analysis window")]
    EmptyWindow,
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report {path}: {message}")]
    Report { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing input {}: {what}", path.display())]
    MissingInput { path: PathBuf, what: &'static str },
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Crate-level error. The display form is `<module>: <cause>`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("activation-store: {0}")]
    Store(#[from] StoreError),
    #[error("taxonomy: {0}")]
    Taxonomy(#[from] TaxonomyError),
    #[error("probe: {0}")]
    Probe(#[from] ProbeError),
    #[error("steering: {0}")]
    Steering(#[from] SteeringError),
    #[error("toy-lm: {0}")]
    Model(#[from] ModelError),
    #[error("tom-eval: {0}")]
    Eval(#[from] EvalError),
    #[error("decomposition: {0}")]
    Decomposition(#[from] DecompositionError),
    #[error("cli: {0}")]
    Pipeline(#[from] PipelineError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
