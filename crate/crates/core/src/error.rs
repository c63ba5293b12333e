use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("invalid shape {0:?}: need at least one dimension, all >= 1")]
    BadShape(Vec<usize>),
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Mismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("rows {start}..{start}+{count} out of range for {rows} rows")]
    RowRange { start: usize, count: usize, rows: usize },
}

/// Errors from network construction and the forward/backward passes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("layer {layer}: expected tensor of shape {expected:?}, found {found:?}")]
    LayerShape {
        layer: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("expected {expected} per-layer tensors, found {found}")]
    LayerCount { expected: usize, found: usize },
    #[error("batch of shape {found:?} does not match network input {expected:?}")]
    BatchShape { expected: Vec<usize>, found: Vec<usize> },
    #[error("label {label} at position {index} is outside 0..{classes}")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("{labels} labels for a batch of {batch}")]
    LabelCount { labels: usize, batch: usize },
    #[error("forward trace does not match this network: {0}")]
    TraceMismatch(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtoError {
    #[error("network has no weighted layers")]
    NoWeightedLayers,
    #[error("padding rate must lie in (0, 1], got {0}")]
    InvalidRate(f64),
    #[error("prototype vector length must be >= 1")]
    ZeroLength,
    #[error("random-vector padding needs exactly one of a rate or a length")]
    AmbiguousLength,
    #[error("operation expects strategy {expected}, source has {found}")]
    WrongStrategy {
        expected: &'static str,
        found: &'static str,
    },
    #[error("payload holds {found} values, strategy needs {expected}")]
    PayloadLength { expected: usize, found: usize },
    #[error("expected {expected} layer scales, found {found}")]
    ScaleCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error("keep ratio must lie in (0, 1], got {num}/{den}")]
    InvalidRatio { num: u32, den: u32 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("target storage ratio {0} cannot be reached by a conventional sparse model")]
    UnreachableTarget(f64),
    #[error(transparent)]
    Proto(#[from] ProtoError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContainerError {
    #[error("bad magic bytes {0:02x?}, expected \"PEMN\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("prototype checksum mismatch: regenerated values differ from the stored digest")]
    PrototypeMismatch,
    #[error("truncated container: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("inconsistent model: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Proto(#[from] ProtoError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: size {size} is not a multiple of the {record}-byte record")]
    RecordSize { path: PathBuf, size: usize, record: usize },
    #[error("{path}: label {label} at record {index} is outside 0..{classes}")]
    LabelOutOfRange {
        path: PathBuf,
        index: usize,
        label: u8,
        classes: usize,
    },
    #[error("invalid dataset parameters: {0}")]
    Invalid(String),
}
