use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while decoding or validating an EMB1/HED1 file or a CSV fixture.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: needed {needed} bytes at offset {offset}, {available} available")]
    TruncatedPayload {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value at element {0}")]
    NonFiniteValue(usize),
    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange { row: usize, label: u32, classes: usize },
    #[error("duplicate class name {0:?}")]
    DuplicateClassName(String),
    #[error("class name is not valid UTF-8")]
    InvalidUtf8,
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector cannot be normalized")]
    ZeroVector,
    #[error("row {0} is all zeros and cannot be normalized")]
    ZeroRow(usize),
    #[error("non-finite value at element {0}")]
    NonFiniteValue(usize),
    #[error("head has no rows")]
    EmptyHead,
    #[error("class name {0:?} already present in head")]
    DuplicateClassName(String),
    #[error("head state: {0}")]
    HeadState(String),
    #[error("no shots to aggregate")]
    EmptyShotSet,
    #[error("query class {0:?} has no matching head class")]
    UnmappableLabel(String),
    #[error("class {class:?} has {available} samples, {needed} needed")]
    InsufficientSamples {
        class: String,
        available: usize,
        needed: usize,
    },
    #[error("pool has {available} classes, {needed} needed")]
    InsufficientClasses { available: usize, needed: usize },
    #[error("quantile imprinting from scratch needs a reference head")]
    MissingReference,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid component count {k} for {rows}x{cols} input")]
    BadK { k: usize, rows: usize, cols: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("too few values: {got}, at least {needed} needed")]
    TooFewValues { got: usize, needed: usize },
    #[error("unsatisfiable synthetic spec: {0}")]
    UnsatisfiableSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("{}: {source}", path.display())]
    AtPath {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at(self, path: &Path) -> Self {
        Error::AtPath {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }

    /// The underlying error with any path context removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPath { source, .. } => source.root(),
            e => e,
        }
    }
}
