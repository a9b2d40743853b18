use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Edge of the constraint pair graph, `(q, r) → (q, s)`, 1-based.
pub type PairEdge = ((usize, usize), (usize, usize));

#[derive(Debug, Error)]
pub enum Error {
    #[error("negative entry at flat index {index}")]
    NegativeEntry { index: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid range: need 0 < low < high, got [{low}, {high})")]
    InvalidRange { low: f64, high: f64 },

    #[error("model entry at ({row}, {col}) is negative or not finite")]
    NonPositiveModelEntry { row: usize, col: usize },

    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("index {index} out of range 1..={bound}")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("invalid constraint ({q}, {r}, {s}): indices must be pairwise distinct and 1-based")]
    InvalidTriple { q: usize, r: usize, s: usize },

    #[error("no constraints supplied")]
    NoConstraints,

    #[error("need {needed} distinct indices but the constrained axis has {available}")]
    InsufficientIndices { needed: usize, available: usize },

    #[error("could not order sampled indices into a satisfied chain after {attempts} attempts")]
    ChainGenerationFailed { attempts: usize },

    #[error("constraint graph has a cycle through edges {}", format_edges(.edges))]
    CycleDetected { edges: Vec<PairEdge> },

    #[error("exponent {arg} exceeds 700; rescale the input matrix")]
    Overflow { arg: f64 },

    #[error("mask has no observed entries")]
    EmptyMask,

    #[error("user {user} has no observed ratings")]
    NoObservedRatings { user: usize },

    #[error("k = {k} exceeds the number of points {points}")]
    TooFewPoints { k: usize, points: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged { line: usize, expected: usize, found: usize },

    #[error("line {line}, field {field}: not a number: {value:?}")]
    NonNumeric { line: usize, field: usize, value: String },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("too few observed entries ({observed}) for {folds} folds")]
    TooSparse { observed: usize, folds: usize },

    #[error("class {class} has {size} members, need at least {needed}")]
    ClassTooSmall { class: String, size: usize, needed: usize },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Display, found: impl std::fmt::Display) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// Usage-class errors map to exit code 2 in the CLI; everything else is a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::File { .. }
                | Error::Ragged { .. }
                | Error::NonNumeric { .. }
                | Error::Malformed { .. }
                | Error::InvalidConfig(_)
                | Error::InvalidTriple { .. }
                | Error::NegativeEntry { .. }
        )
    }
}

fn format_edges(edges: &[PairEdge]) -> String {
    edges
        .iter()
        .map(|((a, b), (c, d))| format!("({a},{b})->({c},{d})"))
        .collect::<Vec<_>>()
        .join(", ")
}
