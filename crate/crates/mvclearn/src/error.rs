//! Crate-wide error type and the exit-code taxonomy used by the CLI.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // --- volume ---
    #[error("invalid window: lo ({lo}) must be strictly less than hi ({hi})")]
    InvalidWindow { lo: f64, hi: f64 },
    #[error("volume is already normalized; windowing expects raw HU values")]
    AlreadyNormalized,
    #[error("volume is not normalized; {op} expects normalized intensities")]
    NotNormalized { op: &'static str },
    #[error("volume spacing {spacing:?} is not isotropic at {expected} mm")]
    NotIsotropic { spacing: [f64; 3], expected: f64 },
    #[error("invalid spacing {spacing:?}: all components must be positive and finite")]
    InvalidSpacing { spacing: [f64; 3] },
    #[error("crop at center {center_mm:?} (side {side_mm} mm) has no overlap with the volume")]
    CropOutOfBounds { center_mm: [f64; 3], side_mm: f64 },
    #[error("invalid annotation: {reason}")]
    InvalidAnnotation { reason: String },

    // --- views ---
    #[error("unknown view plane id {id}; valid ids are 1..=9")]
    UnknownPlane { id: u8 },
    #[error("insufficient views: got {got}, contrastive pairing needs at least 2")]
    InsufficientViews { got: usize },

    // --- nn ---
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("numeric error in {context}: {reason}")]
    Numeric { context: &'static str, reason: String },
    #[error("invalid configuration: {reason}")]
    Config { reason: String },
    #[error("corrupt checkpoint {path}: {reason}")]
    CheckpointCorrupt { path: PathBuf, reason: String },
    #[error("checkpoint version mismatch in {path}: found {found}, expected {expected}")]
    CheckpointVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("epoch {epoch} out of range: schedule has {epochs} epochs")]
    EpochOutOfRange { epoch: usize, epochs: usize },

    // --- contrastive ---
    #[error("cosine similarity is undefined for a zero vector")]
    UndefinedSimilarity,
    #[error("no negative samples: as-written mode needs at least 2 lesions in the batch")]
    NoNegatives,
    #[error("wrong view arity: operation requires M = {expected}, batch has M = {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("invalid projection batch: {reason}")]
    BadBatch { reason: String },

    // --- data ---
    #[error("invalid rating {value}: ratings must lie in 1..=5")]
    InvalidRating { value: u8 },
    #[error("stratification error: {reason}")]
    Stratification { reason: String },
    #[error("bad manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },
    #[error("empty data set: {context}")]
    EmptyData { context: &'static str },

    // --- eval ---
    #[error("undefined metric: {reason}")]
    UndefinedMetric { reason: String },
    #[error("frozen-encoder violation: encoder parameters changed during linear evaluation")]
    FrozenViolation,
    #[error("plane mismatch: model has planes {model:?}, input has {input:?}")]
    PlaneMismatch { model: Vec<u8>, input: Vec<u8> },

    // --- pipeline ---
    #[error("missing view: lesion {lesion_id} has no view for plane {plane_id}")]
    MissingView { lesion_id: String, plane_id: u8 },
    #[error("duplicate lesion {lesion_id} in batch: a lesion cannot be its own negative")]
    DuplicateLesion { lesion_id: String },
    #[error("non-finite loss at epoch {epoch}, step {step}; similarity dump at {dump}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        dump: String,
    },

    // --- cli / io ---
    #[error("usage error: {reason}")]
    Usage { reason: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad file format {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 0 success, 1 usage, 2 data error, 3 numeric error.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Usage { .. } | Config { .. } => 1,
            Numeric { .. }
            | NonFiniteLoss { .. }
            | UndefinedSimilarity
            | NoNegatives
            | UndefinedMetric { .. } => 3,
            _ => 2,
        }
    }
}
