use std::path::PathBuf;

use thiserror::Error;

use crate::graph::{BlockId, ValidationReport};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph:\n{0}")]
    Invalid(ValidationReport),

    #[error("feature level {0} out of range 1..=7")]
    LevelOutOfRange(i32),

    #[error("input resolution {resolution} underflows at level L{level} (floor({resolution}/2^{level}) = 0)")]
    ResolutionUnderflow { resolution: u32, level: u8 },

    #[error("input resolution {0} must be a positive even number")]
    OddResolution(u32),

    #[error("resampling factor alpha must be positive, got {0}")]
    BadAlpha(f64),

    #[error("width factor must be positive, got {0}")]
    BadWidthFactor(f64),

    #[error("repeat count must be >= 1, got {0}")]
    BadRepeat(u32),

    #[error("parent block {parent} (ordering {parent_ordering}) does not precede target {target} (ordering {target_ordering})")]
    NotPrecedes {
        parent: BlockId,
        parent_ordering: u32,
        target: BlockId,
        target_ordering: u32,
    },

    #[error("upsampling factor {0} is not a power of two")]
    NonPowerOfTwoUpsample(u32),

    #[error("resample stage {stage} ({name}): {detail}")]
    StageMismatch {
        stage: usize,
        name: &'static str,
        detail: String,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("block {block}: {detail}")]
    BadBlock { block: BlockId, detail: String },

    #[error("head: {0}")]
    Head(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("failed to load spec `{name}`: {detail}")]
    Load { name: String, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("search configuration: {0}")]
    SearchConfig(String),

    #[error("intermediate block at position {position} (L{level}) has no consumer and no output block at its level")]
    UnplaceableOrphan { position: usize, level: u8 },

    #[error("search budget must be at least 1")]
    EmptySearch,

    #[error("non-finite activation produced by {0}")]
    NonFinite(String),

    #[error("executor: {0}")]
    Exec(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
