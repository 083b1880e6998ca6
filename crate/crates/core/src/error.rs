use std::path::PathBuf;

use crate::{BBoxId, ClassId, ImageId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("vector norm is below the zero threshold")]
    ZeroVector,

    #[error("fused query has (near) zero norm; text and visual queries are antipodal")]
    DegenerateQuery,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("embedding has {0} dimensions; at least 2 are required")]
    DimensionTooSmall(usize),

    #[error("embedding contains a non-finite value at position {0}")]
    NonFinite(usize),

    #[error("rank must be >= 1, got {0}")]
    InvalidRank(u64),

    #[error("image {0} has no patch scores")]
    EmptyGroup(ImageId),

    #[error("no embeddings were supplied")]
    EmptyInput,

    #[error("index holds no records")]
    EmptyIndex,

    #[error("nprobe must be in 1..={max}, got {got}")]
    InvalidNprobe { got: usize, max: usize },

    #[error("num_clusters must be in 1..={max}, got {got}")]
    InvalidClusterCount { got: usize, max: usize },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported file format: {0}")]
    FormatVersionMismatch(String),

    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("dangling reference: {0}")]
    DanglingReference(String),

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("bbox {bbox_id} on image {image_id} is empty or outside the image bounds")]
    OutOfBoundsBBox { bbox_id: BBoxId, image_id: ImageId },

    #[error("missing embedding for {0}")]
    MissingEmbedding(String),

    #[error("cannot split {images} images into {folds} folds")]
    TooFewImages { images: usize, folds: usize },

    #[error("class {0} has no instances in the training split")]
    ClassAbsentFromTrainSplit(ClassId),

    #[error("class {0} has no instances in the test split")]
    ClassAbsentFromTestSplit(ClassId),

    #[error("unknown class {0}")]
    UnknownClass(String),

    #[error("no positive images supplied")]
    NoPositives,

    #[error("candidate pool is empty")]
    EmptyPool,

    #[error("requested {requested} examples but the pool holds only {available}")]
    PoolTooSmall { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
