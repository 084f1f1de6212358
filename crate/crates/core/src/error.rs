use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: expected \"ETNS\"")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u8),
    #[error("unsupported rank {found}, expected {expected}")]
    BadRank { expected: u8, found: u8 },
    #[error("length mismatch: expected {expected} bytes, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("expected 17 keypoints, found {0}")]
    KeypointCount(usize),
    #[error("keypoint confidence {0} outside [0, 1]")]
    KeypointConfidence(f32),
    #[error("duplicate image_id {0:?}")]
    DuplicateImageId(String),
    #[error("{split} entry {image_id:?} is missing {field}")]
    MissingField {
        image_id: String,
        split: String,
        field: &'static str,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("band {part} spans rows [{start}, {end}) outside feature height {height}")]
    BandOutOfRange {
        part: usize,
        start: usize,
        end: usize,
        height: usize,
    },
    #[error("part count {parts} exceeds feature height {height}")]
    TooManyParts { parts: usize, height: usize },
    #[error("query has no visible part")]
    NoVisiblePart,
    #[error("no query has a valid gallery match")]
    NoValidQueries,
    #[error("matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("negative distance at ({0}, {1})")]
    NegativeDistance(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
