use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::EtfError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Etf(#[from] EtfError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest schema violation at {field}: {message}")]
    Schema { field: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("expected an f32 tensor")]
    NotF32,

    #[error("expected a u8 tensor")]
    NotU8,

    #[error("feature level {0} is missing")]
    MissingLevel(usize),

    #[error("memory bank is empty")]
    EmptyBank,

    #[error("bank holds {bank} vectors but the neighborhood needs {needed}")]
    BankTooSmall { bank: usize, needed: usize },

    #[error("input set is empty")]
    EmptyInput,

    #[error("manifest has no nominal entries")]
    NoNominal,

    #[error("manifest has no anomalous entries")]
    NoAnomalous,

    #[error("no defective patches survive mask selection")]
    EmptyPositiveSet,

    #[error("entry {0} has no mask")]
    MissingMask(String),

    #[error(
        "ratio mode requires a positive memory bank; rerun with mode \"negative_only\" \
         (e.g. --set mode=negative_only) to use the one-class fallback"
    )]
    MissingPositiveBank,

    #[error("bank file: bad magic")]
    BankMagic,

    #[error("bank file: version {found} is not supported (expected {expected})")]
    BankVersion { found: u16, expected: u16 },

    #[error("bank file: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    BankChecksum { stored: u32, computed: u32 },

    #[error("bank file: {0}")]
    BankFormat(String),

    #[error("auroc needs both classes (positives {positives}, negatives {negatives})")]
    SingleClass { positives: usize, negatives: usize },

    #[error("score is not a number")]
    NanScore,

    #[error("defect area {0:?} lies outside the grid")]
    DefectOutsideGrid([usize; 4]),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image {image_id}: {source}")]
    Image {
        image_id: String,
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

    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn for_image(self, image_id: &str) -> Self {
        Error::Image {
            image_id: image_id.to_string(),
            source: Box::new(self),
        }
    }
}
