//! Case records: validation, file-backed persistence, seeded splits and
//! instruction-dataset export.

mod export;
mod split;
mod store;
mod types;

use std::path::PathBuf;

pub use export::{
    expected_output, export_instruction_dataset, import_instruction_dataset, ExportError,
    ExportOptions, ExportSummary, EXPORT_FORMAT_VERSION, ImageMode, ImportError, InstructionSample,
};
pub use split::{split_dataset, DatasetSplit, Partition, SplitError, SplitRatios};
pub use store::{CasePayload, CaseStore, ImagePayload, ImageSource, IngestSummary};
pub use types::{
    sha256_hex, validate_case_id, AthleteMetadata, CaseRecord, ClinicalAnnotation, ImageContent,
    ImageFormat, StateLabel, UnknownStateLabel, WaveformImage, MAX_AGE, MIN_AGE,
};

pub(crate) use types::encode_base64;

#[cfg(test)]
pub(crate) use crate::fixtures as testutil;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("case payload has no image")]
    MissingImage,
    #[error("image checksum mismatch: declared {declared}, computed {computed}")]
    ChecksumMismatch { declared: String, computed: String },
    #[error("invalid metadata field `{0}`")]
    InvalidMetadata(String),
    #[error("case id `{0}` already exists")]
    DuplicateCaseId(String),
    #[error("image is not a decodable PNG or JPEG")]
    UnsupportedImage,
    #[error("image declared as {declared:?} but content is {actual:?}")]
    FormatMismatch { declared: ImageFormat, actual: ImageFormat },
    #[error("no dataset split has been recorded in this store")]
    NoSplit,
    #[error("corrupt store entry {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
