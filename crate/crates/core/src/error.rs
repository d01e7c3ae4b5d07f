//! Error types for every pipeline stage.
//!
//! Each stage owns a narrow error enum; [`Error`] wraps them for the CLI,
//! which maps [`Error::kind`] onto exit codes.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed volume header: {0}")]
    MalformedHeader(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated input: need {needed} bytes, have {available}")]
    TruncatedInput { needed: usize, available: usize },
    #[error("invalid slicing axis {0} (expected 0, 1 or 2)")]
    InvalidAxis(usize),
    #[error("voxel count {actual} does not match dims {dims:?}")]
    DimMismatch { dims: [usize; 3], actual: usize },
    #[error("mask value {value} has no entry in the value map")]
    UnknownLabelValue { value: u16 },
    #[error("decode failure for {path}: {reason}")]
    DecodeFailure { path: PathBuf, reason: String },
    #[error("corpus contains no images")]
    EmptyCorpus,
    #[error("image {image} matches masks in conflicting layouts")]
    AmbiguousPairing { image: String },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("component has no pixels")]
    EmptyComponent,
    #[error("image area is zero")]
    ZeroAreaImage,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("taxonomy validation error: {0}")]
    Validation(String),
    #[error("fine label {0:?} is not in the taxonomy")]
    UnknownFineLabel(String),
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("annotation {annotation} uses label {label:?} which is not a canonical fine label")]
    UnharmonizedLabel { annotation: String, label: String },
    #[error("annotation {annotation} has bbox {bbox:?} outside image bounds {width}x{height}")]
    BoundsViolation {
        annotation: String,
        bbox: [f64; 4],
        width: u32,
        height: u32,
    },
    #[error("invalid COCO document: {0}")]
    InvalidDocument(String),
    #[error("failed to write {path}: {source}")]
    WriteFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum GroundingError {
    #[error("concept set is empty")]
    EmptyConceptSet,
    #[error("phrase {0:?} contains the separator")]
    SeparatorInPhrase(String),
    #[error("phrase {0:?} contains no word characters")]
    EmptyPhrase(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("inner dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("phrase {0} has an empty token span")]
    EmptySpan(usize),
    #[error("box matching is invalid: {0}")]
    UnmatchedBoxes(String),
    #[error("feature file: {0}")]
    FeatureFormat(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction image ids are not in the ground-truth id space: {0:?}")]
    IdSpaceMismatch(Vec<u64>),
    #[error("prediction references unknown category id {0}")]
    UnknownCategory(u64),
    #[error("invalid detection record: {0}")]
    InvalidDetection(String),
}

/// Coarse classification used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Ingest(IngestError::Io { .. }) => ErrorKind::Io,
            Error::Export(ExportError::WriteFailure { .. }) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    /// Stable machine-readable name of the error variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Ingest(e) => match e {
                IngestError::MalformedHeader(_) => "MalformedHeader",
                IngestError::UnsupportedDatatype(_) => "UnsupportedDatatype",
                IngestError::TruncatedInput { .. } => "TruncatedInput",
                IngestError::InvalidAxis(_) => "InvalidAxis",
                IngestError::DimMismatch { .. } => "DimMismatch",
                IngestError::UnknownLabelValue { .. } => "UnknownLabelValue",
                IngestError::DecodeFailure { .. } => "DecodeFailure",
                IngestError::EmptyCorpus => "EmptyCorpus",
                IngestError::AmbiguousPairing { .. } => "AmbiguousPairing",
                IngestError::Manifest(_) => "ManifestError",
                IngestError::Io { .. } => "IoError",
            },
            Error::Geometry(e) => match e {
                GeometryError::EmptyComponent => "EmptyComponent",
                GeometryError::ZeroAreaImage => "ZeroAreaImage",
            },
            Error::Taxonomy(e) => match e {
                TaxonomyError::Parse { .. } => "TaxonomyParse",
                TaxonomyError::Validation(_) => "TaxonomyValidation",
                TaxonomyError::UnknownFineLabel(_) => "UnknownFineLabel",
            },
            Error::Export(e) => match e {
                ExportError::UnharmonizedLabel { .. } => "UnharmonizedLabel",
                ExportError::BoundsViolation { .. } => "BoundsViolation",
                ExportError::InvalidDocument(_) => "InvalidDocument",
                ExportError::WriteFailure { .. } => "WriteFailure",
            },
            Error::Grounding(e) => match e {
                GroundingError::EmptyConceptSet => "EmptyConceptSet",
                GroundingError::SeparatorInPhrase(_) => "SeparatorInPhrase",
                GroundingError::EmptyPhrase(_) => "EmptyPhrase",
                GroundingError::ShapeMismatch(_) => "ShapeMismatch",
                GroundingError::DimMismatch { .. } => "DimMismatch",
                GroundingError::EmptySpan(_) => "EmptySpan",
                GroundingError::UnmatchedBoxes(_) => "UnmatchedBoxes",
                GroundingError::FeatureFormat(_) => "FeatureFormat",
            },
            Error::Eval(e) => match e {
                EvalError::IdSpaceMismatch(_) => "IdSpaceMismatch",
                EvalError::UnknownCategory(_) => "UnknownCategory",
                EvalError::InvalidDetection(_) => "InvalidDetection",
            },
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IoError",
            Error::Json { .. } => "JsonError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
