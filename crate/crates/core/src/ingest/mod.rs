//! Archive metadata ingestion: CSV import under a column mapping, commune
//! resolution against a gazetteer and construction of the image registry.

mod gazetteer;
mod import;
mod normalize;
mod registry;

pub use gazetteer::{
    match_commune, Candidate, Gazetteer, GazetteerEntry, MatchConfig, MatchOutcome, MatchStatus,
};
pub use import::{import_csv, ColumnMapping, ColumnRole, ImportResult, RawRow, RowFlag};
pub use normalize::{name_similarity, normalize_name};
pub use registry::{
    build_registry, is_census_year, natural_cmp, read_registry, read_resolutions, register_id,
    write_exceptions, write_registry, write_worklist, BuildOptions, BuildOutput, ExceptionKind,
    ExceptionRecord, ImageRef, Register, RegisterMetadata, Registry, Resolutions, WorklistEntry,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("mapped column {0:?} is not in the CSV header")]
    MissingColumn(String),
    #[error("the CSV file has no data")]
    EmptyFile,
    #[error("invalid column mapping: {0}")]
    InvalidMapping(String),
    #[error("the gazetteer is empty")]
    EmptyGazetteer,
    #[error("invalid gazetteer: {0}")]
    InvalidGazetteer(String),
    #[error("invalid registry: {0}")]
    InvalidRegistry(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
