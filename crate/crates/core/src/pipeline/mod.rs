//! Three-stage batch processing: a connected pre-stage that stages images,
//! an isolated compute stage that classifies and transcribes them, and a
//! connected post-stage that integrates the results. Stages coordinate only
//! through files in a [`Workspace`], so any run can be interrupted and
//! resumed.

mod batch;
mod corpus;
mod manifest;
mod scheduler;
mod stages;
mod workers;

use thiserror::Error;

pub use batch::{
    batch_status, export_households, register_documents, run_batch, BatchReport, FailedTask,
    PipelineConfig, StageSet,
};
pub use corpus::{build_synthetic_corpus, CorpusSpec, SyntheticCorpus, MAPPING as CORPUS_MAPPING};
pub use manifest::{
    replay_log, task_id_for, Interrupter, LogEntry, ReplaySummary, Stage, StateStamp, TaskManifest,
    TaskState, Workspace,
};
pub use scheduler::{
    Job, JobContext, JobHandle, JobStatus, LocalExecutor, SchedulerAdapter, SchedulerChoice,
    SimulatedBatchScheduler,
};
pub use stages::{
    plan_batch, run_stage_integrate, run_stage_prestage, run_stage_process, select_images,
    FieldEntry, FileResultStore, MemoryResultStore, ProcessRetry, ResultPayload, ResultSink,
    StoreRecord, TaskFilter,
};
pub use workers::{
    apply_noise, mock_image_bytes, parse_mock_image, Classifier, ExternalCommand, MockClassifier,
    MockRecognizer, NoiseConfig, Recognizer, WorkerChoice, WorkerContext, WorkerError, WorkerSet,
    MOCK_IMAGE_MAGIC,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("selection matches no image")]
    EmptySelection,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("run interrupted")]
    Interrupted,
    #[error("task {task_id}: illegal transition {from} -> {to}")]
    InvalidTransition {
        task_id: String,
        from: String,
        to: String,
    },
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("export failed: {0}")]
    Export(String),
    #[error("synthetic corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Codec(#[from] crate::label_codec::CodecError),
    #[error(transparent)]
    Iiif(#[from] crate::iiif::IiifError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
