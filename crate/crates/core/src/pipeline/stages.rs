//! Planning and the three pipeline stages.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::manifest::{task_id_for, Stage, TaskManifest, TaskState, Workspace};
use super::scheduler::{Job, JobContext, SchedulerAdapter};
use super::workers::{WorkerContext, WorkerError, WorkerSet};
use super::PipelineError;
use crate::domain::{validate_record, EntityTag, PageClass, PageTranscript, PersonRecord};
use crate::iiif::{
    check_integrity, fetch_full_image, IiifEndpoint, IntegrityStatus, RetryPolicy, Transport,
};
use crate::ingest::{ImageRef, Registry};
use crate::label_codec::{DecodeWarning, LabelCodec};

/// Which images of a registry to plan.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskFilter {
    pub year: Option<i32>,
    pub register_id: Option<String>,
    pub commune_code: Option<String>,
    pub limit: Option<usize>,
}

/// Images matched by `filter`, in (register, sequence) order. Touches no
/// file.
pub fn select_images<'a>(registry: &'a Registry, filter: &TaskFilter) -> Vec<&'a ImageRef> {
    let mut selected: Vec<_> = registry
        .images()
        .filter(|(m, _)| filter.year.is_none_or(|y| m.census_year == y))
        .filter(|(m, _)| {
            filter
                .register_id
                .as_ref()
                .is_none_or(|r| &m.register_id == r)
        })
        .filter(|(m, _)| {
            filter
                .commune_code
                .as_ref()
                .is_none_or(|c| &m.commune.code == c)
        })
        .map(|(_, image)| image)
        .collect();
    selected.sort_by(|a, b| {
        (&a.register_id, a.sequence_index).cmp(&(&b.register_id, b.sequence_index))
    });
    if let Some(limit) = filter.limit {
        selected.truncate(limit);
    }
    selected
}

/// One PENDING task per selected image, in (register, sequence) order.
/// Tasks that already have a manifest are returned as they are.
pub fn plan_batch(
    ws: &Workspace,
    registry: &Registry,
    filter: &TaskFilter,
) -> Result<Vec<TaskManifest>, PipelineError> {
    let selected = select_images(registry, filter);
    if selected.is_empty() {
        return Err(PipelineError::EmptySelection);
    }
    let mut out = Vec::with_capacity(selected.len());
    for image in selected {
        let id = task_id_for(&image.register_id, image.sequence_index);
        match ws.load_manifest(&id)? {
            Some(m) => out.push(m),
            None => {
                let mut m = TaskManifest::new(id, image.clone());
                ws.create_manifest(&mut m)?;
                out.push(m);
            }
        }
    }
    Ok(out)
}

/// Runs `f` over `ids` on up to `threads` threads, keeping input order.
/// Stops handing out work after the first error.
fn parallel_map<F>(ids: &[String], threads: usize, f: F) -> Result<Vec<TaskManifest>, PipelineError>
where
    F: Fn(&str) -> Result<TaskManifest, PipelineError> + Sync,
{
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<Result<TaskManifest, PipelineError>>>> =
        ids.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, ids.len().max(1)) {
            s.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(id) = ids.get(i) else { break };
                let r = f(id);
                if r.is_err() {
                    stop.store(true, Ordering::SeqCst);
                }
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    let mut out = Vec::with_capacity(ids.len());
    let mut first_err = None;
    for slot in slots {
        match slot.into_inner().unwrap() {
            Some(Ok(m)) => out.push(m),
            Some(Err(e)) => {
                // an interruption outranks ordinary failures
                let outranks = matches!(e, PipelineError::Interrupted)
                    && !matches!(first_err, Some(PipelineError::Interrupted));
                if first_err.is_none() || outranks {
                    first_err = Some(e);
                }
            }
            None => {}
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Fetches info.json and the full image of every PENDING task into
/// `staging/`. Tasks in other states are returned untouched.
pub fn run_stage_prestage(
    ws: &Workspace,
    task_ids: &[String],
    endpoint: &IiifEndpoint,
    transport: &dyn Transport,
    threads: usize,
) -> Result<Vec<TaskManifest>, PipelineError> {
    parallel_map(task_ids, threads, |id| {
        let mut m = ws.manifest(id)?;
        if m.state != TaskState::Pending {
            return Ok(m);
        }
        let start = Instant::now();
        let check = check_integrity(endpoint, &m.image, transport);
        let failure = match check.status {
            IntegrityStatus::Ok => {
                match fetch_full_image(
                    endpoint,
                    &m.image.iiif_identifier,
                    transport,
                    &std::thread::sleep,
                ) {
                    Ok(bytes) => {
                        let rel = Workspace::staging_rel(id);
                        ws.write_atomic(&ws.root().join(&rel), &bytes)?;
                        m.image = check.image;
                        m.staged_path = Some(rel);
                        m.stage_ms.insert(Stage::Prestage, elapsed_ms(start));
                        ws.transition(&mut m, TaskState::Staged)?;
                        return Ok(m);
                    }
                    Err((status, detail)) => (status, detail),
                }
            }
            other => (other, check.detail),
        };
        let reason = match failure.0 {
            IntegrityStatus::Missing => "missing",
            IntegrityStatus::Corrupt => "corrupt",
            _ => "transport_error",
        };
        m.last_error = Some(failure.1).filter(|d| !d.is_empty());
        m.stage_ms.insert(Stage::Prestage, elapsed_ms(start));
        ws.transition(
            &mut m,
            TaskState::failed(Stage::Prestage, reason, check.attempts.max(1)),
        )?;
        Ok(m)
    })
}

/// A field of a transcribed record, as stored in result JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub tag: EntityTag,
    pub text: String,
    pub is_head: bool,
}

/// Result JSON written by the process stage, one file per task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultPayload {
    pub task_id: String,
    pub register_id: String,
    pub sequence_index: usize,
    pub page_class: PageClass,
    /// Present exactly for LIST pages.
    pub records: Option<Vec<Vec<FieldEntry>>>,
    /// Raw recognizer output, for LIST pages.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub warnings: Vec<DecodeWarning>,
    /// Worker role to version tag.
    pub workers: BTreeMap<String, String>,
}

impl ResultPayload {
    pub fn records_from(transcript: &PageTranscript) -> Vec<Vec<FieldEntry>> {
        transcript
            .records
            .iter()
            .map(|r| {
                r.fields
                    .iter()
                    .map(|(tag, text)| FieldEntry {
                        tag: *tag,
                        text: text.clone(),
                        is_head: r.is_head,
                    })
                    .collect()
            })
            .collect()
    }

    pub fn transcript(&self) -> Option<PageTranscript> {
        let records = self.records.as_ref()?;
        Some(PageTranscript::new(
            self.task_id.clone(),
            self.sequence_index,
            records
                .iter()
                .map(|fields| {
                    PersonRecord::from_fields(fields.iter().map(|f| (f.tag, f.text.clone())))
                })
                .collect(),
        ))
    }

    /// Checks the payload invariants; the error names the first breach.
    pub fn validate(&self) -> Result<(), String> {
        match (&self.records, self.page_class) {
            (None, PageClass::List) => return Err("LIST page without records".into()),
            (Some(_), c) if c != PageClass::List => {
                return Err(format!("{c} page carries records"))
            }
            _ => {}
        }
        for (row, fields) in self.records.iter().flatten().enumerate() {
            if fields.is_empty() {
                return Err(format!("record {row} is empty"));
            }
            let tags: BTreeSet<EntityTag> = fields.iter().map(|f| f.tag).collect();
            if tags.len() != fields.len() {
                return Err(format!("record {row} repeats a tag"));
            }
            let head = tags.contains(&EntityTag::SurnameHead);
            if fields.iter().any(|f| f.is_head != head) {
                return Err(format!("record {row} has inconsistent is_head flags"));
            }
            let record = PersonRecord::from_fields(fields.iter().map(|f| (f.tag, f.text.clone())));
            if let Some(v) = validate_record(&record).first() {
                return Err(format!("record {row}: {v:?}"));
            }
        }
        Ok(())
    }
}

/// Retry policy of the process stage.
pub type ProcessRetry = RetryPolicy;

fn run_workers(
    m: &TaskManifest,
    image: &[u8],
    workers: &WorkerSet,
    ctx: &WorkerContext<'_>,
) -> Result<ResultPayload, WorkerError> {
    let class = workers.classifier.classify(image, ctx)?;
    let mut payload = ResultPayload {
        task_id: m.task_id.clone(),
        register_id: m.image.register_id.clone(),
        sequence_index: m.image.sequence_index,
        page_class: class,
        records: None,
        label: None,
        warnings: Vec::new(),
        workers: BTreeMap::from([("classifier".to_string(), workers.classifier.version())]),
    };
    if class == PageClass::List {
        let label = workers.recognizer.recognize(image, ctx)?;
        let report = LabelCodec::default().decode_lenient(label.as_str());
        payload.records = Some(ResultPayload::records_from(&report.transcript));
        payload.label = Some(label.text);
        payload.warnings = report.warnings;
        payload
            .workers
            .insert("recognizer".to_string(), workers.recognizer.version());
    }
    Ok(payload)
}

fn process_one(
    ws: &Workspace,
    id: &str,
    workers: &WorkerSet,
    retry: &ProcessRetry,
    job: &JobContext<'_>,
) -> Result<(), PipelineError> {
    let mut m = ws.manifest(id)?;
    if !matches!(m.state, TaskState::Staged | TaskState::Processing) {
        return Ok(());
    }
    let start = Instant::now();
    let staged = ws.root().join(
        m.staged_path
            .clone()
            .unwrap_or_else(|| Workspace::staging_rel(id)),
    );
    let image = match fs::read(&staged) {
        Ok(b) => b,
        Err(e) => {
            m.last_error = Some(e.to_string());
            return ws.transition(
                &mut m,
                TaskState::failed(Stage::Process, "missing_input", 1),
            );
        }
    };
    if m.state == TaskState::Staged {
        ws.transition(&mut m, TaskState::Processing)?;
    }
    let mut rng = rand::rng();
    let attempts = retry.max_attempts.max(1);
    for attempt in 1..=attempts {
        let ctx = WorkerContext {
            transport: job.transport,
            input_path: &staged,
            attempt,
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| run_workers(&m, &image, workers, &ctx)))
            .unwrap_or_else(|_| Err(WorkerError::Failed("worker panicked".into())));
        match outcome {
            Ok(payload) => {
                let rel = Workspace::result_rel(id);
                ws.write_atomic(&ws.root().join(&rel), &serde_json::to_vec_pretty(&payload)?)?;
                m.result_path = Some(rel);
                m.last_error = None;
                m.stage_ms.insert(Stage::Process, elapsed_ms(start));
                return ws.transition(&mut m, TaskState::Processed);
            }
            Err(e) => {
                log::warn!("{id}: attempt {attempt}/{attempts} failed: {e}");
                m.last_error = Some(e.to_string());
                if attempt < attempts {
                    std::thread::sleep(retry.jittered(attempt - 1, &mut rng));
                }
            }
        }
    }
    m.stage_ms.insert(Stage::Process, elapsed_ms(start));
    ws.transition(
        &mut m,
        TaskState::failed(Stage::Process, "worker_error", attempts),
    )
}

/// Classifies every STAGED (or interrupted PROCESSING) task and recognizes
/// LIST pages, through the scheduler. Other tasks are left alone.
pub fn run_stage_process(
    ws: &Arc<Workspace>,
    task_ids: &[String],
    workers: &Arc<WorkerSet>,
    scheduler: &dyn SchedulerAdapter,
    retry: &ProcessRetry,
) -> Result<Vec<TaskManifest>, PipelineError> {
    let error: Arc<Mutex<Option<PipelineError>>> = Arc::new(Mutex::new(None));
    let mut jobs: Vec<Job> = Vec::new();
    for id in task_ids {
        let state = ws.manifest(id)?.state;
        if !matches!(state, TaskState::Staged | TaskState::Processing) {
            continue;
        }
        let (ws, workers, error, id, retry) = (
            Arc::clone(ws),
            Arc::clone(workers),
            Arc::clone(&error),
            id.clone(),
            *retry,
        );
        jobs.push(Box::new(move |ctx: &JobContext<'_>| {
            if ws.interrupter().checkpoint().is_err() {
                error
                    .lock()
                    .unwrap()
                    .get_or_insert(PipelineError::Interrupted);
                return;
            }
            if let Err(e) = process_one(&ws, &id, &workers, &retry, ctx) {
                let mut slot = error.lock().unwrap();
                if slot.is_none() || matches!(e, PipelineError::Interrupted) {
                    *slot = Some(e);
                }
            }
        }));
    }
    if !jobs.is_empty() {
        let handle = scheduler.submit(Stage::Process, jobs);
        scheduler.wait(handle);
    }
    if let Some(e) = error.lock().unwrap().take() {
        return Err(e);
    }
    task_ids.iter().map(|id| ws.manifest(id)).collect()
}

/// Destination of integrated results. Inserting an existing key must not
/// happen; the integrator checks `contains` first.
pub trait ResultSink {
    fn contains(&self, task_id: &str) -> bool;
    fn insert(&mut self, task_id: &str, payload: &ResultPayload) -> Result<(), PipelineError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub task_id: String,
    pub payload: ResultPayload,
}

/// Append-only NDJSON store keyed by task id.
#[derive(Debug)]
pub struct FileResultStore {
    path: PathBuf,
    keys: BTreeSet<String>,
}

impl FileResultStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let path = path.into();
        let keys = Self::read_records(&path)?
            .into_iter()
            .map(|r| r.task_id)
            .collect();
        Ok(Self { path, keys })
    }

    pub fn read_records(path: &std::path::Path) -> Result<Vec<StoreRecord>, PipelineError> {
        let file = match fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl ResultSink for FileResultStore {
    fn contains(&self, task_id: &str) -> bool {
        self.keys.contains(task_id)
    }

    fn insert(&mut self, task_id: &str, payload: &ResultPayload) -> Result<(), PipelineError> {
        let mut line = serde_json::to_vec(&StoreRecord {
            task_id: task_id.to_string(),
            payload: payload.clone(),
        })?;
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        f.write_all(&line)?;
        self.keys.insert(task_id.to_string());
        Ok(())
    }
}

/// In-memory sink for tests.
#[derive(Debug, Default)]
pub struct MemoryResultStore {
    pub records: BTreeMap<String, ResultPayload>,
    pub inserts: usize,
}

impl ResultSink for MemoryResultStore {
    fn contains(&self, task_id: &str) -> bool {
        self.records.contains_key(task_id)
    }

    fn insert(&mut self, task_id: &str, payload: &ResultPayload) -> Result<(), PipelineError> {
        self.inserts += 1;
        self.records.insert(task_id.to_string(), payload.clone());
        Ok(())
    }
}

fn load_payload(ws: &Workspace, m: &TaskManifest) -> Result<ResultPayload, String> {
    let rel = m
        .result_path
        .clone()
        .unwrap_or_else(|| Workspace::result_rel(&m.task_id));
    let bytes = fs::read(ws.root().join(rel)).map_err(|e| e.to_string())?;
    let payload: ResultPayload = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
    if payload.task_id != m.task_id {
        return Err(format!("payload belongs to {}", payload.task_id));
    }
    payload.validate()?;
    Ok(payload)
}

/// Validates and stores the payload of every PROCESSED task. A task whose
/// key is already in the sink is marked INTEGRATED without a second insert.
pub fn run_stage_integrate(
    ws: &Workspace,
    task_ids: &[String],
    sink: &mut dyn ResultSink,
) -> Result<Vec<TaskManifest>, PipelineError> {
    let mut out = Vec::with_capacity(task_ids.len());
    for id in task_ids {
        let mut m = ws.manifest(id)?;
        if m.state != TaskState::Processed {
            out.push(m);
            continue;
        }
        let start = Instant::now();
        match load_payload(ws, &m) {
            Ok(payload) => {
                if !sink.contains(id) {
                    ws.checkpoint()?;
                    sink.insert(id, &payload)?;
                }
                m.stage_ms.insert(Stage::Integrate, elapsed_ms(start));
                ws.transition(&mut m, TaskState::Integrated)?;
            }
            Err(detail) => {
                m.last_error = Some(detail);
                m.stage_ms.insert(Stage::Integrate, elapsed_ms(start));
                ws.transition(&mut m, TaskState::failed(Stage::Integrate, "schema", 1))?;
            }
        }
        out.push(m);
    }
    Ok(out)
}
