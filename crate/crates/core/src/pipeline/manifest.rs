//! Task manifests, the state machine they follow and the on-disk workspace
//! that holds them.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::ingest::ImageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prestage,
    Process,
    Integrate,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Prestage, Stage::Process, Stage::Integrate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prestage => "prestage",
            Stage::Process => "process",
            Stage::Integrate => "integrate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskState {
    Pending,
    Staged,
    Processing,
    Processed,
    Integrated,
    Failed {
        stage: Stage,
        reason: String,
        attempt: u32,
    },
}

impl TaskState {
    pub fn name(&self) -> &'static str {
        match self {
            TaskState::Pending => "PENDING",
            TaskState::Staged => "STAGED",
            TaskState::Processing => "PROCESSING",
            TaskState::Processed => "PROCESSED",
            TaskState::Integrated => "INTEGRATED",
            TaskState::Failed { .. } => "FAILED",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, TaskState::Integrated | TaskState::Failed { .. })
    }

    /// Edges of the task graph: the forward chain, plus FAILED from any
    /// active state.
    pub fn can_transition(&self, to: &TaskState) -> bool {
        use TaskState::*;
        match (self, to) {
            (Pending, Staged)
            | (Staged, Processing)
            | (Processing, Processed)
            | (Processed, Integrated) => true,
            (from, Failed { .. }) => !from.is_terminal(),
            _ => false,
        }
    }

    pub fn failed(stage: Stage, reason: impl Into<String>, attempt: u32) -> Self {
        TaskState::Failed {
            stage,
            reason: reason.into(),
            attempt,
        }
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskState::Failed {
                stage,
                reason,
                attempt,
            } => write!(f, "FAILED({stage}, {reason}, attempt {attempt})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateStamp {
    pub state: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub task_id: String,
    pub image: ImageRef,
    pub state: TaskState,
    /// Relative to the workspace root.
    pub staged_path: Option<PathBuf>,
    pub result_path: Option<PathBuf>,
    /// One stamp per state entered, non-decreasing in time.
    pub timestamps: Vec<StateStamp>,
    /// Wall time spent in each stage, milliseconds.
    #[serde(default)]
    pub stage_ms: BTreeMap<Stage, u64>,
    #[serde(default)]
    pub last_error: Option<String>,
}

impl TaskManifest {
    pub fn new(task_id: impl Into<String>, image: ImageRef) -> Self {
        Self {
            task_id: task_id.into(),
            image,
            state: TaskState::Pending,
            staged_path: None,
            result_path: None,
            timestamps: Vec::new(),
            stage_ms: BTreeMap::new(),
            last_error: None,
        }
    }
}

/// Task ids are `{register_id}-p{sequence:04}`, which keeps them file-name
/// safe and sorted like the images they stand for.
pub fn task_id_for(register_id: &str, sequence_index: usize) -> String {
    let clean: String = register_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{clean}-p{sequence_index:04}")
}

/// One line of `log/transitions.ndjson`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub task_id: String,
    pub from: Option<TaskState>,
    pub to: TaskState,
    pub at: DateTime<Utc>,
}

/// Fails every checkpoint after a fixed number have passed. Used to cut a
/// run short at a reproducible point, as a crash would.
#[derive(Debug)]
pub struct Interrupter {
    limit: AtomicUsize,
    count: AtomicUsize,
}

impl Default for Interrupter {
    fn default() -> Self {
        Self {
            limit: AtomicUsize::new(usize::MAX),
            count: AtomicUsize::new(0),
        }
    }
}

impl Interrupter {
    /// Restarts the count; with `Some(n)` the checkpoint after the first `n`
    /// fails.
    pub fn arm(&self, after: Option<usize>) {
        self.count.store(0, Ordering::SeqCst);
        self.limit
            .store(after.unwrap_or(usize::MAX), Ordering::SeqCst);
    }

    /// Lifts the limit and keeps the count.
    pub fn disarm(&self) {
        self.limit.store(usize::MAX, Ordering::SeqCst);
    }

    pub fn checkpoint(&self) -> Result<(), PipelineError> {
        if self.count.fetch_add(1, Ordering::SeqCst) >= self.limit.load(Ordering::SeqCst) {
            return Err(PipelineError::Interrupted);
        }
        Ok(())
    }

    /// Checkpoints reached since the last `arm`, including a failed one.
    pub fn checkpoints_passed(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }
}

/// Directory holding all coordination state of a batch:
/// `manifests/`, `staging/`, `results/`, `store/`, `log/` and `exports/`.
#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    log_lock: Mutex<()>,
    interrupter: Interrupter,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl Workspace {
    /// Opens a workspace, creating its directories.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let ws = Self::existing(root);
        for dir in ["manifests", "staging", "results", "store", "log", "exports"] {
            fs::create_dir_all(ws.root.join(dir))?;
        }
        Ok(ws)
    }

    /// Opens a workspace without touching the filesystem.
    pub fn existing(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            log_lock: Mutex::new(()),
            interrupter: Interrupter::default(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn interrupter(&self) -> &Interrupter {
        &self.interrupter
    }

    pub fn checkpoint(&self) -> Result<(), PipelineError> {
        self.interrupter.checkpoint()
    }

    pub fn manifest_path(&self, task_id: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{task_id}.json"))
    }

    pub fn staging_rel(task_id: &str) -> PathBuf {
        Path::new("staging").join(task_id).join("image.jpg")
    }

    pub fn result_rel(task_id: &str) -> PathBuf {
        Path::new("results").join(format!("{task_id}.json"))
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join("log").join("transitions.ndjson")
    }

    pub fn store_path(&self) -> PathBuf {
        self.root.join("store").join("results.ndjson")
    }

    pub fn households_path(&self) -> PathBuf {
        self.root.join("exports").join("households.csv")
    }

    /// Write-then-rename, behind a checkpoint.
    pub fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
        self.checkpoint()?;
        write_atomic(path, bytes)
    }

    pub fn load_manifest(&self, task_id: &str) -> Result<Option<TaskManifest>, PipelineError> {
        let path = self.manifest_path(task_id);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn manifest(&self, task_id: &str) -> Result<TaskManifest, PipelineError> {
        self.load_manifest(task_id)?
            .ok_or_else(|| PipelineError::UnknownTask(task_id.to_string()))
    }

    /// Every manifest, ordered by register then sequence index.
    pub fn load_all_manifests(&self) -> Result<Vec<TaskManifest>, PipelineError> {
        let dir = self.root.join("manifests");
        let mut out = Vec::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                out.push(serde_json::from_slice::<TaskManifest>(&fs::read(&path)?)?);
            }
        }
        out.sort_by(|a, b| {
            (&a.image.register_id, a.image.sequence_index)
                .cmp(&(&b.image.register_id, b.image.sequence_index))
        });
        Ok(out)
    }

    /// Creates the PENDING manifest of a new task.
    pub fn create_manifest(&self, manifest: &mut TaskManifest) -> Result<(), PipelineError> {
        self.record(manifest, None, TaskState::Pending)
    }

    /// Moves a task along the state graph: logs the transition, then
    /// persists the manifest.
    pub fn transition(
        &self,
        manifest: &mut TaskManifest,
        to: TaskState,
    ) -> Result<(), PipelineError> {
        if !manifest.state.can_transition(&to) {
            return Err(PipelineError::InvalidTransition {
                task_id: manifest.task_id.clone(),
                from: manifest.state.to_string(),
                to: to.to_string(),
            });
        }
        let from = manifest.state.clone();
        self.record(manifest, Some(from), to)
    }

    fn record(
        &self,
        manifest: &mut TaskManifest,
        from: Option<TaskState>,
        to: TaskState,
    ) -> Result<(), PipelineError> {
        self.checkpoint()?;
        let now = Utc::now();
        let at = manifest.timestamps.last().map_or(now, |s| s.at.max(now));
        let entry = LogEntry {
            task_id: manifest.task_id.clone(),
            from,
            to: to.clone(),
            at,
        };
        let mut line = serde_json::to_vec(&entry)?;
        line.push(b'\n');
        {
            let _guard = self.log_lock.lock().unwrap_or_else(|e| e.into_inner());
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.log_path())?;
            f.write_all(&line)?;
        }
        manifest.timestamps.push(StateStamp {
            state: to.name().to_string(),
            at,
        });
        manifest.state = to;
        write_atomic(
            &self.manifest_path(&manifest.task_id),
            &serde_json::to_vec_pretty(manifest)?,
        )
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}-{n}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplaySummary {
    pub entries: usize,
    pub tasks: usize,
    /// Final state per task according to the log.
    pub final_states: BTreeMap<String, TaskState>,
}

/// Replays a transition log and reports every entry that leaves the state
/// graph or does not continue from the task's previous state.
pub fn replay_log(path: &Path) -> Result<Result<ReplaySummary, Vec<String>>, PipelineError> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Ok(Ok(ReplaySummary::default()))
        }
        Err(e) => return Err(e.into()),
    };
    let mut current: HashMap<String, (TaskState, DateTime<Utc>)> = HashMap::new();
    let mut problems = Vec::new();
    let mut entries = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries += 1;
        let e: LogEntry = match serde_json::from_str(&line) {
            Ok(e) => e,
            Err(err) => {
                problems.push(format!("line {}: {err}", i + 1));
                continue;
            }
        };
        let prev = current.get(&e.task_id);
        match (&e.from, prev) {
            (None, None) if e.to == TaskState::Pending => {}
            (None, _) => problems.push(format!(
                "line {}: {} created twice or not as PENDING",
                i + 1,
                e.task_id
            )),
            (Some(_), None) => problems.push(format!(
                "line {}: {} moves before creation",
                i + 1,
                e.task_id
            )),
            (Some(from), Some((state, at))) => {
                if from != state {
                    problems.push(format!(
                        "line {}: {} leaves {from} but was {state}",
                        i + 1,
                        e.task_id
                    ));
                } else if !from.can_transition(&e.to) {
                    problems.push(format!(
                        "line {}: {} takes illegal edge {from} -> {}",
                        i + 1,
                        e.task_id,
                        e.to
                    ));
                }
                if e.at < *at {
                    problems.push(format!("line {}: {} goes back in time", i + 1, e.task_id));
                }
            }
        }
        current.insert(e.task_id.clone(), (e.to.clone(), e.at));
    }
    if !problems.is_empty() {
        return Ok(Err(problems));
    }
    Ok(Ok(ReplaySummary {
        entries,
        tasks: current.len(),
        final_states: current.into_iter().map(|(k, (s, _))| (k, s)).collect(),
    }))
}
