//! End-to-end batch driver, status reporting and household export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::mpsc::sync_channel;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::manifest::{Stage, TaskManifest, TaskState, Workspace};
use super::scheduler::SchedulerChoice;
use super::stages::{
    plan_batch, run_stage_integrate, run_stage_prestage, run_stage_process, FileResultStore,
    TaskFilter,
};
use super::workers::WorkerChoice;
use super::PipelineError;
use crate::domain::{PageClass, RegisterDocument, RegisterPage};
use crate::household::{export_csv, merge_register_with, HouseholdSet, MergeOptions};
use crate::iiif::{IiifEndpoint, RetryPolicy, Transport};
use crate::ingest::Registry;

/// Which stages a run drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSet {
    pub prestage: bool,
    pub process: bool,
    pub integrate: bool,
}

impl Default for StageSet {
    fn default() -> Self {
        Self {
            prestage: true,
            process: true,
            integrate: true,
        }
    }
}

impl FromStr for StageSet {
    type Err = String;

    /// Comma-separated subset of `pre`, `proc`, `post`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut set = StageSet {
            prestage: false,
            process: false,
            integrate: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "pre" | "prestage" => set.prestage = true,
                "proc" | "process" => set.process = true,
                "post" | "integrate" => set.integrate = true,
                other => return Err(format!("unknown stage {other:?}")),
            }
        }
        if !(set.prestage || set.process || set.integrate) {
            return Err("no stage selected".into());
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub stages: StageSet,
    /// Parallel downloads in the pre-stage.
    pub prestage_workers: usize,
    /// Tasks handed from stage to stage at a time.
    pub window: usize,
    pub retry_attempts: u32,
    pub retry_backoff_ms: u64,
    pub scheduler: SchedulerChoice,
    pub workers: WorkerChoice,
    pub merge: MergeOptions,
    pub filter: TaskFilter,
    /// Abort the run after this many checkpoints, as a crash would.
    #[serde(skip)]
    pub interrupt_after: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: StageSet::default(),
            prestage_workers: 14,
            window: 32,
            retry_attempts: 3,
            retry_backoff_ms: 200,
            scheduler: SchedulerChoice::default(),
            workers: WorkerChoice::default(),
            merge: MergeOptions::default(),
            filter: TaskFilter::default(),
            interrupt_after: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::ConfigInvalid(m));
        if self.prestage_workers == 0 {
            return bad("prestage_workers must be at least 1".into());
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.retry_attempts == 0 {
            return bad("retry_attempts must be at least 1".into());
        }
        if self.scheduler.parallelism() == 0 {
            return bad("scheduler needs at least one worker".into());
        }
        if !(self.stages.prestage || self.stages.process || self.stages.integrate) {
            return bad("no stage selected".into());
        }
        self.workers
            .validate()
            .map_err(PipelineError::ConfigInvalid)
    }

    pub fn process_retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.retry_attempts,
            base_backoff: Duration::from_millis(self.retry_backoff_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedTask {
    pub task_id: String,
    pub stage: Stage,
    pub reason: String,
    pub attempt: u32,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub planned: usize,
    /// Task count per state name; every state is listed.
    pub counts: BTreeMap<String, usize>,
    pub failed: Vec<FailedTask>,
    /// Mean time spent per stage by the tasks that went through it.
    pub mean_stage_seconds: BTreeMap<Stage, f64>,
    /// Every task is INTEGRATED or FAILED.
    pub complete: bool,
    pub registers: usize,
    pub households: usize,
    pub households_path: Option<PathBuf>,
}

impl BatchReport {
    pub fn from_manifests(manifests: &[TaskManifest]) -> Self {
        let mut counts: BTreeMap<String, usize> = [
            "PENDING",
            "STAGED",
            "PROCESSING",
            "PROCESSED",
            "INTEGRATED",
            "FAILED",
        ]
        .iter()
        .map(|s| (s.to_string(), 0))
        .collect();
        let mut failed = Vec::new();
        let mut stage_ms: BTreeMap<Stage, (u64, usize)> = BTreeMap::new();
        for m in manifests {
            *counts.entry(m.state.name().to_string()).or_default() += 1;
            if let TaskState::Failed {
                stage,
                reason,
                attempt,
            } = &m.state
            {
                failed.push(FailedTask {
                    task_id: m.task_id.clone(),
                    stage: *stage,
                    reason: reason.clone(),
                    attempt: *attempt,
                    detail: m.last_error.clone(),
                });
            }
            for (stage, ms) in &m.stage_ms {
                let e = stage_ms.entry(*stage).or_default();
                e.0 += ms;
                e.1 += 1;
            }
        }
        let mut registers: Vec<&str> = manifests
            .iter()
            .map(|m| m.image.register_id.as_str())
            .collect();
        registers.dedup();
        Self {
            planned: manifests.len(),
            counts,
            failed,
            mean_stage_seconds: stage_ms
                .into_iter()
                .map(|(s, (ms, n))| (s, ms as f64 / 1000.0 / n as f64))
                .collect(),
            complete: manifests.iter().all(|m| m.state.is_terminal()),
            registers: registers.len(),
            households: 0,
            households_path: None,
        }
    }

    pub fn count(&self, state: &str) -> usize {
        self.counts.get(state).copied().unwrap_or(0)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "tasks planned: {} in {} registers",
            self.planned, self.registers
        );
        for (state, n) in &self.counts {
            let _ = writeln!(out, "  {state:<11} {n}");
        }
        for (stage, s) in &self.mean_stage_seconds {
            let _ = writeln!(out, "mean {stage} time: {s:.3} s");
        }
        if !self.complete {
            let _ = writeln!(out, "batch incomplete: some tasks are not terminal");
        }
        if let Some(path) = &self.households_path {
            let _ = writeln!(
                out,
                "households: {} exported to {}",
                self.households,
                path.display()
            );
        }
        for f in &self.failed {
            let _ = write!(
                out,
                "FAILED {} at {} ({}, attempt {})",
                f.task_id, f.stage, f.reason, f.attempt
            );
            if let Some(d) = &f.detail {
                let _ = write!(out, ": {d}");
            }
            out.push('\n');
        }
        out
    }
}

/// Current status of every task in the workspace.
pub fn batch_status(ws: &Workspace) -> Result<BatchReport, PipelineError> {
    Ok(BatchReport::from_manifests(&ws.load_all_manifests()?))
}

/// Rebuilds the register documents from integrated results. Pages that
/// failed or are still in flight count as unreadable non-list pages.
pub fn register_documents(
    ws: &Workspace,
    manifests: &[TaskManifest],
) -> Result<Vec<RegisterDocument>, PipelineError> {
    let payloads: BTreeMap<String, _> = FileResultStore::read_records(&ws.store_path())?
        .into_iter()
        .map(|r| (r.task_id, r.payload))
        .collect();
    let mut by_register: BTreeMap<&str, Vec<&TaskManifest>> = BTreeMap::new();
    for m in manifests {
        by_register.entry(&m.image.register_id).or_default().push(m);
    }
    let mut docs = Vec::new();
    for (register_id, mut tasks) in by_register {
        tasks.sort_by_key(|m| m.image.sequence_index);
        let pages = tasks
            .iter()
            .map(|m| {
                match payloads
                    .get(&m.task_id)
                    .filter(|_| m.state == TaskState::Integrated)
                {
                    Some(p) => RegisterPage {
                        page_id: m.task_id.clone(),
                        class: p.page_class,
                        transcript: p.transcript(),
                    },
                    None => RegisterPage {
                        page_id: m.task_id.clone(),
                        class: PageClass::Other,
                        transcript: None,
                    },
                }
            })
            .collect();
        docs.push(RegisterDocument {
            register_id: register_id.to_string(),
            pages,
        });
    }
    Ok(docs)
}

/// Merges households per register and writes `exports/households.csv`.
pub fn export_households(
    ws: &Workspace,
    manifests: &[TaskManifest],
    merge: MergeOptions,
) -> Result<Vec<HouseholdSet>, PipelineError> {
    let sets = register_documents(ws, manifests)?
        .iter()
        .map(|doc| merge_register_with(doc, merge))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PipelineError::Export(e.to_string()))?;
    let mut csv = Vec::new();
    export_csv(&sets, &mut csv).map_err(|e| PipelineError::Export(e.to_string()))?;
    ws.write_atomic(&ws.households_path(), &csv)?;
    Ok(sets)
}

/// Plans the selection, then drives windows of tasks through the three
/// stages concurrently: while one window is integrated the next is being
/// processed and a third staged. Terminates once every window has passed
/// every enabled stage; a second call over a finished batch changes
/// nothing. Households are exported when the batch is complete.
pub fn run_batch(
    ws: &Arc<Workspace>,
    registry: &Registry,
    endpoint: &IiifEndpoint,
    transport: Arc<dyn Transport>,
    config: &PipelineConfig,
) -> Result<BatchReport, PipelineError> {
    config.validate()?;
    ws.interrupter().arm(config.interrupt_after);
    let result = drive(ws, registry, endpoint, transport, config);
    ws.interrupter().disarm();
    result
}

fn drive(
    ws: &Arc<Workspace>,
    registry: &Registry,
    endpoint: &IiifEndpoint,
    transport: Arc<dyn Transport>,
    config: &PipelineConfig,
) -> Result<BatchReport, PipelineError> {
    let planned = plan_batch(ws, registry, &config.filter)?;
    let ids: Vec<String> = planned.iter().map(|m| m.task_id.clone()).collect();
    let windows: Vec<Vec<String>> = ids.chunks(config.window).map(<[String]>::to_vec).collect();
    let scheduler = config.scheduler.build(Arc::clone(&transport));
    let workers = Arc::new(config.workers.build());
    let retry = config.process_retry();
    let mut store = FileResultStore::open(ws.store_path())?;
    let stages = config.stages;

    let (windows, transport, workers, scheduler, retry) =
        (&windows, &transport, &workers, &scheduler, &retry);
    let (pre, proc, post) = std::thread::scope(|s| {
        let (to_proc, from_pre) = sync_channel::<Vec<String>>(1);
        let (to_post, from_proc) = sync_channel::<Vec<String>>(1);
        let pre = s.spawn(move || -> Result<(), PipelineError> {
            for w in windows {
                if stages.prestage {
                    run_stage_prestage(
                        ws,
                        w,
                        endpoint,
                        transport.as_ref(),
                        config.prestage_workers,
                    )?;
                }
                if to_proc.send(w.clone()).is_err() {
                    break;
                }
            }
            drop(to_proc);
            Ok(())
        });
        let proc = s.spawn(move || -> Result<(), PipelineError> {
            for w in from_pre {
                if stages.process {
                    run_stage_process(ws, &w, workers, scheduler.as_ref(), retry)?;
                }
                if to_post.send(w).is_err() {
                    break;
                }
            }
            drop(to_post);
            Ok(())
        });
        let mut post = Ok(());
        for w in from_proc {
            if stages.integrate {
                if let Err(e) = run_stage_integrate(ws, &w, &mut store) {
                    post = Err(e);
                    break;
                }
            }
        }
        (pre.join(), proc.join(), post)
    });
    let mut first: Option<PipelineError> = None;
    for r in [
        pre.unwrap_or_else(|_| Err(PipelineError::Export("prestage thread panicked".into()))),
        proc.unwrap_or_else(|_| Err(PipelineError::Export("process thread panicked".into()))),
        post,
    ] {
        if let Err(e) = r {
            if first.is_none() || matches!(e, PipelineError::Interrupted) {
                first = Some(e);
            }
        }
    }
    if let Some(e) = first {
        return Err(e);
    }

    let manifests = ids
        .iter()
        .map(|id| ws.manifest(id))
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = BatchReport::from_manifests(&manifests);
    if stages.integrate && report.complete {
        let sets = export_households(ws, &manifests, config.merge)?;
        report.households = sets.iter().map(|s| s.households.len()).sum();
        report.households_path = Some(ws.households_path());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_sets_parse() {
        let s: StageSet = "pre,proc".parse().unwrap();
        assert!(s.prestage && s.process && !s.integrate);
        assert!("".parse::<StageSet>().is_err());
        assert!("pre,gpu".parse::<StageSet>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let c = PipelineConfig {
            window: 0,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(PipelineError::ConfigInvalid(_))));
        let c = PipelineConfig {
            retry_attempts: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let c: PipelineConfig = serde_json::from_str(r#"{"window": 8}"#).unwrap();
        assert_eq!(c.window, 8);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"windw": 8}"#).is_err());
    }
}
