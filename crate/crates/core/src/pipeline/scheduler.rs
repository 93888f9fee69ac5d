//! Job submission seam between the pipeline and whatever runs compute jobs.

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::manifest::Stage;
use super::workers::parse_params;
use crate::iiif::{NullTransport, Transport};

pub struct JobContext<'a> {
    pub stage: Stage,
    /// Network access granted to the node running the job.
    pub transport: &'a dyn Transport,
    pub node: usize,
}

pub type Job = Box<dyn FnOnce(&JobContext<'_>) + Send + 'static>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JobHandle(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobStatus {
    Running { completed: usize, total: usize },
    Finished { total: usize, panicked: usize },
    Unknown,
}

pub trait SchedulerAdapter: Send + Sync {
    fn name(&self) -> String;
    fn submit(&self, stage: Stage, jobs: Vec<Job>) -> JobHandle;
    fn poll(&self, handle: JobHandle) -> JobStatus;
    /// Number of jobs that may run at once.
    fn parallelism(&self) -> usize;

    /// Blocks until the batch is done.
    fn wait(&self, handle: JobHandle) -> JobStatus {
        loop {
            match self.poll(handle) {
                JobStatus::Running { .. } => {
                    std::thread::sleep(std::time::Duration::from_millis(1))
                }
                done => return done,
            }
        }
    }
}

#[derive(Debug, Default)]
struct Progress {
    completed: usize,
    total: usize,
    panicked: usize,
    finished: bool,
}

/// Fixed-size thread pool shared by both adapters. Each submission runs on
/// its own background thread with `threads` workers.
#[derive(Default)]
struct Pool {
    next: AtomicU64,
    state: Arc<(Mutex<HashMap<u64, Progress>>, Condvar)>,
}

impl Pool {
    fn run(
        &self,
        stage: Stage,
        jobs: Vec<Job>,
        threads: usize,
        transport: Arc<dyn Transport>,
    ) -> JobHandle {
        let id = self.next.fetch_add(1, Ordering::SeqCst);
        let total = jobs.len();
        self.state.0.lock().unwrap().insert(
            id,
            Progress {
                total,
                ..Progress::default()
            },
        );
        let state = Arc::clone(&self.state);
        let queue = Mutex::new(VecDeque::from(jobs));
        std::thread::spawn(move || {
            std::thread::scope(|s| {
                for node in 0..threads.clamp(1, total.max(1)) {
                    let (queue, state, transport) = (&queue, &state, &transport);
                    s.spawn(move || loop {
                        let Some(job) = queue.lock().unwrap().pop_front() else {
                            break;
                        };
                        let ctx = JobContext {
                            stage,
                            transport: transport.as_ref(),
                            node,
                        };
                        let ok = catch_unwind(AssertUnwindSafe(|| job(&ctx))).is_ok();
                        let mut map = state.0.lock().unwrap();
                        let p = map.get_mut(&id).expect("submitted");
                        p.completed += 1;
                        if !ok {
                            p.panicked += 1;
                        }
                        state.1.notify_all();
                    });
                }
            });
            let mut map = state.0.lock().unwrap();
            map.get_mut(&id).expect("submitted").finished = true;
            state.1.notify_all();
        });
        JobHandle(id)
    }

    fn poll(&self, handle: JobHandle) -> JobStatus {
        match self.state.0.lock().unwrap().get(&handle.0) {
            None => JobStatus::Unknown,
            Some(p) if p.finished => JobStatus::Finished {
                total: p.total,
                panicked: p.panicked,
            },
            Some(p) => JobStatus::Running {
                completed: p.completed,
                total: p.total,
            },
        }
    }

    fn wait(&self, handle: JobHandle) -> JobStatus {
        let (lock, cv) = &*self.state;
        let mut map = lock.lock().unwrap();
        loop {
            match map.get(&handle.0) {
                None => return JobStatus::Unknown,
                Some(p) if p.finished => {
                    return JobStatus::Finished {
                        total: p.total,
                        panicked: p.panicked,
                    }
                }
                Some(_) => map = cv.wait(map).unwrap(),
            }
        }
    }
}

/// Runs jobs in-process on `threads` workers with the given network access.
pub struct LocalExecutor {
    threads: usize,
    transport: Arc<dyn Transport>,
    pool: Pool,
}

impl LocalExecutor {
    pub fn new(threads: usize, transport: Arc<dyn Transport>) -> Self {
        Self {
            threads: threads.max(1),
            transport,
            pool: Pool::default(),
        }
    }
}

impl SchedulerAdapter for LocalExecutor {
    fn name(&self) -> String {
        format!("local:n={}", self.threads)
    }

    fn submit(&self, stage: Stage, jobs: Vec<Job>) -> JobHandle {
        self.pool
            .run(stage, jobs, self.threads, Arc::clone(&self.transport))
    }

    fn poll(&self, handle: JobHandle) -> JobStatus {
        self.pool.poll(handle)
    }

    fn parallelism(&self) -> usize {
        self.threads
    }

    fn wait(&self, handle: JobHandle) -> JobStatus {
        self.pool.wait(handle)
    }
}

/// Stand-in for a cluster batch system: a queue drained by `nodes` compute
/// nodes. Process-stage jobs run without network access unless
/// `compute_network` is set.
pub struct SimulatedBatchScheduler {
    nodes: usize,
    compute_network: bool,
    connected: Arc<dyn Transport>,
    pool: Pool,
    submissions: Mutex<Vec<(Stage, usize)>>,
}

impl SimulatedBatchScheduler {
    pub fn new(nodes: usize, connected: Arc<dyn Transport>) -> Self {
        Self {
            nodes: nodes.max(1),
            compute_network: false,
            connected,
            pool: Pool::default(),
            submissions: Mutex::new(Vec::new()),
        }
    }

    pub fn with_compute_network(mut self, allowed: bool) -> Self {
        self.compute_network = allowed;
        self
    }

    /// `(stage, job count)` of every submission so far.
    pub fn submissions(&self) -> Vec<(Stage, usize)> {
        self.submissions.lock().unwrap().clone()
    }
}

impl SchedulerAdapter for SimulatedBatchScheduler {
    fn name(&self) -> String {
        format!("simulated:nodes={}", self.nodes)
    }

    fn submit(&self, stage: Stage, jobs: Vec<Job>) -> JobHandle {
        self.submissions.lock().unwrap().push((stage, jobs.len()));
        let transport: Arc<dyn Transport> = if stage == Stage::Process && !self.compute_network {
            Arc::new(NullTransport)
        } else {
            Arc::clone(&self.connected)
        };
        self.pool.run(stage, jobs, self.nodes, transport)
    }

    fn poll(&self, handle: JobHandle) -> JobStatus {
        self.pool.poll(handle)
    }

    fn parallelism(&self) -> usize {
        self.nodes
    }

    fn wait(&self, handle: JobHandle) -> JobStatus {
        self.pool.wait(handle)
    }
}

/// Scheduler selection: `local:n=4` or `simulated:nodes=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SchedulerChoice {
    Local { n: usize },
    Simulated { nodes: usize },
}

impl Default for SchedulerChoice {
    fn default() -> Self {
        SchedulerChoice::Local { n: 4 }
    }
}

impl SchedulerChoice {
    pub fn build(&self, connected: Arc<dyn Transport>) -> Box<dyn SchedulerAdapter> {
        match *self {
            SchedulerChoice::Local { n } => Box::new(LocalExecutor::new(n, connected)),
            SchedulerChoice::Simulated { nodes } => {
                Box::new(SimulatedBatchScheduler::new(nodes, connected))
            }
        }
    }

    pub fn parallelism(&self) -> usize {
        match *self {
            SchedulerChoice::Local { n } => n,
            SchedulerChoice::Simulated { nodes } => nodes,
        }
    }
}

impl std::fmt::Display for SchedulerChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SchedulerChoice::Local { n } => write!(f, "local:n={n}"),
            SchedulerChoice::Simulated { nodes } => write!(f, "simulated:nodes={nodes}"),
        }
    }
}

impl FromStr for SchedulerChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, params) = s.split_once(':').unwrap_or((s, ""));
        let mut count = None;
        for (k, v) in parse_params(params)? {
            match (kind, k) {
                ("local", "n") | ("simulated", "nodes") => {
                    count = Some(
                        v.parse::<usize>()
                            .map_err(|_| format!("{k}: not an integer: {v:?}"))?,
                    )
                }
                _ => return Err(format!("unknown {kind} scheduler parameter {k:?}")),
            }
        }
        if count == Some(0) {
            return Err("scheduler needs at least one worker".into());
        }
        match kind {
            "local" => Ok(SchedulerChoice::Local {
                n: count.unwrap_or(4),
            }),
            "simulated" => Ok(SchedulerChoice::Simulated {
                nodes: count.unwrap_or(4),
            }),
            other => Err(format!("unknown scheduler {other:?}")),
        }
    }
}
