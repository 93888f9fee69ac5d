//! Discrete-event simulation of the staged pipeline as a tandem queue:
//! every image visits each stage once, each stage being a pool of identical
//! servers fed by a FIFO buffer.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(
        "no worker count up to {cap} meets the {deadline} s deadline (best makespan {best:.1} s)"
    )]
    Infeasible {
        cap: usize,
        deadline: f64,
        best: f64,
    },
}

/// Per-image service time of a stage, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ServiceTime {
    Deterministic {
        mean: f64,
    },
    Exponential {
        mean: f64,
    },
    /// Log-normal with the given mean and coefficient of variation.
    LogNormal {
        mean: f64,
        cv: f64,
    },
}

impl ServiceTime {
    pub fn mean(&self) -> f64 {
        match *self {
            ServiceTime::Deterministic { mean }
            | ServiceTime::Exponential { mean }
            | ServiceTime::LogNormal { mean, .. } => mean,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, ServiceTime::Deterministic { .. })
    }

    /// Same distribution family with another mean.
    pub fn with_mean(&self, mean: f64) -> Self {
        match *self {
            ServiceTime::Deterministic { .. } => ServiceTime::Deterministic { mean },
            ServiceTime::Exponential { .. } => ServiceTime::Exponential { mean },
            ServiceTime::LogNormal { cv, .. } => ServiceTime::LogNormal { mean, cv },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageModel {
    pub name: String,
    pub service: ServiceTime,
    pub workers: usize,
    /// Waiting room in front of the stage; `None` is unbounded. A finished
    /// image that finds the next buffer full keeps its server blocked.
    pub queue_capacity: Option<usize>,
}

impl StageModel {
    pub fn deterministic(name: impl Into<String>, seconds: f64, workers: usize) -> Self {
        Self {
            name: name.into(),
            service: ServiceTime::Deterministic { mean: seconds },
            workers,
            queue_capacity: None,
        }
    }

    /// Mean time per image at full parallelism.
    pub fn time_per_image(&self) -> f64 {
        self.service.mean() / self.workers as f64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidModel(m));
        let mean = self.service.mean();
        if !(mean.is_finite() && mean > 0.0) {
            return bad(format!(
                "stage {}: mean service time must be positive",
                self.name
            ));
        }
        if let ServiceTime::LogNormal { cv, .. } = self.service {
            if !(cv.is_finite() && cv >= 0.0) {
                return bad(format!("stage {}: cv must be non-negative", self.name));
            }
        }
        if self.workers == 0 {
            return bad(format!("stage {}: needs at least one worker", self.name));
        }
        Ok(())
    }
}

/// `name:seconds:workers`, where workers may be `?` for the count to solve.
/// Returns the model (workers 1 when unknown) and whether it was unknown.
pub fn parse_stage_spec(spec: &str) -> Result<(StageModel, bool), SimError> {
    let bad = || SimError::InvalidModel(format!("expected name:seconds:workers, got {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [name, time, workers] = parts.as_slice() else {
        return Err(bad());
    };
    if name.is_empty() {
        return Err(bad());
    }
    let seconds: f64 = time.parse().map_err(|_| bad())?;
    let (workers, unknown) = match *workers {
        "?" => (1, true),
        w => (w.parse::<usize>().map_err(|_| bad())?, false),
    };
    let model = StageModel::deterministic(*name, seconds, workers);
    model.validate()?;
    Ok((model, unknown))
}

/// Seconds from `8d`, `12h`, `30m`, `45s` or a bare number of seconds.
pub fn parse_duration_secs(text: &str) -> Result<f64, SimError> {
    let t = text.trim();
    let (num, unit) = match t.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => (&t[..i], c),
        _ => (t, 's'),
    };
    let scale = match unit {
        's' => 1.0,
        'm' => 60.0,
        'h' => 3600.0,
        'd' => SECONDS_PER_DAY,
        'w' => 7.0 * SECONDS_PER_DAY,
        _ => {
            return Err(SimError::InvalidModel(format!(
                "unknown duration unit in {text:?}"
            )))
        }
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| SimError::InvalidModel(format!("bad duration {text:?}")))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(SimError::InvalidModel(format!(
            "duration must be positive: {text:?}"
        )));
    }
    Ok(v * scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Images flow to the next stage as soon as they leave the previous one.
    #[default]
    Pipelined,
    /// Each stage starts only after the previous stage has finished the
    /// whole batch.
    Sequential,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pipelined => "pipelined",
            Mode::Sequential => "sequential",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub name: String,
    pub workers: usize,
    pub mean_service: f64,
    /// Share of server time spent serving, over the whole run.
    pub utilization: f64,
    /// Images completed per second of makespan.
    pub throughput: f64,
    pub max_queue: usize,
    pub entered: usize,
    pub completed: usize,
    /// Server time spent holding a finished image for a full buffer.
    pub blocked_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub n_images: usize,
    pub mode: Mode,
    pub seed: u64,
    pub makespan: f64,
    pub stages: Vec<StageStats>,
    pub entered: usize,
    pub left: usize,
}

impl SimResult {
    pub fn makespan_days(&self) -> f64 {
        self.makespan / SECONDS_PER_DAY
    }
}

/// `max_i n * t_i / c_i`: no schedule finishes faster.
pub fn bottleneck_bound(n_images: usize, stages: &[StageModel]) -> f64 {
    stages
        .iter()
        .map(|s| n_images as f64 * s.time_per_image())
        .fold(0.0, f64::max)
}

/// Time for one image to cross every stage.
pub fn single_image_latency(stages: &[StageModel]) -> f64 {
    stages.iter().map(|s| s.service.mean()).sum()
}

/// Index of the stage with the largest time per image; the first wins ties.
pub fn bottleneck(stages: &[StageModel]) -> Option<usize> {
    (0..stages.len()).reduce(|best, i| {
        if stages[i].time_per_image() > stages[best].time_per_image() {
            i
        } else {
            best
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    seq: u64,
    stage: usize,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (time, seq)
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

enum Sampler {
    Fixed(f64),
    Exp(Exp<f64>),
    LogNormal(LogNormal<f64>),
}

impl Sampler {
    fn new(s: &ServiceTime) -> Result<Self, SimError> {
        let err = |e: String| SimError::InvalidModel(e);
        Ok(match *s {
            ServiceTime::Deterministic { mean } => Sampler::Fixed(mean),
            ServiceTime::Exponential { mean } => {
                Sampler::Exp(Exp::new(1.0 / mean).map_err(|e| err(e.to_string()))?)
            }
            ServiceTime::LogNormal { mean, cv } => {
                let sigma2 = (1.0 + cv * cv).ln();
                let mu = mean.ln() - sigma2 / 2.0;
                Sampler::LogNormal(
                    LogNormal::new(mu, sigma2.sqrt()).map_err(|e| err(e.to_string()))?,
                )
            }
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Fixed(t) => *t,
            Sampler::Exp(d) => d.sample(rng),
            Sampler::LogNormal(d) => d.sample(rng),
        }
    }
}

#[derive(Default)]
struct StageState {
    /// Images waiting for a server, counted only.
    waiting: usize,
    busy: usize,
    /// Servers holding a finished image, with the time they blocked.
    blocked: VecDeque<f64>,
    busy_time: f64,
    blocked_time: f64,
    max_queue: usize,
    entered: usize,
    completed: usize,
}

struct Sim<'a> {
    stages: &'a [StageModel],
    samplers: Vec<Sampler>,
    state: Vec<StageState>,
    events: BinaryHeap<Event>,
    seq: u64,
    rng: ChaCha8Rng,
    left: usize,
}

impl Sim<'_> {
    /// An idle server takes an image directly, even with no waiting room.
    fn has_room(&self, i: usize) -> bool {
        let s = &self.state[i];
        self.stages[i]
            .queue_capacity
            .is_none_or(|cap| s.waiting < cap)
            || (s.waiting == 0 && s.busy < self.stages[i].workers)
    }

    /// Moves blocked images forward and starts service wherever possible,
    /// until nothing changes.
    fn settle(&mut self, now: f64) {
        loop {
            let mut changed = false;
            for i in (0..self.stages.len()).rev() {
                if i > 0 {
                    while !self.state[i - 1].blocked.is_empty() && self.has_room(i) {
                        let since = self.state[i - 1].blocked.pop_front().expect("non-empty");
                        self.state[i - 1].blocked_time += now - since;
                        self.state[i - 1].busy -= 1;
                        self.arrive(i);
                        changed = true;
                    }
                }
                while self.state[i].waiting > 0 && self.state[i].busy < self.stages[i].workers {
                    self.state[i].waiting -= 1;
                    self.state[i].busy += 1;
                    let service = self.samplers[i].sample(&mut self.rng);
                    self.state[i].busy_time += service;
                    self.seq += 1;
                    self.events.push(Event {
                        time: now + service,
                        seq: self.seq,
                        stage: i,
                    });
                    changed = true;
                }
            }
            if !changed {
                for st in &mut self.state {
                    st.max_queue = st.max_queue.max(st.waiting);
                }
                return;
            }
        }
    }

    fn arrive(&mut self, i: usize) {
        let s = &mut self.state[i];
        s.waiting += 1;
        s.entered += 1;
    }

    fn run(mut self, n_images: usize) -> (f64, Vec<StageState>, usize) {
        // the source holds every image; the first buffer is never full
        for _ in 0..n_images {
            self.arrive(0);
        }
        self.settle(0.0);
        let mut now = 0.0;
        while let Some(ev) = self.events.pop() {
            now = ev.time;
            let i = ev.stage;
            self.state[i].completed += 1;
            if i + 1 == self.stages.len() {
                self.state[i].busy -= 1;
                self.left += 1;
            } else if self.has_room(i + 1) {
                self.state[i].busy -= 1;
                self.arrive(i + 1);
            } else {
                self.state[i].blocked.push_back(now);
            }
            self.settle(now);
        }
        (now, self.state, self.left)
    }
}

fn validate(n_images: usize, stages: &[StageModel]) -> Result<(), SimError> {
    if n_images == 0 {
        return Err(SimError::InvalidModel("need at least one image".into()));
    }
    if stages.is_empty() {
        return Err(SimError::InvalidModel("need at least one stage".into()));
    }
    stages.iter().try_for_each(StageModel::validate)
}

fn run_pipelined(
    n_images: usize,
    stages: &[StageModel],
    rng: ChaCha8Rng,
) -> Result<(f64, Vec<StageState>, usize), SimError> {
    let sim = Sim {
        stages,
        samplers: stages
            .iter()
            .map(|s| Sampler::new(&s.service))
            .collect::<Result<_, _>>()?,
        state: stages.iter().map(|_| StageState::default()).collect(),
        events: BinaryHeap::new(),
        seq: 0,
        rng,
        left: 0,
    };
    Ok(sim.run(n_images))
}

pub fn simulate(n_images: usize, stages: &[StageModel], seed: u64) -> Result<SimResult, SimError> {
    simulate_mode(n_images, stages, seed, Mode::Pipelined)
}

/// Runs the tandem queue. Deterministic for a given seed.
pub fn simulate_mode(
    n_images: usize,
    stages: &[StageModel],
    seed: u64,
    mode: Mode,
) -> Result<SimResult, SimError> {
    validate(n_images, stages)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (makespan, states, left) = match mode {
        Mode::Pipelined => run_pipelined(n_images, stages, rng)?,
        Mode::Sequential => {
            let mut total = 0.0;
            let mut states = Vec::new();
            let mut left = n_images;
            for stage in stages {
                let (span, mut st, out) =
                    run_pipelined(n_images, std::slice::from_ref(stage), rng.clone())?;
                // advance the stream so stages draw different samples
                rng = ChaCha8Rng::seed_from_u64(rand::Rng::random(&mut rng));
                total += span;
                left = left.min(out);
                states.append(&mut st);
            }
            (total, states, left)
        }
    };
    let span = if makespan > 0.0 {
        makespan
    } else {
        f64::MIN_POSITIVE
    };
    let stats = stages
        .iter()
        .zip(states)
        .map(|(m, s)| StageStats {
            name: m.name.clone(),
            workers: m.workers,
            mean_service: m.service.mean(),
            utilization: (s.busy_time / (m.workers as f64 * span)).min(1.0),
            throughput: s.completed as f64 / span,
            max_queue: s.max_queue,
            entered: s.entered,
            completed: s.completed,
            blocked_time: s.blocked_time,
        })
        .collect();
    Ok(SimResult {
        n_images,
        mode,
        seed,
        makespan,
        stages: stats,
        entered: n_images,
        left,
    })
}

/// Runs independent configurations on separate threads.
pub fn simulate_many(
    n_images: usize,
    configs: &[Vec<StageModel>],
    seed: u64,
    mode: Mode,
) -> Vec<Result<SimResult, SimError>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| s.spawn(move || simulate_mode(n_images, c, seed, mode)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(SimError::InvalidModel("simulation panicked".into())))
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub seed: u64,
    pub mode: Mode,
    /// Largest worker count tried before giving up.
    pub cap: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Pipelined,
            cap: 4096,
        }
    }
}

/// Smallest worker count for stage `unknown` whose simulated makespan fits
/// the deadline. Relies on the makespan being non-increasing in the worker
/// count. With deterministic service times the bottleneck bound rules out
/// every count below `ceil(n * t / deadline)` without simulating it.
pub fn min_workers_for_deadline(
    n_images: usize,
    stages: &[StageModel],
    unknown: usize,
    deadline: f64,
    options: &SearchOptions,
) -> Result<(usize, SimResult), SimError> {
    if unknown >= stages.len() {
        return Err(SimError::InvalidModel(format!(
            "no stage {unknown} to solve for"
        )));
    }
    if !(deadline.is_finite() && deadline > 0.0) {
        return Err(SimError::InvalidModel("deadline must be positive".into()));
    }
    let mut model = stages.to_vec();
    model[unknown].workers = 1;
    validate(n_images, &model)?;
    let deterministic = model.iter().all(|s| s.service.is_deterministic());
    let infeasible = |best: f64| SimError::Infeasible {
        cap: options.cap,
        deadline,
        best,
    };
    if deterministic && single_image_latency(&model) > deadline {
        return Err(infeasible(single_image_latency(&model)));
    }
    // other stages may already rule the deadline out
    if deterministic {
        let others = bottleneck_bound(
            n_images,
            &model
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != unknown)
                .map(|(_, s)| s.clone())
                .collect::<Vec<_>>(),
        );
        if others > deadline {
            return Err(infeasible(others));
        }
    }

    let run = |c: usize| {
        let mut m = model.clone();
        m[unknown].workers = c;
        simulate_mode(n_images, &m, options.seed, options.mode)
    };
    let lo = if deterministic {
        ((n_images as f64 * model[unknown].service.mean() / deadline).ceil() as usize).max(1)
    } else {
        1
    };
    if lo > options.cap {
        return Err(infeasible(f64::INFINITY));
    }
    // gallop up to a feasible count
    let mut hi = lo;
    let mut fit = loop {
        let r = run(hi)?;
        if r.makespan <= deadline {
            break r;
        }
        if hi >= options.cap {
            return Err(infeasible(r.makespan));
        }
        hi = (hi * 2).min(options.cap);
    };
    let mut low = if hi == lo { lo } else { hi / 2 + 1 }.max(lo);
    while low < hi {
        let mid = low + (hi - low) / 2;
        let r = run(mid)?;
        if r.makespan <= deadline {
            hi = mid;
            fit = r;
        } else {
            low = mid + 1;
        }
    }
    Ok((hi, fit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub result: SimResult,
    pub bottleneck: String,
    pub bottleneck_index: usize,
    pub makespan_seconds: f64,
    pub makespan_days: f64,
    pub bound_seconds: f64,
    pub single_image_latency: f64,
    pub deadline_seconds: Option<f64>,
    pub meets_deadline: Option<bool>,
}

pub fn report(result: &SimResult, stages: &[StageModel], deadline: Option<f64>) -> CapacityReport {
    let b = bottleneck(stages).unwrap_or(0);
    CapacityReport {
        result: result.clone(),
        bottleneck: stages.get(b).map(|s| s.name.clone()).unwrap_or_default(),
        bottleneck_index: b,
        makespan_seconds: result.makespan,
        makespan_days: result.makespan_days(),
        bound_seconds: bottleneck_bound(result.n_images, stages),
        single_image_latency: single_image_latency(stages),
        deadline_seconds: deadline,
        meets_deadline: deadline.map(|d| result.makespan <= d),
    }
}

impl CapacityReport {
    pub fn render_text(&self) -> String {
        let r = &self.result;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "images: {}  mode: {}  seed: {}",
            r.n_images, r.mode, r.seed
        );
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>10} {:>12} {:>14} {:>10}",
            "stage", "workers", "service_s", "utilization", "throughput/s", "max_queue"
        );
        for s in &r.stages {
            let _ = writeln!(
                out,
                "{:<12} {:>8} {:>10.3} {:>12.4} {:>14.4} {:>10}",
                s.name, s.workers, s.mean_service, s.utilization, s.throughput, s.max_queue
            );
        }
        let _ = writeln!(out, "bottleneck: {}", self.bottleneck);
        let _ = writeln!(
            out,
            "makespan: {:.1} s ({:.2} days)",
            self.makespan_seconds, self.makespan_days
        );
        let _ = writeln!(out, "bottleneck bound: {:.1} s", self.bound_seconds);
        if let (Some(d), Some(ok)) = (self.deadline_seconds, self.meets_deadline) {
            let _ = writeln!(
                out,
                "deadline: {d:.1} s ({:.2} days): {}",
                d / SECONDS_PER_DAY,
                if ok { "met" } else { "missed" }
            );
        }
        out
    }
}

impl FromStr for Mode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pipelined" => Ok(Mode::Pipelined),
            "sequential" => Ok(Mode::Sequential),
            other => Err(SimError::InvalidModel(format!("unknown mode {other:?}"))),
        }
    }
}
