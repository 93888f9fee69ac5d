//! `censusflow`: one binary, one subcommand per stage of the workflow.
//!
//! Exit codes: 0 success, 1 operational failure (failed tasks, unreachable
//! images, infeasible deadline), 2 usage or configuration error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use censusflow::pipeline::{SchedulerChoice, StageSet, WorkerChoice};

#[derive(Debug, Parser)]
#[command(
    name = "censusflow",
    version,
    about = "Census register processing toolkit"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Workspace root holding manifests, staging, results and exports.
    #[arg(long, short = 'w', global = true)]
    pub workspace: Option<PathBuf>,
    /// Seed for mock workers, sampling and jitter.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on threads used by any stage.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Print what would be done and write nothing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// More log output; repeat for more.
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Errors only.
    #[arg(long, short = 'q', global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the image registry from archive metadata.
    Ingest(IngestArgs),
    /// Check that every registry image is served by the IIIF endpoint.
    CheckImages(CheckArgs),
    /// Create PENDING task manifests for a selection of images.
    Plan(PlanArgs),
    /// Drive tasks through the pre, process and post stages.
    Run(RunArgs),
    /// Summarise task states in a workspace.
    Status(StatusArgs),
    /// Score predicted transcripts against ground truth.
    Evaluate(EvaluateArgs),
    /// Write households and labels from integrated results.
    Export(ExportArgs),
    /// Simulate batch throughput and size the compute stage.
    Simulate(SimulateArgs),
    /// Write a synthetic corpus with ground truth.
    GenFixtures(GenArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub csv: PathBuf,
    /// Column mapping, one `column=ROLE` per line.
    #[arg(long)]
    pub mapping: PathBuf,
    #[arg(long)]
    pub gazetteer: PathBuf,
    /// Manual `name,code` resolutions for ambiguous communes.
    #[arg(long)]
    pub resolutions: Option<PathBuf>,
    /// Department code used to break ties between communes.
    #[arg(long)]
    pub department: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub auto_threshold: Option<f64>,
    /// Output directory; defaults to `{workspace}/registry`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EndpointArgs {
    /// IIIF image service base URL (`http(s)://` or `file://`).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// IIIF Image API version, 2 or 3.
    #[arg(long)]
    pub api: Option<u8>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also download each full image.
    #[arg(long)]
    pub verify_image: bool,
    /// Write the registry with dimensions and verification flags filled in.
    #[arg(long)]
    pub registry_out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct FilterArgs {
    #[arg(long)]
    pub year: Option<i32>,
    #[arg(long = "register")]
    pub register_id: Option<String>,
    #[arg(long = "commune")]
    pub commune_code: Option<String>,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[command(flatten)]
    pub filter: FilterArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
    #[command(flatten)]
    pub filter: FilterArgs,
    /// Stages to run, e.g. `pre,proc,post`.
    #[arg(long)]
    pub stages: Option<StageSet>,
    /// `mock:seed=7,noise=0.1` or `external:classify=PROG,recognize=PROG`.
    #[arg(long)]
    pub workers: Option<String>,
    /// `local:n=4` or `simulated:nodes=4`.
    #[arg(long)]
    pub scheduler: Option<SchedulerChoice>,
    /// Tasks per window moving between stages.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub prestage_workers: Option<usize>,
    #[arg(long)]
    pub retry_attempts: Option<u32>,
    /// Let households continue across non-list pages when exporting.
    #[arg(long)]
    pub continue_across_gaps: bool,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
    /// Stop after this many state checkpoints, as if the process crashed.
    #[arg(long, hide = true)]
    pub interrupt_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatusArgs {
    /// Workspace of the batch; same as the global `--workspace`.
    #[arg(long)]
    pub batch: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of ground-truth page fixtures.
    #[arg(long)]
    pub truth: PathBuf,
    /// Directory of predicted page fixtures with matching names.
    #[arg(long)]
    pub pred: PathBuf,
    /// CSV of `page,truth,pred` page classes for a classification report.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Households CSV to write.
    #[arg(long)]
    pub households: Option<PathBuf>,
    /// Directory for one `{task_id}.label` per list page.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Directory for one `{task_id}.txt` fixture per list page.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long)]
    pub continue_across_gaps: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub images: usize,
    /// `name:seconds:workers`; workers `?` asks for the smallest count
    /// meeting `--deadline`.
    #[arg(long = "stage", required = true)]
    pub stages: Vec<String>,
    /// `8d`, `12h`, `30m`, `45s` or seconds.
    #[arg(long)]
    pub deadline: Option<String>,
    /// `pipelined`, `sequential` or `both`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Service time family: `deterministic`, `exponential` or `lognormal:cv=0.5`.
    #[arg(long)]
    pub service: Option<String>,
    /// Largest worker count tried when solving for `?`.
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub registers: Option<usize>,
    /// List pages per register.
    #[arg(long)]
    pub pages: Option<usize>,
    #[arg(long)]
    pub no_front: bool,
    #[arg(long)]
    pub no_recap: bool,
}

/// Error caused by the invocation rather than by the data; exits 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl fmt::Display) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.to_string()))
}

/// Parsed but not yet validated worker selection.
pub fn parse_workers(spec: &str, seed: u64) -> anyhow::Result<WorkerChoice> {
    let mut choice: WorkerChoice = spec.parse().map_err(usage)?;
    if let WorkerChoice::Mock { seed: s, .. } = &mut choice {
        if !spec.contains("seed=") {
            *s = seed;
        }
    }
    Ok(choice)
}

fn init_logging(global: &GlobalArgs, configured: Option<&str>) {
    let level = if global.quiet {
        "error"
    } else {
        match global.verbose {
            0 => configured.unwrap_or("warn"),
            1 => "info",
            2 => "debug",
            _ => "trace",
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let config = match config::load(cli.global.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    init_logging(&cli.global, config.verbosity.as_deref());
    match commands::dispatch(&cli, &config) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn is_usage(e: &anyhow::Error) -> bool {
    use censusflow::pipeline::PipelineError;
    use censusflow::simulate::SimError;
    e.chain().any(|c| {
        c.is::<UsageError>()
            || matches!(
                c.downcast_ref::<PipelineError>(),
                Some(PipelineError::ConfigInvalid(_) | PipelineError::EmptySelection)
            )
            || matches!(
                c.downcast_ref::<SimError>(),
                Some(SimError::InvalidModel(_))
            )
            || c.is::<censusflow::iiif::IiifError>()
    })
}
