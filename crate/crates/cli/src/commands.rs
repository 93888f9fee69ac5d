use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use log::info;
use serde_json::json;

use censusflow::domain::{write_fixture, PageClass, PageFixture};
use censusflow::iiif::{check_batch, write_results_csv, HttpTransport, IntegrityStatus, Transport};
use censusflow::ingest::{
    build_registry, import_csv, read_registry, read_resolutions, write_exceptions, write_registry,
    write_worklist, BuildOptions, ColumnMapping, Gazetteer, Registry, Resolutions,
};
use censusflow::metrics::{classification_report, evaluate_corpus};
use censusflow::pipeline::{
    batch_status, build_synthetic_corpus, export_households, plan_batch, run_batch, select_images,
    task_id_for, CorpusSpec, FileResultStore, PipelineConfig, PipelineError, SchedulerChoice,
    TaskFilter, WorkerChoice, Workspace,
};
use censusflow::simulate::{
    min_workers_for_deadline, parse_duration_secs, parse_stage_spec, report, simulate_mode,
    single_image_latency, Mode, SearchOptions, ServiceTime, SimError, StageModel,
};

use crate::config::{GlobalConfig, IngestSection};
use crate::{parse_workers, usage, Cli, Command, FilterArgs};

const DEFAULT_WORKSPACE: &str = "censusflow-work";

struct Ctx<'a> {
    config: &'a GlobalConfig,
    workspace: PathBuf,
    seed: u64,
    seed_given: bool,
    jobs: Option<usize>,
    dry_run: bool,
}

impl Ctx<'_> {
    fn cap(&self, n: usize) -> usize {
        self.jobs.map_or(n, |j| n.min(j)).max(1)
    }
}

/// Runs the selected subcommand. `Ok(false)` is an operational failure.
pub fn dispatch(cli: &Cli, config: &GlobalConfig) -> Result<bool> {
    let g = &cli.global;
    if g.jobs == Some(0) || config.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    let ctx = Ctx {
        config,
        workspace: g
            .workspace
            .clone()
            .or_else(|| config.workspace.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_WORKSPACE)),
        seed: g.seed.or(config.seed).unwrap_or(0),
        seed_given: g.seed.is_some() || config.seed.is_some(),
        jobs: g.jobs.or(config.jobs),
        dry_run: g.dry_run,
    };
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::CheckImages(a) => check_images(&ctx, a),
        Command::Plan(a) => plan(&ctx, a),
        Command::Run(a) => run(&ctx, a),
        Command::Status(a) => status(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Export(a) => export(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::GenFixtures(a) => gen_fixtures(&ctx, a),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_registry(path: &Path) -> Result<Registry> {
    read_registry(BufReader::new(open(path)?))
        .with_context(|| format!("reading registry {}", path.display()))
}

fn filter_from(args: &FilterArgs, base: &TaskFilter) -> TaskFilter {
    TaskFilter {
        year: args.year.or(base.year),
        register_id: args
            .register_id
            .clone()
            .or_else(|| base.register_id.clone()),
        commune_code: args
            .commune_code
            .clone()
            .or_else(|| base.commune_code.clone()),
        limit: args.limit.or(base.limit),
    }
}

fn ingest(ctx: &Ctx, a: &crate::IngestArgs) -> Result<bool> {
    let mapping_text = fs::read_to_string(&a.mapping)
        .with_context(|| format!("reading {}", a.mapping.display()))?;
    let mapping = ColumnMapping::parse(&mapping_text).map_err(usage)?;
    let imported = import_csv(open(&a.csv)?, &mapping)
        .with_context(|| format!("importing {}", a.csv.display()))?;
    let gazetteer = Gazetteer::from_csv(open(&a.gazetteer)?)
        .with_context(|| format!("reading gazetteer {}", a.gazetteer.display()))?;
    let resolutions = match &a.resolutions {
        Some(p) => {
            read_resolutions(open(p)?).with_context(|| format!("reading {}", p.display()))?
        }
        None => Resolutions::default(),
    };
    let section = &ctx.config.ingest;
    let matching = IngestSection {
        threshold: a.threshold.unwrap_or(section.threshold),
        auto_threshold: a.auto_threshold.unwrap_or(section.auto_threshold),
        department_hint: None,
    }
    .matching()
    .map_err(usage)?;
    let options = BuildOptions {
        department_hint: a
            .department
            .clone()
            .or_else(|| section.department_hint.clone()),
        matching,
    };
    let built = build_registry(&imported.rows, &gazetteer, &resolutions, &options)?;

    for d in &imported.diagnostics {
        info!("{d}");
    }
    println!(
        "rows: {}  registers: {}  images: {}  exceptions: {}  worklist: {}",
        imported.rows.len(),
        built.registry.registers.len(),
        built.registry.image_count(),
        built.exceptions.len(),
        built.worklist.len()
    );
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| ctx.workspace.join("registry"));
    let files = [
        out.join("registry.ndjson"),
        out.join("exceptions.csv"),
        out.join("worklist.csv"),
    ];
    if ctx.dry_run {
        for f in &files {
            println!("would write {}", f.display());
        }
        return Ok(true);
    }
    let mut buf = Vec::new();
    write_registry(&built.registry, &mut buf)?;
    write_file(&files[0], &buf)?;
    buf.clear();
    write_exceptions(&built.exceptions, &mut buf)?;
    write_file(&files[1], &buf)?;
    buf.clear();
    write_worklist(&built.worklist, &mut buf)?;
    write_file(&files[2], &buf)?;
    println!("registry written to {}", out.display());
    Ok(true)
}

fn check_images(ctx: &Ctx, a: &crate::CheckArgs) -> Result<bool> {
    let registry = load_registry(&a.registry)?;
    let endpoint = ctx
        .config
        .iiif
        .endpoint(a.endpoint.endpoint.as_deref(), a.endpoint.api)?;
    let concurrency = ctx.cap(a.concurrency.unwrap_or(ctx.config.iiif.concurrency));
    if concurrency == 0 {
        return Err(usage("--concurrency must be at least 1"));
    }
    let images: Vec<_> = registry.images().map(|(_, i)| i.clone()).collect();
    if ctx.dry_run {
        println!(
            "would check {} images at {} with {} concurrent requests",
            images.len(),
            endpoint.base_url(),
            concurrency
        );
        if let Some(first) = images.first() {
            println!(
                "first request: {}",
                endpoint.info_url(&first.iiif_identifier)?
            );
        }
        println!("would write {}", a.out.display());
        return Ok(true);
    }
    let results = check_batch(
        &endpoint,
        &images,
        &HttpTransport,
        concurrency,
        a.verify_image,
    );
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for r in &results {
        *tally
            .entry(format!("{:?}", r.status).to_uppercase())
            .or_default() += 1;
    }
    let mut buf = Vec::new();
    write_results_csv(&results, &mut buf)?;
    write_file(&a.out, &buf)?;
    let summary: Vec<String> = tally.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    println!("checked {} images  {}", results.len(), summary.join("  "));
    for r in results.iter().filter(|r| r.status != IntegrityStatus::Ok) {
        println!(
            "{:?} {} #{} {}: {}",
            r.status,
            r.image.register_id,
            r.image.sequence_index,
            r.image.iiif_identifier,
            r.detail
        );
    }
    if let Some(path) = &a.registry_out {
        let mut updated = registry.clone();
        let mut by_key: BTreeMap<(&str, usize), &censusflow::ingest::ImageRef> = BTreeMap::new();
        for r in &results {
            by_key.insert(
                (r.image.register_id.as_str(), r.image.sequence_index),
                &r.image,
            );
        }
        for reg in &mut updated.registers {
            for img in &mut reg.images {
                if let Some(checked) = by_key.get(&(img.register_id.as_str(), img.sequence_index)) {
                    *img = (*checked).clone();
                }
            }
        }
        let mut buf = Vec::new();
        write_registry(&updated, &mut buf)?;
        write_file(path, &buf)?;
    }
    Ok(results.iter().all(|r| r.status == IntegrityStatus::Ok))
}

fn plan(ctx: &Ctx, a: &crate::PlanArgs) -> Result<bool> {
    let registry = load_registry(&a.registry)?;
    let filter = filter_from(&a.filter, &ctx.config.pipeline.filter);
    if ctx.dry_run {
        let selected = select_images(&registry, &filter);
        if selected.is_empty() {
            return Err(PipelineError::EmptySelection.into());
        }
        println!(
            "would plan {} tasks in {}",
            selected.len(),
            ctx.workspace.display()
        );
        for image in &selected {
            println!(
                "  {}",
                task_id_for(&image.register_id, image.sequence_index)
            );
        }
        return Ok(true);
    }
    let ws = Workspace::open(&ctx.workspace)?;
    let tasks = plan_batch(&ws, &registry, &filter)?;
    let pending = tasks.iter().filter(|m| m.state.name() == "PENDING").count();
    println!(
        "planned {} tasks in {} ({} pending, {} already further along)",
        tasks.len(),
        ctx.workspace.display(),
        pending,
        tasks.len() - pending
    );
    Ok(true)
}

fn pipeline_config(ctx: &Ctx, a: &crate::RunArgs) -> Result<PipelineConfig> {
    let mut config = ctx.config.pipeline.clone();
    if let Some(stages) = a.stages {
        config.stages = stages;
    }
    if let Some(spec) = &a.workers {
        config.workers = parse_workers(spec, ctx.seed)?;
    } else if let (WorkerChoice::Mock { seed, .. }, true) = (&mut config.workers, ctx.seed_given) {
        *seed = ctx.seed;
    }
    if let Some(s) = a.scheduler {
        config.scheduler = s;
    }
    if let Some(w) = a.window {
        config.window = w;
    }
    if let Some(p) = a.prestage_workers {
        config.prestage_workers = p;
    }
    if let Some(r) = a.retry_attempts {
        config.retry_attempts = r;
    }
    if a.continue_across_gaps {
        config.merge.continue_across_gaps = true;
    }
    config.filter = filter_from(&a.filter, &config.filter);
    config.prestage_workers = ctx.cap(config.prestage_workers);
    config.scheduler = match config.scheduler {
        SchedulerChoice::Local { n } => SchedulerChoice::Local { n: ctx.cap(n) },
        SchedulerChoice::Simulated { nodes } => SchedulerChoice::Simulated {
            nodes: ctx.cap(nodes),
        },
    };
    config.interrupt_after = a.interrupt_after;
    config.validate()?;
    Ok(config)
}

fn describe_workers(w: &WorkerChoice) -> String {
    match w {
        WorkerChoice::Mock { seed, noise } => format!(
            "mock seed={seed} noise={} drop={} flip={}",
            noise.char_substitution, noise.entity_drop, noise.head_flip
        ),
        WorkerChoice::External {
            classify,
            recognize,
        } => {
            format!(
                "external classify={} recognize={}",
                classify.program, recognize.program
            )
        }
    }
}

fn run(ctx: &Ctx, a: &crate::RunArgs) -> Result<bool> {
    let config = pipeline_config(ctx, a)?;
    let registry = load_registry(&a.registry)?;
    let endpoint = ctx
        .config
        .iiif
        .endpoint(a.endpoint.endpoint.as_deref(), a.endpoint.api)?;
    let header = format!(
        "workspace: {}\nendpoint: {}\nworkers: {}\nscheduler: {}\nwindow: {}  prestage workers: {}  retry attempts: {}",
        ctx.workspace.display(),
        endpoint.base_url(),
        describe_workers(&config.workers),
        config.scheduler,
        config.window,
        config.prestage_workers,
        config.retry_attempts
    );
    if ctx.dry_run {
        let selected = select_images(&registry, &config.filter);
        if selected.is_empty() {
            return Err(PipelineError::EmptySelection.into());
        }
        println!("{header}");
        println!(
            "would run {} tasks through {:?}",
            selected.len(),
            config.stages
        );
        return Ok(true);
    }
    let ws = Arc::new(Workspace::open(&ctx.workspace)?);
    let transport: Arc<dyn Transport> = Arc::new(HttpTransport);
    let report = match run_batch(&ws, &registry, &endpoint, transport, &config) {
        Ok(r) => r,
        Err(PipelineError::Interrupted) => {
            eprintln!("run interrupted; rerun the same command to resume");
            return Ok(false);
        }
        Err(e) => return Err(e.into()),
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{header}");
        print!("{}", report.render_text());
    }
    Ok(report.failed.is_empty())
}

fn status(ctx: &Ctx, a: &crate::StatusArgs) -> Result<bool> {
    let root = a.batch.clone().unwrap_or_else(|| ctx.workspace.clone());
    if !root.join("manifests").is_dir() {
        return Err(usage(format!(
            "{} is not a workspace with planned tasks",
            root.display()
        )));
    }
    let report = batch_status(&Workspace::existing(&root))?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.render_text());
    }
    Ok(true)
}

fn read_class_pairs(path: &Path) -> Result<Vec<(PageClass, PageClass)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if line.trim().is_empty() || (i == 0 && cols.first() == Some(&"page")) {
            continue;
        }
        let [_, truth, pred] = cols.as_slice() else {
            bail!("{}:{}: expected page,truth,pred", path.display(), i + 1);
        };
        let parse = |s: &str| {
            s.parse::<PageClass>().map_err(|_| {
                anyhow::anyhow!("{}:{}: unknown page class {s:?}", path.display(), i + 1)
            })
        };
        pairs.push((parse(truth)?, parse(pred)?));
    }
    Ok(pairs)
}

fn evaluate(ctx: &Ctx, a: &crate::EvaluateArgs) -> Result<bool> {
    if ctx.dry_run {
        println!(
            "would compare {} against {}",
            a.pred.display(),
            a.truth.display()
        );
        return Ok(true);
    }
    let corpus = evaluate_corpus(&a.truth, &a.pred)?;
    let classes = match &a.classes {
        Some(p) => Some(classification_report(&read_class_pairs(p)?)),
        None => None,
    };
    if a.json {
        let doc = json!({ "transcription": corpus, "classification": classes });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        print!("{}", corpus.render_text());
        if let Some(c) = &classes {
            println!();
            print!("{}", c.render_text());
        }
    }
    Ok(true)
}

fn export(ctx: &Ctx, a: &crate::ExportArgs) -> Result<bool> {
    if !ctx.workspace.join("manifests").is_dir() {
        return Err(usage(format!(
            "{} is not a workspace with planned tasks",
            ctx.workspace.display()
        )));
    }
    let ws = Workspace::existing(&ctx.workspace);
    let manifests = ws.load_all_manifests()?;
    let mut merge = ctx.config.pipeline.merge;
    merge.continue_across_gaps |= a.continue_across_gaps;
    if ctx.dry_run {
        println!(
            "would export households of {} tasks to {}",
            manifests.len(),
            ws.households_path().display()
        );
        for (flag, path) in [
            ("households", &a.households),
            ("labels", &a.labels),
            ("fixtures", &a.fixtures),
        ] {
            if let Some(p) = path {
                println!("would write {flag} to {}", p.display());
            }
        }
        return Ok(true);
    }
    let sets = export_households(&ws, &manifests, merge)?;
    let households: usize = sets.iter().map(|s| s.households.len()).sum();
    println!("{households} households in {} registers", sets.len());
    if let Some(path) = &a.households {
        write_file(path, &fs::read(ws.households_path())?)?;
        println!("households written to {}", path.display());
    }
    if a.labels.is_some() || a.fixtures.is_some() {
        let records = FileResultStore::read_records(&ws.store_path())?;
        let mut labels = 0;
        let mut fixtures = 0;
        for r in &records {
            if let (Some(dir), Some(label)) = (&a.labels, &r.payload.label) {
                write_file(&dir.join(format!("{}.label", r.task_id)), label.as_bytes())?;
                labels += 1;
            }
            if let (Some(dir), Some(transcript)) = (&a.fixtures, r.payload.transcript()) {
                let text = write_fixture(&PageFixture {
                    class: Some(r.payload.page_class),
                    transcript,
                });
                write_file(&dir.join(format!("{}.txt", r.task_id)), text.as_bytes())?;
                fixtures += 1;
            }
        }
        if let Some(dir) = &a.labels {
            println!("{labels} labels written to {}", dir.display());
        }
        if let Some(dir) = &a.fixtures {
            println!("{fixtures} fixtures written to {}", dir.display());
        }
    }
    Ok(true)
}

fn service_family(spec: &str) -> Result<ServiceTime> {
    let (kind, params) = spec.split_once(':').unwrap_or((spec, ""));
    Ok(match kind {
        "deterministic" => ServiceTime::Deterministic { mean: 1.0 },
        "exponential" => ServiceTime::Exponential { mean: 1.0 },
        "lognormal" => {
            let cv = match params.strip_prefix("cv=") {
                Some(v) => v
                    .parse::<f64>()
                    .map_err(|_| usage(format!("bad cv in {spec:?}")))?,
                None if params.is_empty() => 0.5,
                None => return Err(usage(format!("unknown service parameter in {spec:?}"))),
            };
            ServiceTime::LogNormal { mean: 1.0, cv }
        }
        other => return Err(usage(format!("unknown service time family {other:?}"))),
    })
}

fn simulate(ctx: &Ctx, a: &crate::SimulateArgs) -> Result<bool> {
    let mut stages: Vec<StageModel> = Vec::new();
    let mut unknown = Vec::new();
    for (i, spec) in a.stages.iter().enumerate() {
        let (model, is_unknown) = parse_stage_spec(spec)?;
        if is_unknown {
            unknown.push(i);
        }
        stages.push(model);
    }
    if unknown.len() > 1 {
        return Err(usage("at most one stage may have `?` workers"));
    }
    if let Some(family) = &a.service {
        let family = service_family(family)?;
        for s in &mut stages {
            s.service = family.with_mean(s.service.mean());
        }
        for s in &stages {
            s.validate()?;
        }
    }
    let deadline = a.deadline.as_deref().map(parse_duration_secs).transpose()?;
    if !unknown.is_empty() && deadline.is_none() {
        return Err(usage("a `?` worker count needs --deadline"));
    }
    let modes = match a.mode.as_deref() {
        Some("both") => vec![Mode::Pipelined, Mode::Sequential],
        Some(m) => vec![m.parse::<Mode>()?],
        None => vec![ctx.config.simulate.mode.unwrap_or_default()],
    };
    let cap = a.cap.unwrap_or(ctx.config.simulate.cap);
    if ctx.dry_run {
        println!(
            "would simulate {} images, seed {}, modes {:?}",
            a.images, ctx.seed, modes
        );
        for (i, s) in stages.iter().enumerate() {
            let w = if unknown.contains(&i) {
                "?".to_string()
            } else {
                s.workers.to_string()
            };
            println!("  {} {:?} workers {}", s.name, s.service, w);
        }
        return Ok(true);
    }

    let mut ok = true;
    let mut docs = Vec::new();
    for mode in modes {
        let (solved, result, model) = match unknown.first() {
            Some(&u) => {
                let opts = SearchOptions {
                    seed: ctx.seed,
                    mode,
                    cap,
                };
                match min_workers_for_deadline(
                    a.images,
                    &stages,
                    u,
                    deadline.unwrap_or_default(),
                    &opts,
                ) {
                    Ok((c, r)) => {
                        let mut m = stages.clone();
                        m[u].workers = c;
                        (Some((m[u].name.clone(), c)), r, m)
                    }
                    Err(e @ SimError::Infeasible { .. }) => {
                        println!("mode {mode}: {e}");
                        docs.push(json!({ "mode": mode, "error": e.to_string() }));
                        ok = false;
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            None => (
                None,
                simulate_mode(a.images, &stages, ctx.seed, mode)?,
                stages.clone(),
            ),
        };
        let rep = report(&result, &model, deadline);
        if a.json {
            docs.push(json!({
                "mode": mode,
                "solved_stage": solved.as_ref().map(|(n, _)| n),
                "min_workers": solved.as_ref().map(|(_, c)| c),
                "report": rep,
            }));
        } else {
            if let Some((name, c)) = &solved {
                println!("minimum {name} workers: {c}");
            }
            print!("{}", rep.render_text());
            println!(
                "single-image latency: {:.1} s",
                single_image_latency(&model)
            );
            println!();
        }
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&docs)?);
    }
    Ok(ok)
}

fn gen_fixtures(ctx: &Ctx, a: &crate::GenArgs) -> Result<bool> {
    let defaults = CorpusSpec::default();
    let spec = CorpusSpec {
        seed: ctx.seed,
        registers: a.registers.unwrap_or(defaults.registers),
        list_pages: a.pages.unwrap_or(defaults.list_pages),
        front_page: !a.no_front,
        recap_page: !a.no_recap,
        profile: defaults.profile,
    };
    if ctx.dry_run {
        println!(
            "would write {} registers, {} images (seed {}) to {}",
            spec.registers,
            spec.images(),
            spec.seed,
            a.out.display()
        );
        return Ok(true);
    }
    let corpus = build_synthetic_corpus(&a.out, &spec).map_err(|e| match e {
        PipelineError::Corpus(m) => usage(m),
        other => other.into(),
    })?;
    println!(
        "corpus: {} registers, {} images, seed {}",
        corpus.registry.registers.len(),
        corpus.registry.image_count(),
        spec.seed
    );
    let root = &corpus.root;
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "registry:   {}",
        root.join("registry.ndjson").display()
    )?;
    writeln!(out, "endpoint:   {}", corpus.endpoint.base_url())?;
    writeln!(out, "truth:      {}", root.join("truth").display())?;
    writeln!(
        out,
        "households: {}",
        root.join("truth_households.csv").display()
    )?;
    Ok(true)
}
