mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use repo_review::acquisition::RemoteBase;
use repo_review::clock::{fixed_clock, Clock};
use repo_review::eval::{self, EvalError, ExperimentOptions, RunStatus, ANNOTATIONS_NAME};
use repo_review::gateway::{
    ChatProvider, HeuristicProvider, OpenAiCompatProvider, PriceTable, RecordingProvider, ReplayProvider,
};
use repo_review::orchestrator::{ProgressSink, StagePlan};
use repo_review::{parse_repo_url, plan_stages, run_review, ProgressEvent, ReviewMode, RunDeps, RunError, StageStatus};

use config::FileConfig;

const MODEL_ENV: &str = "PROVIDER_MODEL";
const FIXED_CLOCK_ENV: &str = "REPO_REVIEW_FIXED_CLOCK";
const REMOTE_BASE_ENV: &str = "REPO_REVIEW_REMOTE_BASE";

#[derive(Parser, Debug)]
#[command(name = "repo-review", version, about = "Local-first multi-stage repository review")]
struct Cli {
    /// Config file; defaults to ./repo-review.json when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Review a repository or pull request and write review.json and review.md.
    Review(ReviewArgs),
    /// Run the HTTP job service.
    Serve(ServeArgs),
    /// Run every repository under every mode and export an annotation sheet.
    Eval(EvalArgs),
    /// Aggregate an annotated sheet into metrics.csv, metrics.json and metrics.tex.
    Aggregate(AggregateArgs),
}

/// Provider selection shared by every command that runs reviews.
#[derive(Args, Debug, Clone)]
struct ProviderArgs {
    /// Model identifier sent to the provider and recorded in reports [default: $PROVIDER_MODEL].
    #[arg(long)]
    model: Option<String>,
    /// Serve model responses from a recorded transcript (JSONL).
    #[arg(long, conflicts_with = "offline")]
    replay: Option<PathBuf>,
    /// Append every model exchange to a transcript (JSONL).
    #[arg(long)]
    record: Option<PathBuf>,
    /// Use the built-in deterministic heuristic reviewer instead of a model.
    #[arg(long)]
    offline: bool,
    /// Clone from this base instead of https://github.com (URL or directory).
    #[arg(long, env = REMOTE_BASE_ENV)]
    remote_base: Option<String>,
    /// JSON price table for cost estimates.
    #[arg(long)]
    prices: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReviewArgs {
    /// https://github.com/OWNER/REPO, optionally ending in /pull/N.
    #[arg(required_unless_present = "show_prompts")]
    url: Option<String>,
    /// Pull request number; overrides one in the URL.
    #[arg(long)]
    pr: Option<u64>,
    /// full, single_agent, no_context or no_priority.
    #[arg(long)]
    mode: Option<String>,
    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Most files to review [default: 50].
    #[arg(long)]
    max_files: Option<usize>,
    /// Largest file to review, in KiB [default: 200].
    #[arg(long)]
    max_file_kb: Option<u64>,
    /// Extra exclusion glob; repeatable.
    #[arg(long = "exclude")]
    exclude: Vec<String>,
    /// Concurrent per-file reviews.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Keep the cloned checkout after the run.
    #[arg(long)]
    keep_workspace: bool,
    /// Print the embedded prompt templates and exit.
    #[arg(long)]
    show_prompts: bool,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Listen port [default: $PORT or 8080].
    #[arg(long)]
    port: Option<u16>,
    /// Listen address [default: 127.0.0.1].
    #[arg(long)]
    host: Option<String>,
    /// Per-job artifact directories go here [default: $ARTIFACT_ROOT or ./runs].
    #[arg(long)]
    artifact_root: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// One repository URL per line, `URL#N` for a pull request.
    #[arg(long)]
    repos: PathBuf,
    /// Comma-separated modes [default: full,single_agent].
    #[arg(long)]
    modes: Option<String>,
    /// Experiment directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory of transcripts to replay.
    #[arg(long)]
    replay_dir: Option<PathBuf>,
    /// Allow a non-empty output directory.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    /// Annotated sheet.
    #[arg(long)]
    annotations: PathBuf,
    /// Experiment directory holding runs.json.
    #[arg(long)]
    runs: PathBuf,
    /// Directory for the metrics files.
    #[arg(long)]
    out: PathBuf,
}

/// Exit status 2 for bad invocations, 1 for failures at run time.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = config::load(cli.config.as_deref())
        .map_err(Failure::Usage)
        .and_then(|cfg| match cli.command {
            Command::Review(a) => cmd_review(a, &cfg),
            Command::Serve(a) => cmd_serve(a, &cfg),
            Command::Eval(a) => cmd_eval(a, &cfg),
            Command::Aggregate(a) => cmd_aggregate(a),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

/// Prints `[k/n] stage: status` lines to stderr.
struct StderrProgress {
    plan: Option<StagePlan>,
}

fn status_word(s: StageStatus) -> &'static str {
    match s {
        StageStatus::Started => "started",
        StageStatus::Progress => "progress",
        StageStatus::Completed => "completed",
        StageStatus::Failed => "failed",
    }
}

impl ProgressSink for StderrProgress {
    fn emit(&self, e: &ProgressEvent) {
        let mut line = match &self.plan {
            Some(plan) => format!(
                "[{}/{}] {}: {}",
                plan.position(e.stage).unwrap_or(0),
                plan.stages().len(),
                e.stage,
                status_word(e.status)
            ),
            None => format!("[{}] {}: {}", e.job_id, e.stage, status_word(e.status)),
        };
        if let (Some(c), Some(t)) = (e.current, e.total) {
            line.push_str(&format!(" ({c}/{t})"));
        }
        if !e.detail.is_empty() {
            line.push(' ');
            line.push_str(&e.detail);
        }
        eprintln!("{line}");
    }
}

fn build_provider(args: &ProviderArgs, cfg: &FileConfig, replay_dir: Option<&Path>) -> Result<Arc<dyn ChatProvider>, Failure> {
    let replay = args.replay.clone().or_else(|| cfg.replay.clone());
    let offline = args.offline || cfg.offline.unwrap_or(false);
    if replay.is_some() && offline {
        return Err(usage("--replay and --offline are mutually exclusive"));
    }
    let inner: Arc<dyn ChatProvider> = if let Some(dir) = replay_dir {
        Arc::new(ReplayProvider::load_dir(dir).map_err(usage)?)
    } else if let Some(path) = replay {
        Arc::new(ReplayProvider::load(&path).map_err(usage)?)
    } else if offline {
        Arc::new(HeuristicProvider)
    } else {
        Arc::new(OpenAiCompatProvider::from_env().map_err(Failure::Usage)?)
    };
    match args.record.clone().or_else(|| cfg.record.clone()) {
        Some(path) => Ok(Arc::new(RecordingProvider::create(inner, &path).map_err(usage)?)),
        None => Ok(inner),
    }
}

/// Deps shared by every command that runs reviews.
fn base_deps(
    args: &ProviderArgs,
    cfg: &FileConfig,
    replay_dir: Option<&Path>,
    output_dir: PathBuf,
) -> Result<RunDeps, Failure> {
    let provider = build_provider(args, cfg, replay_dir)?;
    let model = args
        .model
        .clone()
        .or_else(|| cfg.model.clone())
        .or_else(|| std::env::var(MODEL_ENV).ok())
        .ok_or_else(|| usage(format!("no model id; pass --model or set {MODEL_ENV}")))?;
    if model.trim().is_empty() {
        return Err(usage("--model must be nonempty"));
    }
    let mut deps = RunDeps::new(provider, model, output_dir);
    if let Some(base) = args.remote_base.as_deref().or(cfg.remote_base.as_deref()) {
        deps.remote = RemoteBase::new(base);
    }
    if let Ok(t) = std::env::var(FIXED_CLOCK_ENV) {
        let clock: Arc<dyn Clock> = Arc::new(fixed_clock(&t).map_err(|e| usage(format!("{FIXED_CLOCK_ENV}: {e}")))?);
        deps.clock = clock;
    }
    if let Some(p) = args.prices.as_deref().or(cfg.prices.as_deref()) {
        deps.prices = PriceTable::load(p).map_err(usage)?;
    }
    Ok(deps)
}

fn parse_mode(s: &str) -> Result<ReviewMode, Failure> {
    s.parse::<ReviewMode>().map_err(usage)
}

fn cmd_review(a: ReviewArgs, cfg: &FileConfig) -> Result<(), Failure> {
    if a.show_prompts {
        let mut out = std::io::stdout().lock();
        for (name, text) in repo_review::prompt_templates() {
            writeln!(out, "=== {name} ===\n{text}\n").map_err(runtime)?;
        }
        return Ok(());
    }
    let url = a.url.as_deref().unwrap_or_default();
    if a.pr == Some(0) {
        return Err(usage("--pr must be a positive integer"));
    }
    let source = parse_repo_url(url, a.pr).map_err(usage)?;
    let mode = parse_mode(a.mode.as_deref().or(cfg.mode.as_deref()).unwrap_or("full"))?;
    let out = a.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));

    let mut deps = base_deps(&a.provider, cfg, None, out)?;
    if let Some(n) = a.max_files.or(cfg.max_files) {
        deps.selection.max_files = n;
    }
    if let Some(kb) = a.max_file_kb.or(cfg.max_file_kb) {
        deps.selection.max_file_bytes = kb.saturating_mul(1024);
    }
    let mut exclude = cfg.exclude.clone().unwrap_or_default();
    exclude.extend(a.exclude.iter().cloned());
    deps.selection.extra_exclude_globs = exclude;
    if let Some(p) = a.parallelism.or(cfg.parallelism) {
        if p == 0 {
            return Err(usage("--parallelism must be at least 1"));
        }
        deps.review_parallelism = p;
    }
    deps.keep_workspace = a.keep_workspace || cfg.keep_workspace.unwrap_or(false);
    deps.sink = Arc::new(StderrProgress {
        plan: Some(plan_stages(mode)),
    });

    match run_review(&source, mode, &deps) {
        Ok(outcome) => {
            println!("{}", outcome.artifacts.json.display());
            println!("{}", outcome.artifacts.markdown.display());
            Ok(())
        }
        Err(e @ (RunError::Selection(_) | RunError::Budget(_))) => Err(usage(e)),
        Err(e) => Err(runtime(e)),
    }
}

fn cmd_serve(a: ServeArgs, cfg: &FileConfig) -> Result<(), Failure> {
    let mut config = repo_review_server::ServiceConfig::from_env().map_err(Failure::Usage)?;
    if let Some(p) = a.port.or(cfg.port) {
        config.port = p;
    }
    if let Some(root) = a.artifact_root.clone().or_else(|| cfg.artifact_root.clone()) {
        config.artifact_root = root;
    }
    let host = a.host.clone().or_else(|| cfg.host.clone()).unwrap_or_else(|| "127.0.0.1".into());
    let base = base_deps(&a.provider, cfg, None, config.artifact_root.clone())?;
    let state = Arc::new(repo_review_server::AppState::new(base, config.clone()));

    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), config.port))
            .await
            .map_err(|e| runtime(format!("cannot listen on {host}:{}: {e}", config.port)))?;
        let addr = listener.local_addr().map_err(runtime)?;
        println!("http://{addr}");
        let _ = std::io::stdout().flush();
        eprintln!("serving on http://{addr}; artifacts under {}", config.artifact_root.display());
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            eprintln!("shutting down");
        };
        repo_review_server::serve(listener, state, shutdown).await.map_err(runtime)
    })?;
    // Do not wait on in-flight blocking review workers.
    rt.shutdown_background();
    Ok(())
}

fn eval_failure(e: EvalError) -> Failure {
    match e {
        EvalError::ReposFile { .. } | EvalError::NoRepos | EvalError::NoModes | EvalError::OutDirNotEmpty(_) => usage(e),
        _ => runtime(e),
    }
}

fn cmd_eval(a: EvalArgs, cfg: &FileConfig) -> Result<(), Failure> {
    if !a.repos.is_file() {
        return Err(usage(format!("repos file {} does not exist", a.repos.display())));
    }
    let repos = eval::read_repos_file(&a.repos).map_err(eval_failure)?;
    let modes = a
        .modes
        .as_deref()
        .or(cfg.modes.as_deref())
        .unwrap_or("full,single_agent")
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_mode)
        .collect::<Result<Vec<_>, _>>()?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| usage("--out is required"))?;
    let replay_dir = a.replay_dir.clone().or_else(|| cfg.replay_dir.clone());
    if let Some(d) = &replay_dir {
        if !d.is_dir() {
            return Err(usage(format!("replay directory {} does not exist", d.display())));
        }
    }
    let mut base = base_deps(&a.provider, cfg, replay_dir.as_deref(), out.clone())?;
    base.sink = Arc::new(StderrProgress { plan: None });

    let options = ExperimentOptions {
        out_dir: out.clone(),
        force: a.force,
    };
    let records = eval::run_experiment(&repos, &modes, &base, &options).map_err(eval_failure)?;
    let ok = records.iter().filter(|r| r.status == RunStatus::Ok).count();
    eprintln!("{} runs: {ok} ok, {} failed", records.len(), records.len() - ok);
    for r in records.iter().filter(|r| r.status == RunStatus::Failed) {
        eprintln!("  {}: {}", r.run_id, r.failure.as_deref().unwrap_or("failed"));
    }
    println!("{}", out.join(eval::RUNS_INDEX).display());
    if ok > 0 {
        let sheet = eval::export_annotation_sheet(&records, &out, &out.join(ANNOTATIONS_NAME)).map_err(runtime)?;
        println!("{}", sheet.display());
    }
    Ok(())
}

fn cmd_aggregate(a: AggregateArgs) -> Result<(), Failure> {
    if !a.annotations.is_file() {
        return Err(usage(format!("annotations file {} does not exist", a.annotations.display())));
    }
    if !a.runs.is_dir() {
        return Err(usage(format!("runs directory {} does not exist", a.runs.display())));
    }
    let table = eval::aggregate_files(&a.annotations, &a.runs).map_err(runtime)?;
    let paths = eval::export_metrics(&table, &a.out).map_err(runtime)?;
    println!("{}", paths.csv.display());
    println!("{}", paths.json.display());
    println!("{}", paths.tex.display());
    Ok(())
}
