//! Staged execution of one review run.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::acquisition::{cleanup_workspace, clone_repository, AcquireError, RemoteBase, Workspace};
use crate::artifacts::{write_all, ArtifactError, ArtifactPaths};
use crate::clock::{Clock, SystemClock};
use crate::context::{collect_context_inputs, render_tree, synthesize_context, BudgetError, ContextBudget};
use crate::gateway::{estimate_cost, ChatProvider, Gateway, PriceTable, RetryPolicy};
use crate::github::{GithubClient, HttpGithubClient};
use crate::model::{
    ProgressEvent, RepoSource, ReviewComment, ReviewMode, ReviewReport, RunStats, SkipReason, SkippedFile, Stage,
    StageStatus, SCHEMA_VERSION,
};
use crate::priority::prioritize;
use crate::review::{build_combined_prompt, parse_combined, review_file, FileReview, ParseOutcome};
use crate::selection::{walk_repository, FileEntry, SelectionConfig, SelectionError, Selector};
use crate::summary::{fallback_summary, summarize};

/// Stages in execution order for one mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan(Vec<Stage>);

impl StagePlan {
    pub fn stages(&self) -> &[Stage] {
        &self.0
    }

    pub fn contains(&self, stage: Stage) -> bool {
        self.0.contains(&stage)
    }

    /// 1-based position of `stage`, for "[2/6] context" style progress lines.
    pub fn position(&self, stage: Stage) -> Option<usize> {
        self.0.iter().position(|&s| s == stage).map(|i| i + 1)
    }
}

pub fn plan_stages(mode: ReviewMode) -> StagePlan {
    use Stage::*;
    StagePlan(match mode {
        ReviewMode::Full => vec![Clone, Context, Review, Priority, Summary, Artifacts],
        ReviewMode::NoContext => vec![Clone, Review, Priority, Summary, Artifacts],
        ReviewMode::NoPriority => vec![Clone, Context, Review, Summary, Artifacts],
        ReviewMode::SingleAgent => vec![Clone, Review, Artifacts],
    })
}

/// Receives progress events in `seq` order. Panics inside a sink are caught
/// and ignored.
pub trait ProgressSink: Send + Sync {
    fn emit(&self, event: &ProgressEvent);
}

impl<F: Fn(&ProgressEvent) + Send + Sync> ProgressSink for F {
    fn emit(&self, event: &ProgressEvent) {
        self(event)
    }
}

pub struct NoopSink;

impl ProgressSink for NoopSink {
    fn emit(&self, _event: &ProgressEvent) {}
}

/// Collects every event; handy in tests and for `events.jsonl`.
#[derive(Default)]
pub struct CollectingSink(Mutex<Vec<ProgressEvent>>);

impl CollectingSink {
    pub fn events(&self) -> Vec<ProgressEvent> {
        self.0.lock().unwrap().clone()
    }
}

impl ProgressSink for CollectingSink {
    fn emit(&self, event: &ProgressEvent) {
        self.0.lock().unwrap().push(event.clone());
    }
}

/// Fans one event stream out to several sinks.
pub struct TeeSink(pub Vec<Arc<dyn ProgressSink>>);

impl ProgressSink for TeeSink {
    fn emit(&self, event: &ProgressEvent) {
        for s in &self.0 {
            emit_progress(&**s, event);
        }
    }
}

/// Delivers `event`, swallowing any panic raised by the sink.
pub fn emit_progress(sink: &dyn ProgressSink, event: &ProgressEvent) {
    if catch_unwind(AssertUnwindSafe(|| sink.emit(event))).is_err() {
        log::warn!("progress sink panicked on event {}; ignoring", event.seq);
    }
}

struct Emitter<'a> {
    job_id: &'a str,
    clock: &'a dyn Clock,
    sink: &'a dyn ProgressSink,
    seq: Mutex<u64>,
}

impl Emitter<'_> {
    fn emit(&self, stage: Stage, status: StageStatus, detail: impl Into<String>, progress: Option<(u64, u64)>) {
        let mut seq = self.seq.lock().unwrap();
        *seq += 1;
        let event = ProgressEvent {
            job_id: self.job_id.to_string(),
            seq: *seq,
            stage,
            status,
            detail: detail.into(),
            current: progress.map(|p| p.0),
            total: progress.map(|p| p.1),
            timestamp: self.clock.now(),
        };
        emit_progress(self.sink, &event);
    }
}

/// Everything a run needs besides the target and mode.
pub struct RunDeps {
    pub github: Arc<dyn GithubClient>,
    pub provider: Arc<dyn ChatProvider>,
    pub clock: Arc<dyn Clock>,
    pub workspace_parent: PathBuf,
    pub remote: RemoteBase,
    pub selection: SelectionConfig,
    pub budget: ContextBudget,
    pub output_dir: PathBuf,
    pub sink: Arc<dyn ProgressSink>,
    pub model_id: String,
    pub job_id: String,
    pub retry: RetryPolicy,
    pub prices: PriceTable,
    /// Concurrent per-file reviews; 1 means sequential.
    pub review_parallelism: usize,
    pub keep_workspace: bool,
    /// Prompt budget for single-agent mode; defaults to 4x the context budget.
    pub single_agent_chars: Option<usize>,
}

impl RunDeps {
    /// Defaults: GitHub over HTTP, system clock, temp-dir workspaces, random
    /// job id.
    pub fn new(provider: Arc<dyn ChatProvider>, model_id: impl Into<String>, output_dir: impl Into<PathBuf>) -> Self {
        RunDeps {
            github: Arc::new(HttpGithubClient::from_env()),
            provider,
            clock: Arc::new(SystemClock),
            workspace_parent: std::env::temp_dir().join("repo-review-workspaces"),
            remote: RemoteBase::default(),
            selection: SelectionConfig::default(),
            budget: ContextBudget::default(),
            output_dir: output_dir.into(),
            sink: Arc::new(NoopSink),
            model_id: model_id.into(),
            job_id: uuid::Uuid::new_v4().simple().to_string(),
            retry: RetryPolicy::default(),
            prices: PriceTable::default(),
            review_parallelism: 1,
            keep_workspace: false,
            single_agent_chars: None,
        }
    }

    /// Copy of these deps for another job writing to `output_dir`.
    pub fn for_job(&self, job_id: impl Into<String>, output_dir: impl Into<PathBuf>, sink: Arc<dyn ProgressSink>) -> Self {
        RunDeps {
            github: self.github.clone(),
            provider: self.provider.clone(),
            clock: self.clock.clone(),
            workspace_parent: self.workspace_parent.clone(),
            remote: self.remote.clone(),
            selection: self.selection.clone(),
            budget: self.budget,
            output_dir: output_dir.into(),
            sink,
            model_id: self.model_id.clone(),
            job_id: job_id.into(),
            retry: self.retry.clone(),
            prices: self.prices.clone(),
            review_parallelism: self.review_parallelism,
            keep_workspace: self.keep_workspace,
            single_agent_chars: self.single_agent_chars,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid selection config: {0}")]
    Selection(#[from] SelectionError),
    #[error("invalid context budget: {0}")]
    Budget(#[from] BudgetError),
    #[error("clone failed: {0}")]
    Clone(#[from] AcquireError),
    #[error("artifact write failed: {0}")]
    Artifacts(#[from] ArtifactError),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: ReviewReport,
    pub artifacts: ArtifactPaths,
}

struct WorkspaceGuard {
    ws: Workspace,
    keep: bool,
}

impl Drop for WorkspaceGuard {
    fn drop(&mut self) {
        if let Err(e) = cleanup_workspace(&self.ws, self.keep) {
            log::warn!("could not remove workspace {}: {e}", self.ws.root.display());
        }
    }
}

#[derive(Default)]
struct ReviewTally {
    parse_failures: u64,
    dropped: u64,
    coerced: u64,
    failures: u64,
}

impl ReviewTally {
    fn absorb(&mut self, outcome: &ParseOutcome, failed: bool) {
        self.parse_failures += u64::from(outcome.parse_failed);
        self.dropped += outcome.dropped;
        self.coerced += outcome.coerced;
        self.failures += u64::from(failed);
    }
}

fn review_files(
    files: &[FileEntry],
    context: Option<&crate::model::ContextSummary>,
    gateway: &Gateway,
    parallelism: usize,
    emitter: &Emitter<'_>,
) -> Vec<FileReview> {
    let total = files.len() as u64;
    let done = Mutex::new(0u64);
    let report = |file: &FileEntry, r: &FileReview| {
        let mut n = done.lock().unwrap();
        *n += 1;
        let detail = match &r.failure {
            Some(e) => format!("review failed for {}: {e}", file.path),
            None => format!("reviewed {}: {} finding(s)", file.path, r.outcome.comments.len()),
        };
        emitter.emit(Stage::Review, StageStatus::Progress, detail, Some((*n, total)));
    };

    if parallelism <= 1 || files.len() <= 1 {
        return files
            .iter()
            .map(|f| {
                let r = review_file(f, context, gateway);
                report(f, &r);
                r
            })
            .collect();
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<FileReview>>> = Mutex::new(vec![None; files.len()]);
    std::thread::scope(|scope| {
        for _ in 0..parallelism.min(files.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(f) = files.get(i) else { break };
                let r = review_file(f, context, gateway);
                report(f, &r);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    // Selection order, whatever the completion order was.
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every file reviewed"))
        .collect()
}

/// Runs every stage planned for `mode` and writes the artifacts.
///
/// Only a clone failure or an artifact write failure aborts the run; model
/// failures degrade to fallbacks recorded in the report's stats.
pub fn run_review(source: &RepoSource, mode: ReviewMode, deps: &RunDeps) -> Result<RunOutcome, RunError> {
    let selector = Selector::new(&deps.selection)?;
    deps.budget.validate()?;
    let clock = &*deps.clock;
    let started_at = clock.now();
    let plan = plan_stages(mode);
    let emitter = Emitter {
        job_id: &deps.job_id,
        clock,
        sink: &*deps.sink,
        seq: Mutex::new(0),
    };
    let gateway = Gateway::new(
        deps.provider.clone(),
        deps.clock.clone(),
        deps.retry.clone(),
        deps.model_id.clone(),
    );

    // clone
    emitter.emit(
        Stage::Clone,
        StageStatus::Started,
        format!("cloning {}", source.canonical_url()),
        None,
    );
    let ws = match clone_repository(
        source,
        &deps.workspace_parent,
        &deps.job_id,
        &deps.remote,
        &*deps.github,
    ) {
        Ok(ws) => ws,
        Err(e) => {
            emitter.emit(Stage::Clone, StageStatus::Failed, e.to_string(), None);
            return Err(e.into());
        }
    };
    let guard = WorkspaceGuard {
        ws,
        keep: deps.keep_workspace,
    };
    let selection = walk_repository(&guard.ws, &selector);
    let mut skipped: Vec<SkippedFile> = selection.skipped;
    let selected = selection.selected;
    emitter.emit(
        Stage::Clone,
        StageStatus::Completed,
        format!(
            "checked out {}; {} file(s) selected, {} skipped",
            guard.ws.head_commit,
            selected.len(),
            skipped.len()
        ),
        None,
    );

    let mut stats = RunStats::default();

    // context
    let mut context = None;
    if plan.contains(Stage::Context) {
        emitter.emit(Stage::Context, StageStatus::Started, "collecting repository context", None);
        let inputs = collect_context_inputs(&selected, &skipped, &deps.budget)?;
        let outcome = synthesize_context(&inputs, &gateway);
        stats.context_degraded = outcome.degraded;
        let detail = match &outcome.error {
            Some(e) => format!("using fallback context: {e}"),
            None => format!(
                "context synthesized from {} preview(s)",
                outcome.summary.preview_paths.len()
            ),
        };
        context = Some(outcome.summary);
        emitter.emit(Stage::Context, StageStatus::Completed, detail, None);
    }

    // review
    let mut tally = ReviewTally::default();
    let mut findings: Vec<ReviewComment>;
    let mut combined_summary: Option<String> = None;
    emitter.emit(
        Stage::Review,
        StageStatus::Started,
        format!("reviewing {} file(s)", selected.len()),
        Some((0, if mode == ReviewMode::SingleAgent { 1 } else { selected.len() as u64 })),
    );
    if mode == ReviewMode::SingleAgent {
        let budget = deps.single_agent_chars.unwrap_or(deps.budget.total_chars * 4);
        let paths: Vec<&str> = selected.iter().map(|f| f.path.as_str()).collect();
        let (tree, _) = render_tree(&paths, &skipped, &deps.budget);
        let (messages, included) = build_combined_prompt(&tree, &selected, budget);
        let mut reviewed: Vec<&FileEntry> = Vec::new();
        for (i, f) in selected.iter().enumerate() {
            if included.contains(&i) {
                reviewed.push(f);
            } else {
                skipped.push(SkippedFile {
                    path: f.path.clone(),
                    reason: SkipReason::OverFileLimit,
                });
            }
        }
        stats.files_reviewed = reviewed.len() as u64;
        let detail;
        match gateway.complete(messages, 4096) {
            Ok(resp) => {
                let (outcome, summary) = parse_combined(&resp.text, &reviewed);
                tally.absorb(&outcome, false);
                detail = format!("single call returned {} finding(s)", outcome.comments.len());
                findings = outcome.comments;
                combined_summary = summary;
            }
            Err(e) => {
                tally.failures += 1;
                detail = format!("single review call failed: {e}");
                findings = Vec::new();
            }
        }
        emitter.emit(Stage::Review, StageStatus::Progress, detail, Some((1, 1)));
    } else {
        let reviews = review_files(
            &selected,
            context.as_ref(),
            &gateway,
            deps.review_parallelism,
            &emitter,
        );
        stats.files_reviewed = selected.len() as u64;
        findings = Vec::new();
        for r in reviews {
            tally.absorb(&r.outcome, r.failure.is_some());
            findings.extend(r.outcome.comments);
        }
    }
    emitter.emit(
        Stage::Review,
        StageStatus::Completed,
        format!("{} finding(s) from {} file(s)", findings.len(), stats.files_reviewed),
        None,
    );

    // priority
    if plan.contains(Stage::Priority) {
        emitter.emit(Stage::Priority, StageStatus::Started, "deduplicating and ranking", None);
        let (ranked, removed) = prioritize(&findings);
        stats.duplicates_removed = removed as u64;
        findings = ranked;
        emitter.emit(
            Stage::Priority,
            StageStatus::Completed,
            format!("{} finding(s) kept, {removed} duplicate(s) removed", findings.len()),
            None,
        );
    }

    // summary
    let summary_text = if plan.contains(Stage::Summary) {
        emitter.emit(Stage::Summary, StageStatus::Started, "summarizing findings", None);
        let outcome = summarize(&findings, &skipped, context.as_ref(), &gateway);
        stats.summary_degraded = outcome.degraded;
        let detail = match &outcome.error {
            Some(e) => format!("using fallback summary: {e}"),
            None => "summary written".to_string(),
        };
        emitter.emit(Stage::Summary, StageStatus::Completed, detail, None);
        outcome.text
    } else {
        match combined_summary {
            Some(s) => s,
            None => {
                stats.summary_degraded = true;
                fallback_summary(&findings, &skipped)
            }
        }
    };

    let usage = gateway.usage();
    let cost = estimate_cost(usage.tokens_in, usage.tokens_out, &deps.model_id, &deps.prices);
    if let Some(w) = &cost.warning {
        log::warn!("{w}");
    }
    stats.files_skipped = skipped.len() as u64;
    stats.provider_calls = usage.calls;
    stats.tokens_in = usage.tokens_in;
    stats.tokens_out = usage.tokens_out;
    stats.retries = usage.retries;
    stats.est_cost_usd = cost.usd;
    stats.parse_failures = tally.parse_failures;
    stats.dropped_findings = tally.dropped;
    stats.coerced_fields = tally.coerced;
    stats.review_failures = tally.failures;
    let elapsed = clock.now() - started_at;
    stats.duration_s = (elapsed.num_milliseconds().max(0) as f64) / 1000.0;

    let report = ReviewReport {
        schema_version: SCHEMA_VERSION.to_string(),
        source: source.clone(),
        mode,
        model_id: deps.model_id.clone(),
        generated_at: clock.now(),
        context,
        findings,
        skipped,
        summary_text,
        stats,
    };

    // artifacts
    emitter.emit(
        Stage::Artifacts,
        StageStatus::Started,
        format!("writing artifacts to {}", deps.output_dir.display()),
        None,
    );
    match write_all(&report, &deps.output_dir) {
        Ok(paths) => {
            emitter.emit(
                Stage::Artifacts,
                StageStatus::Completed,
                format!("wrote {} and {}", paths.json.display(), paths.markdown.display()),
                None,
            );
            drop(guard);
            Ok(RunOutcome {
                report,
                artifacts: paths,
            })
        }
        Err(e) => {
            emitter.emit(Stage::Artifacts, StageStatus::Failed, e.to_string(), None);
            Err(e.into())
        }
    }
}
