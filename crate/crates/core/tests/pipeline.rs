use std::path::Path;
use std::sync::{Arc, Mutex};

use repo_review::clock::ManualClock;
use repo_review::context::FALLBACK_PREFIX;
use repo_review::gateway::{ChatProvider, FailingProvider, FnProvider, HeuristicProvider, ProviderError};
use repo_review::github::{PullHead, StubGithubClient};
use repo_review::model::{ProgressEvent, ReviewMode, SkipReason, Stage, StageStatus};
use repo_review::orchestrator::{plan_stages, run_review, CollectingSink, StagePlan};
use repo_review::priority::rank_order;
use repo_review::review::CONTEXT_HEADING;
use repo_review::testkit::{demo_remote, fixed_time, hello_world_remote, offline_deps};
use repo_review::{parse_repo_url, validate_report, RunError};

struct Env {
    _tmp: tempfile::TempDir,
    remotes: std::path::PathBuf,
    work: std::path::PathBuf,
    root: std::path::PathBuf,
}

fn env() -> Env {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let remotes = root.join("remotes");
    let work = root.join("work");
    std::fs::create_dir_all(&remotes).unwrap();
    Env {
        _tmp: tmp,
        remotes,
        work,
        root,
    }
}

fn demo_source() -> repo_review::RepoSource {
    parse_repo_url("https://github.com/acme/demo", None).unwrap()
}

/// Checks started (progress)* (completed|failed) per stage, stages in plan
/// order, seq strictly increasing from 1.
fn assert_grammar(events: &[ProgressEvent], plan: &StagePlan) {
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1, "seq gap at {i}");
    }
    let mut stages = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let stage = events[i].stage;
        assert_eq!(events[i].status, StageStatus::Started, "stage {stage} must open with started");
        i += 1;
        while i < events.len() && events[i].stage == stage && events[i].status == StageStatus::Progress {
            i += 1;
        }
        assert!(i < events.len(), "stage {stage} never finished");
        assert_eq!(events[i].stage, stage);
        assert!(matches!(events[i].status, StageStatus::Completed | StageStatus::Failed));
        stages.push(stage);
        i += 1;
    }
    assert_eq!(stages, plan.stages());
}

#[test]
fn full_mode_on_demo_fixture() {
    let env = env();
    demo_remote(&env.remotes);
    let sink = Arc::new(CollectingSink::default());
    let mut deps = offline_deps(&env.remotes, &env.work, &env.root.join("out"), Arc::new(HeuristicProvider));
    deps.sink = sink.clone();
    let outcome = run_review(&demo_source(), ReviewMode::Full, &deps).unwrap();
    let report = &outcome.report;

    assert_eq!(validate_report(report), Ok(()));
    assert!(outcome.artifacts.json.exists() && outcome.artifacts.markdown.exists());
    assert!(!report.findings.is_empty());
    assert!(report.context.is_some());
    assert!(report.findings.windows(2).all(|w| rank_order(&w[0], &w[1]).is_le()));
    let reason = |p: &str| report.skipped.iter().find(|s| s.path == p).map(|s| s.reason);
    assert_eq!(reason("assets/logo.png"), Some(SkipReason::Binary));
    assert_eq!(reason("data/seed.sql"), Some(SkipReason::Oversized));
    assert_eq!(reason("package-lock.json"), Some(SkipReason::Generated));
    assert_eq!(report.stats.files_reviewed, 5);
    assert_eq!(report.stats.provider_calls, 2 + report.stats.files_reviewed);
    assert_eq!(report.stats.files_skipped, report.skipped.len() as u64);
    assert_eq!(report.generated_at, fixed_time());
    // The hard-coded password outranks everything.
    assert_eq!(report.findings[0].file, "src/app.py");
    assert_eq!(report.findings[0].line, 5);

    let events = sink.events();
    assert_grammar(&events, &plan_stages(ReviewMode::Full));
    assert_eq!((events[0].stage, events[0].status), (Stage::Clone, StageStatus::Started));
    let last = events.last().unwrap();
    assert_eq!((last.stage, last.status), (Stage::Artifacts, StageStatus::Completed));
    let progress: Vec<(Option<u64>, Option<u64>)> = events
        .iter()
        .filter(|e| e.stage == Stage::Review && e.status == StageStatus::Progress)
        .map(|e| (e.current, e.total))
        .collect();
    assert_eq!(progress, (1..=5).map(|i| (Some(i), Some(5))).collect::<Vec<_>>());
    assert!(events.iter().all(|e| e.job_id == "fixed-job"));
}

#[test]
fn workspace_is_removed_after_run() {
    let env = env();
    demo_remote(&env.remotes);
    let deps = offline_deps(&env.remotes, &env.work, &env.root.join("out"), Arc::new(HeuristicProvider));
    run_review(&demo_source(), ReviewMode::NoContext, &deps).unwrap();
    assert_eq!(std::fs::read_dir(&env.work).unwrap().count(), 0);

    let mut keep = offline_deps(&env.remotes, &env.work, &env.root.join("out2"), Arc::new(HeuristicProvider));
    keep.keep_workspace = true;
    run_review(&demo_source(), ReviewMode::NoContext, &keep).unwrap();
    assert!(env.work.join("ws-fixed-job").join("README.md").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let env = env();
    demo_remote(&env.remotes);
    let mut outputs = Vec::new();
    for i in 0..3 {
        let out = env.root.join(format!("out{i}"));
        let deps = offline_deps(&env.remotes, &env.work, &out, Arc::new(HeuristicProvider));
        run_review(&demo_source(), ReviewMode::Full, &deps).unwrap();
        outputs.push((
            std::fs::read(out.join("review.json")).unwrap(),
            std::fs::read(out.join("review.md")).unwrap(),
        ));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn parallel_review_matches_sequential() {
    let env = env();
    demo_remote(&env.remotes);
    let seq = offline_deps(&env.remotes, &env.work, &env.root.join("a"), Arc::new(HeuristicProvider));
    let mut par = offline_deps(&env.remotes, &env.work, &env.root.join("b"), Arc::new(HeuristicProvider));
    par.review_parallelism = 4;
    let sink = Arc::new(CollectingSink::default());
    par.sink = sink.clone();
    run_review(&demo_source(), ReviewMode::Full, &seq).unwrap();
    run_review(&demo_source(), ReviewMode::Full, &par).unwrap();
    assert_eq!(
        std::fs::read(env.root.join("a/review.json")).unwrap(),
        std::fs::read(env.root.join("b/review.json")).unwrap()
    );
    assert_grammar(&sink.events(), &plan_stages(ReviewMode::Full));
}

/// Wraps the heuristic provider and records every prompt.
fn recording() -> (Arc<dyn ChatProvider>, Arc<Mutex<Vec<String>>>) {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let provider = FnProvider(move |req: &repo_review::gateway::ModelRequest| {
        let text: Vec<&str> = req.messages.iter().map(|m| m.content.as_str()).collect();
        log.lock().unwrap().push(text.join("\n"));
        HeuristicProvider.complete(req).map(|r| r.text)
    });
    (Arc::new(provider), seen)
}

#[test]
fn mode_contracts() {
    let env = env();
    demo_remote(&env.remotes);
    let run = |mode: ReviewMode| {
        let (provider, prompts) = recording();
        let sink = Arc::new(CollectingSink::default());
        let mut deps = offline_deps(&env.remotes, &env.work, &env.root.join(mode.as_str()), provider);
        deps.sink = sink.clone();
        let report = run_review(&demo_source(), mode, &deps).unwrap().report;
        assert_eq!(validate_report(&report), Ok(()));
        assert_grammar(&sink.events(), &plan_stages(mode));
        let prompts = prompts.lock().unwrap().clone();
        (report, prompts)
    };

    let (single, prompts) = run(ReviewMode::SingleAgent);
    assert_eq!(prompts.len(), 1);
    assert_eq!(single.stats.provider_calls, 1);
    assert!(single.context.is_none());
    assert!(!single.findings.is_empty());
    assert!(single.summary_text.starts_with("Single-pass review"));

    let (full, prompts) = run(ReviewMode::Full);
    assert_eq!(prompts.len() as u64, 2 + full.stats.files_reviewed);
    assert!(prompts.iter().any(|p| p.contains(CONTEXT_HEADING)));

    let (no_ctx, prompts) = run(ReviewMode::NoContext);
    assert!(no_ctx.context.is_none());
    assert!(prompts.iter().all(|p| !p.contains(CONTEXT_HEADING)));
    assert_eq!(prompts.len() as u64, 1 + no_ctx.stats.files_reviewed);

    let (no_pri, _) = run(ReviewMode::NoPriority);
    assert!(no_pri.context.is_some());
    // Generation order: files in selection order, then model order.
    let files: Vec<&str> = no_pri.findings.iter().map(|c| c.file.as_str()).collect();
    let mut sorted_files = files.clone();
    sorted_files.sort();
    assert_eq!(files, sorted_files);
    assert!(no_pri.findings.windows(2).any(|w| rank_order(&w[0], &w[1]).is_gt()));
    assert_eq!(
        no_pri.findings.len() as u64,
        full.findings.len() as u64 + full.stats.duplicates_removed
    );
    assert!(full.findings.windows(2).all(|w| rank_order(&w[0], &w[1]).is_le()));
}

#[test]
fn failing_provider_degrades() {
    let env = env();
    demo_remote(&env.remotes);
    let clock = Arc::new(ManualClock::new(fixed_time()));
    let mut deps = offline_deps(
        &env.remotes,
        &env.work,
        &env.root.join("out"),
        Arc::new(FailingProvider::new(ProviderError::Server { status: 503, message: "unavailable".into() })),
    );
    deps.clock = clock.clone();
    let report = run_review(&demo_source(), ReviewMode::Full, &deps).unwrap().report;
    assert_eq!(validate_report(&report), Ok(()));
    assert!(report.findings.is_empty());
    assert!(report.context.as_ref().unwrap().text.starts_with(FALLBACK_PREFIX));
    assert!(report.summary_text.starts_with("Automated summary unavailable"));
    assert!(report.stats.context_degraded && report.stats.summary_degraded);
    assert_eq!(report.stats.review_failures, report.stats.files_reviewed);
    // Every logical call was retried three times with 1+2+4 s of backoff.
    assert_eq!(report.stats.retries, 3 * report.stats.provider_calls);
    assert_eq!(report.stats.duration_s, 7.0 * report.stats.provider_calls as f64);
    assert!(Path::new(&env.root.join("out/review.md")).exists());
}

#[test]
fn unreachable_repository_fails_clone() {
    let env = env();
    let out = env.root.join("out");
    let sink = Arc::new(CollectingSink::default());
    let mut deps = offline_deps(&env.remotes, &env.work, &out, Arc::new(HeuristicProvider));
    deps.sink = sink.clone();
    let source = parse_repo_url("https://github.com/nobody/missing", None).unwrap();
    let err = run_review(&source, ReviewMode::Full, &deps).unwrap_err();
    assert!(matches!(err, RunError::Clone(_)), "{err}");
    let events = sink.events();
    assert_eq!(events.len(), 2);
    assert_eq!((events[1].stage, events[1].status), (Stage::Clone, StageStatus::Failed));
    assert!(!out.join("review.json").exists());
}

#[test]
fn panicking_sink_does_not_abort() {
    let env = env();
    hello_world_remote(&env.remotes);
    let mut deps = offline_deps(&env.remotes, &env.work, &env.root.join("out"), Arc::new(HeuristicProvider));
    deps.sink = Arc::new(|_: &ProgressEvent| panic!("sink failure"));
    let source = parse_repo_url("https://github.com/octocat/Hello-World", None).unwrap();
    assert!(run_review(&source, ReviewMode::Full, &deps).is_ok());
}

#[test]
fn hello_world_mentions_readme() {
    let env = env();
    hello_world_remote(&env.remotes);
    let deps = offline_deps(&env.remotes, &env.work, &env.root.join("out"), Arc::new(HeuristicProvider));
    let source = parse_repo_url("https://github.com/octocat/Hello-World", None).unwrap();
    let report = run_review(&source, ReviewMode::Full, &deps).unwrap().report;
    assert_eq!(validate_report(&report), Ok(()));
    assert_eq!(report.stats.files_reviewed, 1);
    assert!(report.findings.iter().any(|c| c.file == "README"));
    assert!(report.context.unwrap().text.contains("Hello World!"));
}

#[test]
fn pull_request_reviews_changed_files_at_head() {
    let env = env();
    let mut repo = demo_remote(&env.remotes);
    let base = repo.head.clone();
    repo.create_branch("feature", &base);
    repo.checkout("feature");
    let head = repo.commit(
        &[("src/lib.rs", b"pub fn risky(v: Option<u8>) -> u8 {\n    v.unwrap()\n}\n")],
        "Add risky helper",
    );
    repo.checkout("main");
    repo.add_pull_ref(7, &head);

    let mut deps = offline_deps(&env.remotes, &env.work, &env.root.join("out"), Arc::new(HeuristicProvider));
    let github = Arc::new(StubGithubClient::new(
        Ok(PullHead {
            head_ref: "feature".into(),
            head_sha: head.clone(),
        }),
        Ok(vec!["src/lib.rs".into()]),
    ));
    deps.github = github.clone();
    let source = parse_repo_url("https://github.com/acme/demo/pull/7", None).unwrap();
    let report = run_review(&source, ReviewMode::Full, &deps).unwrap().report;
    assert_eq!(report.source.pr_number, Some(7));
    assert_eq!(report.stats.files_reviewed, 1);
    assert!(report.findings.iter().all(|c| c.file == "src/lib.rs"));
    assert_eq!(report.findings.len(), 1);
    assert_eq!(report.findings[0].line, 2);
    assert_eq!(github.calls(), 2);
}
