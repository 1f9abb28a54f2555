//! Helpers for building deterministic fixture repositories and reports in
//! tests across the workspace.

use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{DateTime, TimeZone, Utc};

use crate::model::{
    parse_repo_url, ContextSummary, ReviewComment, ReviewMode, ReviewReport, RunStats, Severity, SkipReason,
    SkippedFile, SCHEMA_VERSION,
};

/// 2024-01-01T00:00:00Z, used as the fixed clock start.
pub fn fixed_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

/// The repository's `fixtures/` directory.
pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn git(dir: &Path, args: &[&str]) -> String {
    let out = Command::new("git")
        .args(["-c", "init.defaultBranch=main", "-c", "commit.gpgsign=false"])
        .args(args)
        .current_dir(dir)
        .env("GIT_AUTHOR_NAME", "Fixture")
        .env("GIT_AUTHOR_EMAIL", "fixture@example.com")
        .env("GIT_COMMITTER_NAME", "Fixture")
        .env("GIT_COMMITTER_EMAIL", "fixture@example.com")
        .env("GIT_AUTHOR_DATE", "2024-01-01T00:00:00Z")
        .env("GIT_COMMITTER_DATE", "2024-01-01T00:00:00Z")
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("HOME", dir)
        .env("LC_ALL", "C")
        .output()
        .expect("git runs");
    assert!(
        out.status.success(),
        "git {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).trim().to_string()
}

fn copy_tree(src: &Path, dest: &Path) {
    for entry in walkdir::WalkDir::new(src).min_depth(1).sort_by_file_name() {
        let entry = entry.expect("fixture readable");
        let rel = entry.path().strip_prefix(src).unwrap();
        let target = dest.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target).unwrap();
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
}

/// A local git repository standing in for a hosted one.
#[derive(Debug, Clone)]
pub struct FixtureRepo {
    pub path: PathBuf,
    pub head: String,
}

impl FixtureRepo {
    /// Commits `files` as the next commit on the current branch.
    pub fn commit(&mut self, files: &[(&str, &[u8])], message: &str) -> String {
        for (rel, bytes) in files {
            let p = self.path.join(rel);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, bytes).unwrap();
        }
        git(&self.path, &["add", "-A"]);
        git(&self.path, &["commit", "--quiet", "-m", message]);
        self.head = git(&self.path, &["rev-parse", "HEAD"]);
        self.head.clone()
    }

    /// Points `refs/pull/{n}/head` at `sha`, as a hosting service would.
    pub fn add_pull_ref(&self, n: u64, sha: &str) {
        git(&self.path, &["update-ref", &format!("refs/pull/{n}/head"), sha]);
    }

    pub fn create_branch(&self, name: &str, sha: &str) {
        git(&self.path, &["branch", "--force", name, sha]);
    }

    pub fn checkout(&self, rev: &str) {
        git(&self.path, &["checkout", "--quiet", rev]);
    }
}

/// Creates `{remote_root}/{owner}/{name}` as a repository with one commit
/// holding `files`. Commit ids are stable across machines.
pub fn init_repo(remote_root: &Path, owner: &str, name: &str, files: &[(&str, &[u8])]) -> FixtureRepo {
    let path = remote_root.join(owner).join(name);
    std::fs::create_dir_all(&path).unwrap();
    git(&path, &["init", "--quiet"]);
    git(&path, &["config", "uploadpack.allowReachableSHA1InWant", "true"]);
    git(&path, &["config", "uploadpack.allowAnySHA1InWant", "true"]);
    let mut repo = FixtureRepo {
        path,
        head: String::new(),
    };
    repo.commit(files, "Initial commit");
    repo
}

/// Like [`init_repo`] with the contents of a directory.
pub fn init_repo_from_dir(remote_root: &Path, owner: &str, name: &str, src: &Path) -> FixtureRepo {
    let path = remote_root.join(owner).join(name);
    std::fs::create_dir_all(&path).unwrap();
    copy_tree(src, &path);
    let mut repo = init_repo(remote_root, owner, name, &[]);
    repo.head = git(&repo.path, &["rev-parse", "HEAD"]);
    repo
}

/// Mirror of octocat/Hello-World: a single extensionless README.
pub fn hello_world_remote(remote_root: &Path) -> FixtureRepo {
    init_repo_from_dir(remote_root, "octocat", "Hello-World", &fixtures_dir().join("hello-world"))
}

/// The demo project from `fixtures/demo` plus a binary file and an
/// oversized file, published as `acme/demo`.
pub fn demo_remote(remote_root: &Path) -> FixtureRepo {
    let path = remote_root.join("acme").join("demo");
    std::fs::create_dir_all(path.join("assets")).unwrap();
    std::fs::create_dir_all(path.join("data")).unwrap();
    copy_tree(&fixtures_dir().join("demo"), &path);
    let mut png = b"\x89PNG\r\n\x1a\n\0\0\0\rIHDR".to_vec();
    png.extend((0u8..64).collect::<Vec<_>>());
    std::fs::write(path.join("assets/logo.png"), png).unwrap();
    let big: String = (0..10000).map(|i| format!("INSERT INTO t VALUES ({i});\n")).collect();
    std::fs::write(path.join("data/seed.sql"), big).unwrap();
    let mut repo = init_repo(remote_root, "acme", "demo", &[]);
    repo.head = git(&repo.path, &["rev-parse", "HEAD"]);
    repo
}

/// A valid report with findings across three severities and two skips.
pub fn sample_report() -> ReviewReport {
    let mut findings = vec![
        ReviewComment::new(
            "src/app.py",
            3,
            Severity::Critical,
            "Hard-coded password",
            "Read it from the environment.",
        ),
        ReviewComment::new("src/app.py", 9, Severity::High, "eval() on user input", ""),
        ReviewComment::new(
            "src/lib.rs",
            12,
            Severity::Medium,
            "unwrap() \"may\" panic, in handler",
            "Return an error.\nLog it.",
        ),
    ];
    findings[0].snippet = "1: import os\n2: \n3: PASSWORD = \"hunter2\"".into();
    ReviewReport {
        schema_version: SCHEMA_VERSION.into(),
        source: parse_repo_url("https://github.com/acme/demo", None).unwrap(),
        mode: ReviewMode::Full,
        model_id: "stub-model".into(),
        generated_at: fixed_time(),
        context: Some(ContextSummary {
            text: "A small demo project.".into(),
            tree_excerpt: "README.md\nsrc/\n  app.py\n  lib.rs".into(),
            readme_excerpt: "# Demo".into(),
            preview_paths: vec!["src/app.py".into()],
            truncated: false,
        }),
        findings,
        skipped: vec![
            SkippedFile {
                path: "assets/logo.png".into(),
                reason: SkipReason::Binary,
            },
            SkippedFile {
                path: "package-lock.json".into(),
                reason: SkipReason::Generated,
            },
        ],
        summary_text: "Two security problems need attention first.".into(),
        stats: RunStats {
            files_reviewed: 3,
            files_skipped: 2,
            provider_calls: 5,
            tokens_in: 1200,
            tokens_out: 300,
            est_cost_usd: 0.0,
            duration_s: 1.5,
            ..RunStats::default()
        },
    }
}

/// Deps for offline runs against fixture remotes under `remote_root`:
/// fixed clock, fixed job id, no GitHub access, workspaces under `work`.
pub fn offline_deps(
    remote_root: &Path,
    work: &Path,
    out: &Path,
    provider: std::sync::Arc<dyn crate::gateway::ChatProvider>,
) -> crate::orchestrator::RunDeps {
    let mut deps = crate::orchestrator::RunDeps::new(provider, "stub-model", out);
    deps.github = std::sync::Arc::new(crate::github::StubGithubClient::default());
    deps.clock = std::sync::Arc::new(crate::clock::ManualClock::new(fixed_time()));
    deps.workspace_parent = work.to_path_buf();
    deps.remote = crate::acquisition::RemoteBase::new(&remote_root.to_string_lossy());
    deps.job_id = "fixed-job".into();
    deps
}

/// Annotation values for one sheet row: valid, actionable, duplicate_of (as
/// an index into the same run's findings), annotator severity, usefulness.
type Annotation = (&'static str, &'static str, Option<usize>, &'static str, &'static str);

/// Hand-built evaluation fixture: three ok runs (two full, one single_agent)
/// with twelve findings, plus a filled-in annotation sheet covering unsure
/// verdicts, blank usefulness, an unannotated row and a top-ranked finding
/// beyond the fifth. Returns the annotations path; `runs.json` and the
/// reports are written under `dir`.
pub fn metrics_fixture(dir: &Path) -> PathBuf {
    use crate::eval::{render_annotation_sheet, write_runs_index, RunRecord, RunStatus};

    // (run id, mode, duration, cost, findings)
    type Run<'a> = (&'a str, ReviewMode, f64, f64, Vec<(Severity, &'a str, Annotation)>);
    let runs: [Run; 3] = [
        (
            "acme-api-full-1",
            ReviewMode::Full,
            10.0,
            0.02,
            vec![
                (Severity::Critical, "Hard-coded \"password\", in config\nline two", ("yes", "yes", None, "critical", "5")),
                (Severity::High, "SQL built by string concatenation", ("yes", "yes", None, "medium", "4")),
                (Severity::Medium, "Missing timeout on HTTP call", ("no", "no", None, "medium", "2")),
                (Severity::Medium, "HTTP call lacks timeout", ("unsure", "no", Some(2), "", "")),
                (Severity::Low, "Unused import", ("yes", "yes", None, "low", "3")),
                (Severity::Info, "Long line", ("yes", "no", None, "info", "5")),
            ],
        ),
        (
            "acme-web-full-2",
            ReviewMode::Full,
            14.0,
            0.03,
            vec![
                (Severity::High, "XSS via innerHTML", ("yes", "yes", None, "high", "4")),
                (Severity::Medium, "Unescaped HTML output", ("yes", "no", Some(0), "low", "2")),
                (Severity::Info, "Prefer const", ("no", "no", None, "info", "1")),
            ],
        ),
        (
            "acme-api-single_agent-3",
            ReviewMode::SingleAgent,
            3.5,
            0.004,
            vec![
                (Severity::High, "Hard-coded password", ("yes", "yes", None, "high", "5")),
                (Severity::Low, "Unused import", ("", "", None, "", "")),
                (Severity::Info, "Password literal in source", ("unsure", "no", Some(0), "low", "")),
            ],
        ),
    ];

    let mut records = Vec::new();
    let mut annotations: Vec<Annotation> = Vec::new();
    let mut run_findings: Vec<Vec<String>> = Vec::new();
    for (run_id, mode, duration, cost, findings) in &runs {
        let file = if run_id.contains("web") { "web/app.js" } else { "api/server.py" };
        let comments: Vec<ReviewComment> = findings
            .iter()
            .enumerate()
            .map(|(i, (sev, issue, _))| ReviewComment::new(file, i as u32 + 1, *sev, *issue, "Fix it."))
            .collect();
        run_findings.push(comments.iter().map(|c| c.id.clone()).collect());
        annotations.extend(findings.iter().map(|f| f.2));
        let owner_name: Vec<&str> = run_id.splitn(3, '-').collect();
        let mut report = sample_report();
        report.source = parse_repo_url(&format!("https://github.com/{}/{}", owner_name[0], owner_name[1]), None).unwrap();
        report.mode = *mode;
        if !mode.has_context() {
            report.context = None;
        }
        report.findings = comments;
        report.stats.duration_s = *duration;
        report.stats.est_cost_usd = *cost;
        let run_dir = dir.join(run_id);
        std::fs::create_dir_all(&run_dir).unwrap();
        crate::artifacts::write_json_report(&report, &run_dir).unwrap();
        records.push(RunRecord {
            run_id: run_id.to_string(),
            source: report.source.clone(),
            mode: *mode,
            status: RunStatus::Ok,
            report_path: Some(format!("{run_id}/review.json")),
            stats: Some(report.stats.clone()),
            failure: None,
        });
    }
    write_runs_index(dir, &records).unwrap();

    let sheet = render_annotation_sheet(&records, dir).unwrap();
    let mut reader = csv::Reader::from_reader(sheet.as_bytes());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(reader.headers().unwrap()).unwrap();
    let mut run_index = 0;
    let mut row_in_run = 0;
    for (i, rec) in reader.records().enumerate() {
        let mut rec: Vec<String> = rec.unwrap().iter().map(str::to_string).collect();
        while row_in_run >= run_findings[run_index].len() {
            run_index += 1;
            row_in_run = 0;
        }
        let (valid, actionable, dup, sev, useful) = annotations[i];
        rec[7] = valid.into();
        rec[8] = actionable.into();
        rec[9] = dup.map(|d| run_findings[run_index][d].clone()).unwrap_or_default();
        rec[10] = sev.into();
        rec[11] = useful.into();
        w.write_record(&rec).unwrap();
        row_in_run += 1;
    }
    let path = dir.join("annotations.csv");
    std::fs::write(&path, w.into_inner().unwrap()).unwrap();
    path
}
