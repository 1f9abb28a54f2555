use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{io_err, EvalError};
use crate::model::{parse_repo_url, RepoSource, ReviewMode, ReviewReport, RunStats};
use crate::orchestrator::{run_review, CollectingSink, ProgressSink, RunDeps, TeeSink};

pub const RUNS_INDEX: &str = "runs.json";
pub const EVENTS_NAME: &str = "events.jsonl";

/// Parses a repos file: one `URL` or `URL#PR` per line, `#` comments and
/// blank lines ignored.
pub fn parse_repos_file(text: &str) -> Result<Vec<RepoSource>, EvalError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| EvalError::ReposFile { line: i + 1, message };
        let (url, pr) = match line.rsplit_once('#') {
            Some((url, pr)) => {
                let n: u64 = pr.trim().parse().map_err(|_| err(format!("invalid PR number {pr:?}")))?;
                (url.trim(), Some(n))
            }
            None => (line, None),
        };
        out.push(parse_repo_url(url, pr).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

pub fn read_repos_file(path: &Path) -> Result<Vec<RepoSource>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_repos_file(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub source: RepoSource,
    pub mode: ReviewMode,
    pub status: RunStatus,
    /// Relative to the experiment directory.
    pub report_path: Option<String>,
    pub stats: Option<RunStats>,
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn load_report(&self, runs_dir: &Path) -> Result<Option<ReviewReport>, EvalError> {
        let Some(rel) = &self.report_path else { return Ok(None) };
        let path = runs_dir.join(rel);
        let raw = std::fs::read_to_string(&path).map_err(|e| EvalError::Report {
            path: path.clone(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&raw).map(Some).map_err(|e| EvalError::Report {
            path,
            message: e.to_string(),
        })
    }
}

pub fn run_id(source: &RepoSource, mode: ReviewMode, seq: usize) -> String {
    format!("{}-{}-{}-{seq}", source.owner, source.name, mode)
}

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub out_dir: PathBuf,
    pub force: bool,
}

fn dir_is_nonempty(dir: &Path) -> Result<bool, EvalError> {
    match std::fs::read_dir(dir) {
        Ok(mut entries) => Ok(entries.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(io_err(dir)(e)),
    }
}

fn write_events(path: &Path, sink: &CollectingSink) -> Result<(), EvalError> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    for ev in sink.events() {
        let line = serde_json::to_string(&ev).expect("event serializes");
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}

pub fn write_runs_index(out_dir: &Path, records: &[RunRecord]) -> Result<PathBuf, EvalError> {
    let path = out_dir.join(RUNS_INDEX);
    let mut body = serde_json::to_string_pretty(records).expect("records serialize");
    body.push('\n');
    std::fs::write(&path, body).map_err(io_err(&path))?;
    Ok(path)
}

pub fn load_runs_index(runs_dir: &Path) -> Result<Vec<RunRecord>, EvalError> {
    let path = runs_dir.join(RUNS_INDEX);
    let raw = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&raw).map_err(|e| EvalError::RunsIndex {
        path,
        message: e.to_string(),
    })
}

/// Runs every repo × mode pair in order. Each run gets `{out}/{run_id}/`
/// with its artifacts and event log; failed runs are recorded, never fatal.
///
/// `base` supplies everything except job id, output dir and sink.
pub fn run_experiment(
    repos: &[RepoSource],
    modes: &[ReviewMode],
    base: &RunDeps,
    options: &ExperimentOptions,
) -> Result<Vec<RunRecord>, EvalError> {
    if repos.is_empty() {
        return Err(EvalError::NoRepos);
    }
    if modes.is_empty() {
        return Err(EvalError::NoModes);
    }
    if !options.force && dir_is_nonempty(&options.out_dir)? {
        return Err(EvalError::OutDirNotEmpty(options.out_dir.clone()));
    }
    std::fs::create_dir_all(&options.out_dir).map_err(io_err(&options.out_dir))?;

    let mut records = Vec::new();
    let mut seq = 0;
    for source in repos {
        for &mode in modes {
            seq += 1;
            let id = run_id(source, mode, seq);
            let run_dir = options.out_dir.join(&id);
            std::fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
            let collected = Arc::new(CollectingSink::default());
            let sink: Arc<dyn ProgressSink> = Arc::new(TeeSink(vec![collected.clone(), base.sink.clone()]));
            let deps = base.for_job(id.clone(), run_dir.clone(), sink);
            log::info!("run {id}: {} ({mode})", source.canonical_url());
            let result = run_review(source, mode, &deps);
            write_events(&run_dir.join(EVENTS_NAME), &collected)?;
            records.push(match result {
                Ok(outcome) => RunRecord {
                    run_id: id.clone(),
                    source: source.clone(),
                    mode,
                    status: RunStatus::Ok,
                    report_path: Some(format!("{id}/{}", crate::artifacts::JSON_NAME)),
                    stats: Some(outcome.report.stats),
                    failure: None,
                },
                Err(e) => {
                    log::warn!("run {id} failed: {e}");
                    RunRecord {
                        run_id: id,
                        source: source.clone(),
                        mode,
                        status: RunStatus::Failed,
                        report_path: None,
                        stats: None,
                        failure: Some(e.to_string()),
                    }
                }
            });
        }
    }
    write_runs_index(&options.out_dir, &records)?;
    Ok(records)
}
