use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use repo_review::model::rfc3339;
use repo_review::orchestrator::ProgressSink;
use repo_review::{ProgressEvent, RepoSource, ReviewMode};
use serde::Serialize;
use tokio::sync::watch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed)
    }
}

#[derive(Debug, Clone)]
struct Status {
    state: JobState,
    finished_at: Option<DateTime<Utc>>,
    error: Option<String>,
}

/// One review job. The job's worker is the only writer; handlers and event
/// streams read snapshots.
#[derive(Debug)]
pub struct Job {
    pub id: String,
    pub source: RepoSource,
    pub mode: ReviewMode,
    pub model_id: String,
    pub created_at: DateTime<Utc>,
    pub artifact_dir: PathBuf,
    status: Mutex<Status>,
    events: Mutex<Vec<ProgressEvent>>,
    /// Bumped after every append and state change.
    version: watch::Sender<u64>,
}

/// JSON view of a job, without its event log.
#[derive(Debug, Clone, Serialize)]
pub struct JobView {
    pub job_id: String,
    pub state: JobState,
    pub source: RepoSource,
    pub mode: ReviewMode,
    pub model_id: String,
    #[serde(with = "rfc3339")]
    pub created_at: DateTime<Utc>,
    #[serde(serialize_with = "opt_ts")]
    pub finished_at: Option<DateTime<Utc>>,
    pub error: Option<String>,
    pub artifact_dir: String,
    pub event_count: usize,
}

fn opt_ts<S: serde::Serializer>(ts: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
    match ts {
        Some(t) => s.serialize_str(&rfc3339::format(t)),
        None => s.serialize_none(),
    }
}

impl Job {
    pub fn new(
        id: String,
        source: RepoSource,
        mode: ReviewMode,
        model_id: String,
        created_at: DateTime<Utc>,
        artifact_dir: PathBuf,
    ) -> Self {
        Job {
            id,
            source,
            mode,
            model_id,
            created_at,
            artifact_dir,
            status: Mutex::new(Status {
                state: JobState::Queued,
                finished_at: None,
                error: None,
            }),
            events: Mutex::new(Vec::new()),
            version: watch::channel(0).0,
        }
    }

    pub fn state(&self) -> JobState {
        self.status.lock().unwrap().state
    }

    pub fn error(&self) -> Option<String> {
        self.status.lock().unwrap().error.clone()
    }

    fn bump(&self) {
        self.version.send_modify(|v| *v += 1);
    }

    pub fn mark_running(&self) {
        let mut st = self.status.lock().unwrap();
        if st.state == JobState::Queued {
            st.state = JobState::Running;
        }
        drop(st);
        self.bump();
    }

    /// Moves a running job to its terminal state. Earlier states pass
    /// through running first so no transition is skipped.
    pub fn finish(&self, at: DateTime<Utc>, error: Option<String>) {
        let mut st = self.status.lock().unwrap();
        if st.state.is_terminal() {
            return;
        }
        st.state = if error.is_some() {
            JobState::Failed
        } else {
            JobState::Succeeded
        };
        st.finished_at = Some(at);
        st.error = error;
        drop(st);
        self.bump();
    }

    pub fn append(&self, event: ProgressEvent) {
        let mut log = self.events.lock().unwrap();
        if log.last().is_some_and(|last| last.seq >= event.seq) {
            log::warn!("job {}: dropping out-of-order event {}", self.id, event.seq);
            return;
        }
        log.push(event);
        drop(log);
        self.bump();
    }

    /// Events with seq greater than `after`.
    pub fn events_after(&self, after: u64) -> Vec<ProgressEvent> {
        let log = self.events.lock().unwrap();
        let start = log.partition_point(|e| e.seq <= after);
        log[start..].to_vec()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.version.subscribe()
    }

    pub fn view(&self) -> JobView {
        let st = self.status.lock().unwrap().clone();
        JobView {
            job_id: self.id.clone(),
            state: st.state,
            source: self.source.clone(),
            mode: self.mode,
            model_id: self.model_id.clone(),
            created_at: self.created_at,
            finished_at: st.finished_at,
            error: st.error,
            artifact_dir: self.artifact_dir.to_string_lossy().into_owned(),
            event_count: self.events.lock().unwrap().len(),
        }
    }
}

/// Appends a job's progress events to its log.
pub struct JobSink(pub Arc<Job>);

impl ProgressSink for JobSink {
    fn emit(&self, event: &ProgressEvent) {
        self.0.append(event.clone());
    }
}
