//! Server-sent event framing and the per-subscriber stream.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use futures::Stream;
use repo_review::ProgressEvent;

use crate::jobs::{Job, JobState};

/// `id: {seq}\nevent: progress\ndata: {json}\n\n`
pub fn progress_frame(event: &ProgressEvent) -> String {
    let json = serde_json::to_string(event).expect("event serializes");
    format!("id: {}\nevent: progress\ndata: {json}\n\n", event.seq)
}

/// A named event whose data may span lines.
pub fn named_frame(name: &str, data: &str) -> String {
    let mut out = format!("event: {name}\n");
    let mut lines = data.split('\n').peekable();
    if lines.peek().is_none() {
        out.push_str("data: \n");
    }
    for line in lines {
        out.push_str("data: ");
        out.push_str(line.trim_end_matches('\r'));
        out.push('\n');
    }
    out.push('\n');
    out
}

pub const PING_FRAME: &str = ": ping\n\n";

pub fn terminal_frame(state: JobState, error: Option<&str>) -> Option<String> {
    match state {
        JobState::Succeeded => Some(named_frame("done", "succeeded")),
        JobState::Failed => Some(named_frame("error", error.unwrap_or("job failed"))),
        _ => None,
    }
}

/// Replays events after `last_id`, then tails the log until the job ends.
pub fn event_stream(
    job: Arc<Job>,
    last_id: u64,
    ping_every: Duration,
) -> impl Stream<Item = Result<String, Infallible>> + Send {
    struct St {
        job: Arc<Job>,
        cursor: u64,
        rx: tokio::sync::watch::Receiver<u64>,
        closed: bool,
        ping_every: Duration,
    }
    let rx = job.subscribe();
    let init = St {
        job,
        cursor: last_id,
        rx,
        closed: false,
        ping_every,
    };
    futures::stream::unfold(init, |mut st| async move {
        if st.closed {
            return None;
        }
        loop {
            st.rx.borrow_and_update();
            // Read the state before the log so a terminal state implies the
            // log is complete.
            let state = st.job.state();
            let fresh = st.job.events_after(st.cursor);
            if !fresh.is_empty() {
                st.cursor = fresh.last().unwrap().seq;
                let chunk: String = fresh.iter().map(progress_frame).collect();
                return Some((Ok(chunk), st));
            }
            if let Some(frame) = terminal_frame(state, st.job.error().as_deref()) {
                st.closed = true;
                return Some((Ok(frame), st));
            }
            match tokio::time::timeout(st.ping_every, st.rx.changed()).await {
                Ok(Ok(())) => continue,
                Ok(Err(_)) => return None,
                Err(_) => return Some((Ok(PING_FRAME.to_string()), st)),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use repo_review::{Stage, StageStatus};

    #[test]
    fn framing() {
        let ev = ProgressEvent {
            job_id: "j".into(),
            seq: 3,
            stage: Stage::Review,
            status: StageStatus::Progress,
            detail: "a".into(),
            current: Some(1),
            total: Some(2),
            timestamp: chrono::Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        };
        assert_eq!(
            progress_frame(&ev),
            "id: 3\nevent: progress\ndata: {\"job_id\":\"j\",\"seq\":3,\"stage\":\"review\",\"status\":\"progress\",\"detail\":\"a\",\"current\":1,\"total\":2,\"timestamp\":\"2024-01-01T00:00:00Z\"}\n\n"
        );
        assert_eq!(named_frame("done", "succeeded"), "event: done\ndata: succeeded\n\n");
        assert_eq!(named_frame("error", "a\nb"), "event: error\ndata: a\ndata: b\n\n");
    }
}
