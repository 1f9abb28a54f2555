use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};

/// Time source and sleeper. Injected everywhere time matters so tests can
/// fix timestamps and make retry backoff virtual.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// A clock that only moves when slept on.
#[derive(Debug)]
pub struct ManualClock {
    now: Mutex<DateTime<Utc>>,
    slept: Mutex<Vec<Duration>>,
}

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock {
            now: Mutex::new(start),
            slept: Mutex::new(Vec::new()),
        }
    }

    pub fn advance(&self, d: Duration) {
        let mut now = self.now.lock().unwrap();
        *now += chrono::Duration::from_std(d).unwrap_or_else(|_| chrono::Duration::zero());
    }

    /// Every sleep requested so far, in order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.slept.lock().unwrap().clone()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.slept.lock().unwrap().push(d);
        self.advance(d);
    }
}

/// Parses an RFC 3339 instant into a [`ManualClock`] start.
pub fn fixed_clock(rfc3339: &str) -> Result<ManualClock, String> {
    DateTime::parse_from_rfc3339(rfc3339.trim())
        .map(|t| ManualClock::new(t.with_timezone(&Utc)))
        .map_err(|e| format!("invalid RFC 3339 time {rfc3339:?}: {e}"))
}
