use std::time::Duration;

use thiserror::Error;

use super::{ModelResponse, ProviderError, RetryClass};
use crate::clock::Clock;

/// Fixed, non-jittered backoff.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff: vec![
                Duration::from_secs(1),
                Duration::from_secs(2),
                Duration::from_secs(4),
            ],
        }
    }
}

impl RetryPolicy {
    /// Wait before retry number `retry` (0-based); the last entry repeats.
    pub fn delay(&self, retry: u32) -> Duration {
        self.backoff
            .get(retry as usize)
            .or(self.backoff.last())
            .copied()
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} after {attempts} attempt(s): {last}", if *.exhausted { "retries exhausted" } else { "provider call failed" })]
pub struct GatewayError {
    pub attempts: u32,
    /// True when the failure is due to running out of retries.
    pub exhausted: bool,
    pub last: ProviderError,
}

/// Runs `call` until it succeeds, hits a non-retryable error, or the policy
/// runs out. A provider `retry-after` longer than the scheduled wait wins.
pub fn with_retry<F>(mut call: F, policy: &RetryPolicy, clock: &dyn Clock) -> Result<ModelResponse, GatewayError>
where
    F: FnMut() -> Result<ModelResponse, ProviderError>,
{
    let mut attempts = 0u32;
    let mut malformed = 0u32;
    loop {
        attempts += 1;
        let err = match call() {
            Ok(mut resp) => {
                resp.attempts = attempts;
                return Ok(resp);
            }
            Err(e) => e,
        };
        let retryable = match err.retry_class() {
            RetryClass::Never => false,
            RetryClass::Always => true,
            RetryClass::Once => {
                malformed += 1;
                malformed <= 1
            }
        };
        if !retryable {
            return Err(GatewayError {
                attempts,
                exhausted: false,
                last: err,
            });
        }
        if attempts > policy.max_retries {
            return Err(GatewayError {
                attempts,
                exhausted: true,
                last: err,
            });
        }
        let scheduled = policy.delay(attempts - 1);
        let wait = err.retry_after().map_or(scheduled, |ra| ra.max(scheduled));
        clock.sleep(wait);
    }
}
