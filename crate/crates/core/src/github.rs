//! Pull-request metadata from the GitHub REST API.

use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_API_BASE: &str = "https://api.github.com";
const FILES_PAGE_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GithubError {
    #[error("pull request {owner}/{name}#{number} not found")]
    NotFound {
        owner: String,
        name: String,
        number: u64,
    },
    #[error("GitHub API rate limit exceeded{}", retry_hint(.retry_after))]
    RateLimited { retry_after: Option<Duration> },
    #[error("GitHub API authentication failed: {0}")]
    Auth(String),
    #[error("network failure talking to GitHub: {0}")]
    Network(String),
    #[error("unexpected GitHub API response: {0}")]
    Decode(String),
    #[error("invalid pull request number {0}: must be positive")]
    InvalidNumber(u64),
}

fn retry_hint(retry_after: &Option<Duration>) -> String {
    match retry_after {
        Some(d) => format!(" (retry after {}s)", d.as_secs()),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PullHead {
    pub head_ref: String,
    pub head_sha: String,
}

/// Source of pull-request metadata. Implementations must tolerate concurrent
/// use from several jobs.
pub trait GithubClient: Send + Sync {
    fn pull_request(&self, owner: &str, name: &str, number: u64) -> Result<PullHead, GithubError>;

    /// Repo-relative paths touched by the pull request, across all pages.
    fn pull_request_files(
        &self,
        owner: &str,
        name: &str,
        number: u64,
    ) -> Result<Vec<String>, GithubError>;
}

/// REST client for `api.github.com` (or a compatible base URL).
pub struct HttpGithubClient {
    agent: ureq::Agent,
    base: String,
    token: Option<String>,
}

impl HttpGithubClient {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build();
        HttpGithubClient {
            agent: ureq::Agent::new_with_config(config),
            base: base.into().trim_end_matches('/').to_string(),
            token,
        }
    }

    /// Reads `GITHUB_TOKEN` and `GITHUB_API_URL` from the environment.
    pub fn from_env() -> Self {
        let base = std::env::var("GITHUB_API_URL").unwrap_or_else(|_| DEFAULT_API_BASE.into());
        let token = std::env::var("GITHUB_TOKEN").ok().filter(|t| !t.is_empty());
        HttpGithubClient::new(base, token)
    }

    fn get(&self, path: &str, ctx: (&str, &str, u64)) -> Result<String, GithubError> {
        let url = format!("{}{}", self.base, path);
        let mut req = self
            .agent
            .get(&url)
            .header("Accept", "application/vnd.github+json")
            .header("User-Agent", "repo-review");
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.call().map_err(|e| GithubError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let header = |name: &str| {
            resp.headers()
                .get(name)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
        };
        let retry_after = header("retry-after")
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let remaining = header("x-ratelimit-remaining");
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GithubError::Network(e.to_string()))?;
        match status {
            200..=299 => Ok(body),
            404 => Err(GithubError::NotFound {
                owner: ctx.0.to_string(),
                name: ctx.1.to_string(),
                number: ctx.2,
            }),
            429 => Err(GithubError::RateLimited { retry_after }),
            403 if remaining.as_deref() == Some("0") || retry_after.is_some() => {
                Err(GithubError::RateLimited { retry_after })
            }
            401 | 403 => Err(GithubError::Auth(format!("HTTP {status}"))),
            _ => Err(GithubError::Network(format!("HTTP {status} from {url}"))),
        }
    }
}

#[derive(Deserialize)]
struct PullBody {
    head: PullHeadBody,
}

#[derive(Deserialize)]
struct PullHeadBody {
    #[serde(rename = "ref")]
    ref_name: String,
    sha: String,
}

#[derive(Deserialize)]
struct FileBody {
    filename: String,
}

impl GithubClient for HttpGithubClient {
    fn pull_request(&self, owner: &str, name: &str, number: u64) -> Result<PullHead, GithubError> {
        let body = self.get(
            &format!("/repos/{owner}/{name}/pulls/{number}"),
            (owner, name, number),
        )?;
        let parsed: PullBody =
            serde_json::from_str(&body).map_err(|e| GithubError::Decode(e.to_string()))?;
        Ok(PullHead {
            head_ref: parsed.head.ref_name,
            head_sha: parsed.head.sha.to_ascii_lowercase(),
        })
    }

    fn pull_request_files(
        &self,
        owner: &str,
        name: &str,
        number: u64,
    ) -> Result<Vec<String>, GithubError> {
        let mut files = Vec::new();
        for page in 1.. {
            let body = self.get(
                &format!(
                    "/repos/{owner}/{name}/pulls/{number}/files?per_page={FILES_PAGE_SIZE}&page={page}"
                ),
                (owner, name, number),
            )?;
            let batch: Vec<FileBody> =
                serde_json::from_str(&body).map_err(|e| GithubError::Decode(e.to_string()))?;
            let n = batch.len();
            files.extend(batch.into_iter().map(|f| f.filename));
            if n < FILES_PAGE_SIZE {
                break;
            }
        }
        Ok(files)
    }
}

/// Canned client for tests: fixed responses plus a call counter.
#[derive(Debug, Default)]
pub struct StubGithubClient {
    pub head: Option<Result<PullHead, GithubError>>,
    pub files: Option<Result<Vec<String>, GithubError>>,
    calls: std::sync::atomic::AtomicUsize,
}

impl StubGithubClient {
    pub fn new(
        head: Result<PullHead, GithubError>,
        files: Result<Vec<String>, GithubError>,
    ) -> Self {
        StubGithubClient {
            head: Some(head),
            files: Some(files),
            calls: Default::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl GithubClient for StubGithubClient {
    fn pull_request(&self, owner: &str, name: &str, number: u64) -> Result<PullHead, GithubError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.head.clone().unwrap_or(Err(GithubError::NotFound {
            owner: owner.into(),
            name: name.into(),
            number,
        }))
    }

    fn pull_request_files(
        &self,
        owner: &str,
        name: &str,
        number: u64,
    ) -> Result<Vec<String>, GithubError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.files.clone().unwrap_or(Err(GithubError::NotFound {
            owner: owner.into(),
            name: name.into(),
            number,
        }))
    }
}
