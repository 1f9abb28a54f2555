//! Cloning the target repository and checking out the pull-request head.

use std::path::{Path, PathBuf};
use std::process::Command;

use thiserror::Error;

use crate::github::{GithubClient, GithubError};
use crate::model::RepoSource;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    pub root: PathBuf,
    pub head_commit: String,
    pub source: RepoSource,
    pub pr_changed_files: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrMetadata {
    pub number: u64,
    pub head_ref: String,
    pub head_sha: String,
    pub changed_files: Vec<String>,
}

#[derive(Debug, Error)]
pub enum AcquireError {
    #[error("pull request number must be positive")]
    InvalidPullNumber,
    #[error("repository source has no pull request number")]
    NotPullRequest,
    #[error(transparent)]
    Github(#[from] GithubError),
    #[error("clone of {url} failed: {message}")]
    Clone { url: String, message: String },
    #[error("checkout of {sha} failed: {message}")]
    Checkout { sha: String, message: String },
    #[error("workspace setup failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Maps a [`RepoSource`] to the URL git clones from. The default points at
/// github.com; tests point it at a directory of local fixture repositories
/// laid out as `{base}/{owner}/{name}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteBase(String);

impl Default for RemoteBase {
    fn default() -> Self {
        RemoteBase("https://github.com".into())
    }
}

impl RemoteBase {
    /// Accepts a URL (`https://…`, `file://…`) or a filesystem directory.
    pub fn new(base: &str) -> Self {
        let base = base.trim_end_matches('/');
        if base.contains("://") {
            return RemoteBase(base.to_string());
        }
        let path = std::fs::canonicalize(base).unwrap_or_else(|_| PathBuf::from(base));
        RemoteBase(format!("file://{}", path.display()))
    }

    pub fn url_for(&self, source: &RepoSource) -> String {
        format!("{}/{}/{}", self.0, source.owner, source.name)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn is_commit_sha(s: &str) -> bool {
    s.len() == 40 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

pub fn fetch_pr_metadata(
    source: &RepoSource,
    github: &dyn GithubClient,
) -> Result<PrMetadata, AcquireError> {
    let number = source.pr_number.ok_or(AcquireError::NotPullRequest)?;
    if number == 0 {
        return Err(AcquireError::InvalidPullNumber);
    }
    let head = github.pull_request(&source.owner, &source.name, number)?;
    if !is_commit_sha(&head.head_sha) {
        return Err(GithubError::Decode(format!("head sha {:?} is not a commit id", head.head_sha)).into());
    }
    let changed_files = github
        .pull_request_files(&source.owner, &source.name, number)?
        .into_iter()
        .map(|p| p.trim_start_matches('/').replace('\\', "/"))
        .collect();
    Ok(PrMetadata {
        number,
        head_ref: head.head_ref,
        head_sha: head.head_sha,
        changed_files,
    })
}

fn git(args: &[&str], cwd: Option<&Path>) -> Result<String, String> {
    let mut cmd = Command::new("git");
    cmd.args(args)
        .env("GIT_TERMINAL_PROMPT", "0")
        .env("GIT_ASKPASS", "")
        .env("LC_ALL", "C");
    if let Some(dir) = cwd {
        cmd.current_dir(dir);
    }
    let out = cmd.output().map_err(|e| format!("could not run git: {e}"))?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    } else {
        let stderr = String::from_utf8_lossy(&out.stderr);
        Err(stderr.trim().lines().last().unwrap_or("git failed").to_string())
    }
}

fn unique_root(dest_parent: &Path, job_id: &str) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dest_parent)?;
    let safe: String = job_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    for n in 0u32.. {
        let candidate = if n == 0 {
            dest_parent.join(format!("ws-{safe}"))
        } else {
            dest_parent.join(format!("ws-{safe}-{n}"))
        };
        match std::fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

/// Clones `source` into a fresh directory under `dest_parent`.
///
/// Whole-repository mode makes a depth-1 clone of the default branch. In
/// pull-request mode the PR head commit is fetched and checked out detached;
/// the changed-file list is recorded when the API returns it.
pub fn clone_repository(
    source: &RepoSource,
    dest_parent: &Path,
    job_id: &str,
    remote: &RemoteBase,
    github: &dyn GithubClient,
) -> Result<Workspace, AcquireError> {
    let url = remote.url_for(source);
    match source.pr_number {
        None => {
            let root = unique_root(dest_parent, job_id)?;
            let root_str = root.to_string_lossy().to_string();
            if let Err(message) = git(
                &["clone", "--quiet", "--depth", "1", "--no-tags", &url, &root_str],
                None,
            ) {
                let _ = std::fs::remove_dir_all(&root);
                return Err(AcquireError::Clone { url, message });
            }
            let head_commit = git(&["rev-parse", "HEAD"], Some(&root))
                .map_err(|message| AcquireError::Clone { url: url.clone(), message })?;
            Ok(Workspace {
                root,
                head_commit,
                source: source.clone(),
                pr_changed_files: None,
            })
        }
        Some(0) => Err(AcquireError::InvalidPullNumber),
        Some(number) => {
            let head = github.pull_request(&source.owner, &source.name, number)?;
            if !is_commit_sha(&head.head_sha) {
                return Err(GithubError::Decode(format!(
                    "head sha {:?} is not a commit id",
                    head.head_sha
                ))
                .into());
            }
            let changed = match github.pull_request_files(&source.owner, &source.name, number) {
                Ok(files) => Some(
                    files
                        .into_iter()
                        .map(|p| p.trim_start_matches('/').replace('\\', "/"))
                        .collect(),
                ),
                Err(e) => {
                    log::warn!("changed-file list unavailable, reviewing whole tree: {e}");
                    None
                }
            };

            let root = unique_root(dest_parent, job_id)?;
            let result = checkout_pull_head(&root, &url, number, &head.head_ref, &head.head_sha);
            if let Err(e) = result {
                let _ = std::fs::remove_dir_all(&root);
                return Err(e);
            }
            let head_commit = git(&["rev-parse", "HEAD"], Some(&root)).map_err(|message| {
                AcquireError::Checkout {
                    sha: head.head_sha.clone(),
                    message,
                }
            })?;
            Ok(Workspace {
                root,
                head_commit,
                source: source.clone(),
                pr_changed_files: changed,
            })
        }
    }
}

fn checkout_pull_head(
    root: &Path,
    url: &str,
    number: u64,
    head_ref: &str,
    sha: &str,
) -> Result<(), AcquireError> {
    let clone_err = |message: String| AcquireError::Clone {
        url: url.to_string(),
        message,
    };
    git(&["init", "--quiet"], Some(root)).map_err(clone_err)?;
    git(&["remote", "add", "origin", url], Some(root)).map_err(clone_err)?;

    // Servers differ in whether they allow fetching an arbitrary sha, so fall
    // back to the pull ref and then the head branch.
    let pull_ref = format!("refs/pull/{number}/head");
    let branch_ref = format!("refs/heads/{head_ref}");
    let mut last_err = String::new();
    let mut fetched = false;
    for refspec in [sha, pull_ref.as_str(), branch_ref.as_str()] {
        match git(
            &["fetch", "--quiet", "--depth", "1", "--no-tags", "origin", refspec],
            Some(root),
        ) {
            Ok(_) => {
                fetched = true;
                if git(&["cat-file", "-e", &format!("{sha}^{{commit}}")], Some(root)).is_ok() {
                    break;
                }
            }
            Err(e) => last_err = e,
        }
    }
    if !fetched {
        return Err(AcquireError::Clone {
            url: url.to_string(),
            message: last_err,
        });
    }
    git(
        &["-c", "advice.detachedHead=false", "checkout", "--quiet", "--detach", sha],
        Some(root),
    )
    .map_err(|message| AcquireError::Checkout {
        sha: sha.to_string(),
        message,
    })?;
    Ok(())
}

/// Removes the workspace unless `keep` is set. Removing an already-removed
/// workspace succeeds.
pub fn cleanup_workspace(ws: &Workspace, keep: bool) -> std::io::Result<()> {
    if keep {
        log::info!("keeping workspace at {}", ws.root.display());
        return Ok(());
    }
    match std::fs::remove_dir_all(&ws.root) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e),
    }
}
