//! Domain types shared by every stage of a review run.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::priority::normalize_issue;

pub const SCHEMA_VERSION: &str = "1";

/// Finding severity. The derived ordering is ascending, so `Critical` is the
/// greatest value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    /// All levels, most severe first.
    pub const ALL: [Severity; 5] = [
        Severity::Critical,
        Severity::High,
        Severity::Medium,
        Severity::Low,
        Severity::Info,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Critical => "critical",
            Severity::High => "high",
            Severity::Medium => "medium",
            Severity::Low => "low",
            Severity::Info => "info",
        }
    }

    /// Capitalized label used in Markdown headings.
    pub fn title(self) -> &'static str {
        match self {
            Severity::Critical => "Critical",
            Severity::High => "High",
            Severity::Medium => "Medium",
            Severity::Low => "Low",
            Severity::Info => "Info",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Severity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "critical" => Ok(Severity::Critical),
            "high" => Ok(Severity::High),
            "medium" => Ok(Severity::Medium),
            "low" => Ok(Severity::Low),
            "info" => Ok(Severity::Info),
            other => Err(format!("unknown severity {other:?}")),
        }
    }
}

/// Orders `a` before `b` when `a` is more severe: `Less` means "a first".
pub fn compare_severity(a: Severity, b: Severity) -> Ordering {
    b.cmp(&a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewMode {
    Full,
    SingleAgent,
    NoContext,
    NoPriority,
}

impl ReviewMode {
    pub const ALL: [ReviewMode; 4] = [
        ReviewMode::Full,
        ReviewMode::SingleAgent,
        ReviewMode::NoContext,
        ReviewMode::NoPriority,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReviewMode::Full => "full",
            ReviewMode::SingleAgent => "single_agent",
            ReviewMode::NoContext => "no_context",
            ReviewMode::NoPriority => "no_priority",
        }
    }

    pub fn has_context(self) -> bool {
        matches!(self, ReviewMode::Full | ReviewMode::NoPriority)
    }

    pub fn has_priority(self) -> bool {
        matches!(self, ReviewMode::Full | ReviewMode::NoContext)
    }
}

impl fmt::Display for ReviewMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReviewMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(ReviewMode::Full),
            "single_agent" => Ok(ReviewMode::SingleAgent),
            "no_context" => Ok(ReviewMode::NoContext),
            "no_priority" => Ok(ReviewMode::NoPriority),
            _ => Err(format!(
                "unknown mode {s:?} (expected full, single_agent, no_context or no_priority)"
            )),
        }
    }
}

/// A GitHub repository, optionally narrowed to one pull request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoSource {
    pub owner: String,
    pub name: String,
    pub pr_number: Option<u64>,
    pub original_url: String,
}

impl RepoSource {
    pub fn canonical_url(&self) -> String {
        format!("https://github.com/{}/{}", self.owner, self.name)
    }

    pub fn slug(&self) -> String {
        format!("{}/{}", self.owner, self.name)
    }

    pub fn is_pull_request(&self) -> bool {
        self.pr_number.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UrlError {
    #[error("malformed repository URL {url:?}: {reason}")]
    Malformed { url: String, reason: String },
    #[error("unsupported host {host:?}: only github.com repositories are accepted")]
    Host { host: String },
    #[error("repository URL {url:?} is missing the {part} segment")]
    MissingSegment { url: String, part: &'static str },
    #[error("invalid pull request number {value:?}: must be a positive integer")]
    PullNumber { value: String },
}

/// Parses `https://github.com/{owner}/{name}` with an optional `.git`,
/// trailing slash, or `/pull/{n}` suffix. `pr_override` wins over a number
/// embedded in the URL.
pub fn parse_repo_url(url: &str, pr_override: Option<u64>) -> Result<RepoSource, UrlError> {
    let malformed = |reason: &str| UrlError::Malformed {
        url: url.to_string(),
        reason: reason.to_string(),
    };
    let trimmed = url.trim();
    let rest = trimmed
        .strip_prefix("https://")
        .or_else(|| trimmed.strip_prefix("http://"))
        .ok_or_else(|| malformed("expected an http(s):// scheme"))?;
    let rest = rest.split(['?', '#']).next().unwrap_or_default();
    let (host, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i + 1..]),
        None => (rest, ""),
    };
    if host.is_empty() {
        return Err(malformed("empty host"));
    }
    let host_lc = host.to_ascii_lowercase();
    if host_lc != "github.com" && host_lc != "www.github.com" {
        return Err(UrlError::Host {
            host: host.to_string(),
        });
    }

    let mut segments: Vec<&str> = path.split('/').collect();
    while segments.last() == Some(&"") {
        segments.pop();
    }
    if segments.iter().any(|s| s.is_empty()) {
        return Err(malformed("empty path segment"));
    }
    let owner = *segments.first().ok_or(UrlError::MissingSegment {
        url: url.to_string(),
        part: "owner",
    })?;
    let raw_name = *segments.get(1).ok_or(UrlError::MissingSegment {
        url: url.to_string(),
        part: "name",
    })?;
    let name = raw_name.strip_suffix(".git").unwrap_or(raw_name);
    if name.is_empty() {
        return Err(UrlError::MissingSegment {
            url: url.to_string(),
            part: "name",
        });
    }

    let embedded_pr = match &segments[2..] {
        [] => None,
        ["pull", n] | ["pull", n, ..] if segments.len() <= 5 => Some(parse_pr_number(n)?),
        _ => return Err(malformed("unexpected path after owner/name")),
    };
    if segments.len() > 2 && raw_name != name {
        return Err(malformed("'.git' suffix must terminate the URL"));
    }

    let pr_number = match pr_override {
        Some(0) => {
            return Err(UrlError::PullNumber {
                value: "0".to_string(),
            })
        }
        Some(n) => Some(n),
        None => embedded_pr,
    };

    Ok(RepoSource {
        owner: owner.to_string(),
        name: name.to_string(),
        pr_number,
        original_url: trimmed.to_string(),
    })
}

fn parse_pr_number(raw: &str) -> Result<u64, UrlError> {
    match raw.parse::<u64>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(UrlError::PullNumber {
            value: raw.to_string(),
        }),
    }
}

/// One structured review finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewComment {
    pub id: String,
    pub file: String,
    pub line: u32,
    pub severity: Severity,
    pub issue: String,
    pub suggestion: String,
    pub snippet: String,
}

impl ReviewComment {
    pub fn new(
        file: impl Into<String>,
        line: u32,
        severity: Severity,
        issue: impl Into<String>,
        suggestion: impl Into<String>,
    ) -> Self {
        let file = file.into();
        let issue = issue.into();
        let id = comment_id(&file, line, &issue);
        ReviewComment {
            id,
            file,
            line,
            severity,
            issue,
            suggestion: suggestion.into(),
            snippet: String::new(),
        }
    }
}

/// First 12 hex chars of SHA-256 over `{file}\n{line}\n{normalized issue}`.
pub fn comment_id(file: &str, line: u32, issue: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("{file}\n{line}\n{}", normalize_issue(issue)).as_bytes());
    let digest = hasher.finalize();
    hex::encode(digest)[..12].to_string()
}

/// True for forward-slash, non-absolute paths without `.` or `..` segments.
pub fn is_clean_relative_path(path: &str) -> bool {
    !path.is_empty()
        && !path.starts_with('/')
        && !path.contains('\\')
        && !path.contains(':')
        && path
            .split('/')
            .all(|seg| !seg.is_empty() && seg != "." && seg != "..")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Binary,
    Oversized,
    Generated,
    ExcludedByConfig,
    OverFileLimit,
    Unreadable,
}

impl SkipReason {
    pub const ALL: [SkipReason; 6] = [
        SkipReason::Binary,
        SkipReason::Oversized,
        SkipReason::Generated,
        SkipReason::ExcludedByConfig,
        SkipReason::OverFileLimit,
        SkipReason::Unreadable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::Binary => "binary",
            SkipReason::Oversized => "oversized",
            SkipReason::Generated => "generated",
            SkipReason::ExcludedByConfig => "excluded_by_config",
            SkipReason::OverFileLimit => "over_file_limit",
            SkipReason::Unreadable => "unreadable",
        }
    }
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: SkipReason,
}

/// Counts per skip reason, in `SkipReason::ALL` order, omitting zero counts.
pub fn skip_tally(skipped: &[SkippedFile]) -> Vec<(SkipReason, usize)> {
    SkipReason::ALL
        .iter()
        .map(|&r| (r, skipped.iter().filter(|s| s.reason == r).count()))
        .filter(|&(_, n)| n > 0)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub text: String,
    pub tree_excerpt: String,
    pub readme_excerpt: String,
    pub preview_paths: Vec<String>,
    pub truncated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub files_reviewed: u64,
    pub files_skipped: u64,
    pub provider_calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub est_cost_usd: f64,
    pub duration_s: f64,
    pub parse_failures: u64,
    pub retries: u64,
    /// Files whose review call failed after retries.
    pub review_failures: u64,
    pub dropped_findings: u64,
    pub coerced_fields: u64,
    pub duplicates_removed: u64,
    pub context_degraded: bool,
    pub summary_degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub schema_version: String,
    pub source: RepoSource,
    pub mode: ReviewMode,
    pub model_id: String,
    #[serde(with = "rfc3339")]
    pub generated_at: DateTime<Utc>,
    pub context: Option<ContextSummary>,
    pub findings: Vec<ReviewComment>,
    pub skipped: Vec<SkippedFile>,
    pub summary_text: String,
    pub stats: RunStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Clone,
    Context,
    Review,
    Priority,
    Summary,
    Artifacts,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Clone => "clone",
            Stage::Context => "context",
            Stage::Review => "review",
            Stage::Priority => "priority",
            Stage::Summary => "summary",
            Stage::Artifacts => "artifacts",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Started,
    Progress,
    Completed,
    Failed,
}

impl StageStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StageStatus::Started => "started",
            StageStatus::Progress => "progress",
            StageStatus::Completed => "completed",
            StageStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub job_id: String,
    pub seq: u64,
    pub stage: Stage,
    pub status: StageStatus,
    pub detail: String,
    pub current: Option<u64>,
    pub total: Option<u64>,
    #[serde(with = "rfc3339")]
    pub timestamp: DateTime<Utc>,
}

/// UTC RFC 3339 with a `Z` suffix and only as many fractional digits as needed.
pub mod rfc3339 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn format(ts: &DateTime<Utc>) -> String {
        ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
    }

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

pub const TRUNCATION_MARKER: &str = "…[truncated]";

/// A single broken invariant found by [`validate_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation(pub String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Checks every report invariant and returns all violations found.
pub fn validate_report(report: &ReviewReport) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut bad = |msg: String| out.push(Violation(msg));

    if report.schema_version != SCHEMA_VERSION {
        bad(format!(
            "schema_version must be {SCHEMA_VERSION:?}, got {:?}",
            report.schema_version
        ));
    }

    let src = &report.source;
    for (label, seg) in [("owner", &src.owner), ("name", &src.name)] {
        if seg.is_empty() || seg.contains('/') {
            bad(format!("source.{label} must be nonempty and contain no '/'"));
        }
    }
    if src.pr_number == Some(0) {
        bad("source.pr_number must be positive".into());
    }

    match (&report.context, report.mode.has_context()) {
        (Some(_), false) => bad(format!("context must be absent in {} mode", report.mode)),
        (None, true) => bad(format!("context must be present in {} mode", report.mode)),
        (Some(ctx), true) => {
            if ctx.truncated
                && !ctx.tree_excerpt.ends_with(TRUNCATION_MARKER)
                && !ctx.readme_excerpt.ends_with(TRUNCATION_MARKER)
            {
                bad("context.truncated is set but no excerpt ends with the truncation marker".into());
            }
            for p in &ctx.preview_paths {
                if !is_clean_relative_path(p) {
                    bad(format!("context preview path {p:?} is not a clean relative path"));
                }
            }
        }
        (None, false) => {}
    }

    for (i, c) in report.findings.iter().enumerate() {
        if !is_clean_relative_path(&c.file) {
            bad(format!("finding {i}: file {:?} is not a clean relative path", c.file));
        }
        if c.line < 1 {
            bad(format!("finding {i}: line must be >= 1"));
        }
        if c.issue.trim().is_empty() {
            bad(format!("finding {i}: issue must be nonempty"));
        }
        let expected = comment_id(&c.file, c.line, &c.issue);
        if c.id != expected {
            bad(format!("finding {i}: id {:?} does not match content hash {expected:?}", c.id));
        }
    }

    if report.mode.has_priority() {
        let sorted = report
            .findings
            .windows(2)
            .all(|w| crate::priority::rank_order(&w[0], &w[1]) != Ordering::Greater);
        if !sorted {
            bad("findings not sorted".into());
        }
    }

    for s in &report.skipped {
        if !is_clean_relative_path(&s.path) {
            bad(format!("skipped path {:?} is not a clean relative path", s.path));
        }
    }

    let st = &report.stats;
    if !(st.est_cost_usd.is_finite() && st.est_cost_usd >= 0.0) {
        bad("stats.est_cost_usd must be a non-negative number".into());
    }
    if !(st.duration_s.is_finite() && st.duration_s >= 0.0) {
        bad("stats.duration_s must be a non-negative number".into());
    }
    if st.files_skipped != report.skipped.len() as u64 {
        bad(format!(
            "stats.files_skipped ({}) disagrees with skipped list length ({})",
            st.files_skipped,
            report.skipped.len()
        ));
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_plain_repo_url() {
        let src = parse_repo_url("https://github.com/octocat/Hello-World", None).unwrap();
        assert_eq!(src.owner, "octocat");
        assert_eq!(src.name, "Hello-World");
        assert_eq!(src.pr_number, None);
        assert_eq!(src.canonical_url(), "https://github.com/octocat/Hello-World");
    }

    #[test]
    fn strips_git_suffix_and_slash() {
        let src = parse_repo_url("https://github.com/a/b.git/", None).unwrap();
        assert_eq!((src.owner.as_str(), src.name.as_str()), ("a", "b"));
        assert_eq!(src.pr_number, None);
    }

    #[test]
    fn reads_pull_suffix_and_override() {
        let src = parse_repo_url("https://github.com/a/b/pull/42", None).unwrap();
        assert_eq!(src.pr_number, Some(42));
        let src = parse_repo_url("https://github.com/a/b/pull/42", Some(7)).unwrap();
        assert_eq!(src.pr_number, Some(7));
        let src = parse_repo_url("https://github.com/a/b/pull/42/files", None).unwrap();
        assert_eq!(src.pr_number, Some(42));
    }

    #[test]
    fn rejects_bad_urls() {
        assert!(matches!(
            parse_repo_url("not a url", None),
            Err(UrlError::Malformed { .. })
        ));
        assert!(matches!(
            parse_repo_url("https://gitlab.com/a/b", None),
            Err(UrlError::Host { .. })
        ));
        assert!(matches!(
            parse_repo_url("https://github.com/a", None),
            Err(UrlError::MissingSegment { part: "name", .. })
        ));
        assert!(matches!(
            parse_repo_url("https://github.com/", None),
            Err(UrlError::MissingSegment { part: "owner", .. })
        ));
        assert!(matches!(
            parse_repo_url("https://github.com/a/b/pull/0", None),
            Err(UrlError::PullNumber { .. })
        ));
        assert!(parse_repo_url("https://github.com/a/b/tree/main", None).is_err());
        assert!(parse_repo_url("https://github.com/a/b", Some(0)).is_err());
    }

    #[test]
    fn severity_order() {
        assert_eq!(
            compare_severity(Severity::Critical, Severity::High),
            Ordering::Less
        );
        assert_eq!(compare_severity(Severity::Info, Severity::Info), Ordering::Equal);
        let mut v = vec![Severity::Low, Severity::Critical, Severity::Medium];
        v.sort_by(|a, b| compare_severity(*a, *b));
        assert_eq!(v, vec![Severity::Critical, Severity::Medium, Severity::Low]);
    }

    #[test]
    fn comment_ids_are_stable() {
        let a = ReviewComment::new("src/a.rs", 3, Severity::High, "Unused variable x.", "");
        let b = ReviewComment::new("src/a.rs", 3, Severity::Low, "unused   variable X", "other");
        assert_eq!(a.id, b.id);
        assert_eq!(a.id.len(), 12);
        assert_ne!(a.id, ReviewComment::new("src/b.rs", 3, Severity::High, "Unused variable x.", "").id);
        assert_ne!(a.id, ReviewComment::new("src/a.rs", 4, Severity::High, "Unused variable x.", "").id);
        assert_ne!(a.id, ReviewComment::new("src/a.rs", 3, Severity::High, "Unused constant x.", "").id);
    }

    #[test]
    fn clean_paths() {
        assert!(is_clean_relative_path("a/b.c"));
        assert!(is_clean_relative_path("README"));
        assert!(!is_clean_relative_path("/etc/passwd"));
        assert!(!is_clean_relative_path("a/../b"));
        assert!(!is_clean_relative_path("a\\b"));
        assert!(!is_clean_relative_path(""));
    }

    fn sev() -> impl Strategy<Value = Severity> {
        prop::sample::select(Severity::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn url_render_roundtrip(
            owner in "[A-Za-z0-9][A-Za-z0-9-]{0,15}",
            name in "[A-Za-z0-9_.-]{0,12}[A-Za-z0-9_-]",
            pr in proptest::option::of(1u64..100_000),
            git in any::<bool>(),
            slash in any::<bool>(),
        ) {
            prop_assume!(name != "." && name != ".." && !name.ends_with(".git"));
            let mut url = format!("https://github.com/{owner}/{name}");
            match pr {
                Some(n) => url.push_str(&format!("/pull/{n}")),
                None if git => url.push_str(".git"),
                None => {}
            }
            if slash { url.push('/'); }
            let src = parse_repo_url(&url, None).unwrap();
            let again = parse_repo_url(&src.canonical_url(), src.pr_number).unwrap();
            prop_assert_eq!(&src.owner, &owner);
            prop_assert_eq!(&src.name, &name);
            prop_assert_eq!(src.pr_number, pr);
            prop_assert_eq!((again.owner, again.name, again.pr_number), (src.owner, src.name, src.pr_number));
        }

        #[test]
        fn severity_is_total_order(a in sev(), b in sev(), c in sev()) {
            let ab = compare_severity(a, b);
            prop_assert_eq!(ab, compare_severity(b, a).reverse());
            prop_assert_eq!(ab == Ordering::Equal, a == b);
            if ab != Ordering::Greater && compare_severity(b, c) != Ordering::Greater {
                prop_assert_ne!(compare_severity(a, c), Ordering::Greater);
            }
        }
    }
}
