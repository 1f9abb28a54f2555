//! Local-first repository review engine.
//!
//! A run clones a repository (or a pull request head), selects reviewable
//! files, synthesizes project context, reviews each file with a model,
//! deduplicates and ranks the findings, summarizes them and writes
//! `review.json` and `review.md`. The [`orchestrator`] drives the stages;
//! the CLI and HTTP service are thin wrappers over [`orchestrator::run_review`].

pub mod acquisition;
pub mod artifacts;
pub mod clock;
pub mod context;
pub mod eval;
pub mod gateway;
pub mod github;
pub mod model;
pub mod orchestrator;
pub mod priority;
pub mod review;
pub mod selection;
pub mod summary;
pub mod testkit;

pub use model::{
    parse_repo_url, validate_report, ProgressEvent, RepoSource, ReviewComment, ReviewMode, ReviewReport, RunStats,
    Severity, SkipReason, SkippedFile, Stage, StageStatus,
};
pub use orchestrator::{plan_stages, run_review, RunDeps, RunError, RunOutcome};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every embedded prompt template, by name, in pipeline order.
pub fn prompt_templates() -> [(&'static str, &'static str); 5] {
    [
        ("context.system", context::CONTEXT_SYSTEM_PROMPT),
        ("context.instruction", context::CONTEXT_INSTRUCTION),
        ("review.system", review::REVIEW_SYSTEM_PROMPT),
        ("summary.system", summary::SUMMARY_SYSTEM_PROMPT),
        ("single_agent.system", review::COMBINED_SYSTEM_PROMPT),
    ]
}
