//! Final human-readable summary, with a deterministic digest fallback.

use crate::gateway::{Gateway, Message};
use crate::model::{skip_tally, ContextSummary, ReviewComment, Severity, SkippedFile};
use crate::priority::top_k;

pub const SUMMARY_SYSTEM_PROMPT: &str = "You are the summary agent in a multi-stage code review pipeline. \
You receive the highest-ranked findings of a repository review and a tally of files that were skipped. \
Write a concise reviewer summary (at most 300 words) in plain text: the overall state of the code, the \
most important problems, and a prioritized action list. Mention skipped-file categories when they \
limit the review's coverage.";

pub const PROMPT_TOP_K: usize = 10;
pub const FALLBACK_TOP_K: usize = 5;

pub fn finding_line(c: &ReviewComment) -> String {
    format!("{} — {}:{} — {}", c.severity, c.file, c.line, c.issue)
}

pub fn skip_tally_line(skipped: &[SkippedFile]) -> String {
    let tally = skip_tally(skipped);
    if tally.is_empty() {
        return "Skipped files: none".to_string();
    }
    let parts: Vec<String> = tally.iter().map(|(r, n)| format!("{r}: {n}")).collect();
    format!("Skipped files: {}", parts.join(", "))
}

pub fn build_summary_prompt(
    ranked: &[ReviewComment],
    skipped: &[SkippedFile],
    context: Option<&ContextSummary>,
) -> Vec<Message> {
    let mut user = String::new();
    user.push_str(&format!("## TOP FINDINGS ({} total)\n", ranked.len()));
    if ranked.is_empty() {
        user.push_str("No findings.\n");
    }
    for c in top_k(ranked, PROMPT_TOP_K) {
        user.push_str(&finding_line(c));
        user.push('\n');
    }
    user.push_str("\n## SKIPPED FILES\n");
    user.push_str(&skip_tally_line(skipped));
    user.push('\n');
    if let Some(ctx) = context {
        user.push_str("\n## PROJECT CONTEXT\n");
        user.push_str(ctx.text.trim());
        user.push('\n');
    }
    vec![Message::system(SUMMARY_SYSTEM_PROMPT), Message::user(user)]
}

/// Digest of counts, top findings and skip tally. Pure in its inputs.
pub fn fallback_summary(ranked: &[ReviewComment], skipped: &[SkippedFile]) -> String {
    let n = ranked.len();
    let mut out = format!(
        "Automated summary unavailable; digest of {n} {}.\n",
        if n == 1 { "finding" } else { "findings" }
    );
    let counts: Vec<String> = Severity::ALL
        .iter()
        .map(|&s| (s, ranked.iter().filter(|c| c.severity == s).count()))
        .filter(|&(_, k)| k > 0)
        .map(|(s, k)| format!("{s}: {k}"))
        .collect();
    if !counts.is_empty() {
        out.push_str(&format!("Severity counts: {}\n", counts.join(", ")));
    }
    let top = top_k(ranked, FALLBACK_TOP_K);
    if !top.is_empty() {
        out.push_str("Top findings:\n");
        for c in top {
            out.push_str(&format!("- {}\n", finding_line(c)));
        }
    }
    out.push_str(&skip_tally_line(skipped));
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryOutcome {
    pub text: String,
    pub degraded: bool,
    pub error: Option<String>,
}

pub fn summarize(
    ranked: &[ReviewComment],
    skipped: &[SkippedFile],
    context: Option<&ContextSummary>,
    gateway: &Gateway,
) -> SummaryOutcome {
    match gateway.complete(build_summary_prompt(ranked, skipped, context), 1024) {
        Ok(resp) if !resp.text.trim().is_empty() => SummaryOutcome {
            text: resp.text.trim().to_string(),
            degraded: false,
            error: None,
        },
        Ok(_) => SummaryOutcome {
            text: fallback_summary(ranked, skipped),
            degraded: true,
            error: Some("empty summary response".into()),
        },
        Err(e) => SummaryOutcome {
            text: fallback_summary(ranked, skipped),
            degraded: true,
            error: Some(e.to_string()),
        },
    }
}
