//! `review.json` and `review.md` writers.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{rfc3339, skip_tally, validate_report, ReviewReport, Severity, Violation};

pub const JSON_NAME: &str = "review.json";
pub const MARKDOWN_NAME: &str = "review.md";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("report failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("cannot write artifacts to {dir}: {source}")]
    Io {
        dir: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactPaths {
    pub json: PathBuf,
    pub markdown: PathBuf,
}

/// Canonical serialization: schema field order, two-space indent, trailing
/// newline.
pub fn report_json(report: &ReviewReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn atomic_write(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, ArtifactError> {
    let io = |source| ArtifactError::Io {
        dir: dir.to_path_buf(),
        source,
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(&format!(".{name}."))
        .tempfile_in(dir)
        .map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    let target = dir.join(name);
    tmp.persist(&target).map_err(|e| io(e.error))?;
    Ok(target)
}

pub fn write_json_report(report: &ReviewReport, dir: &Path) -> Result<PathBuf, ArtifactError> {
    validate_report(report).map_err(ArtifactError::Invalid)?;
    atomic_write(dir, JSON_NAME, report_json(report).as_bytes())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn fence_for(body: &str) -> String {
    let mut longest = 0;
    let mut run = 0;
    for ch in body.chars() {
        if ch == '`' {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    "`".repeat((longest + 1).max(3))
}

pub fn render_markdown(report: &ReviewReport) -> String {
    let src = &report.source;
    let mut md = String::new();
    match src.pr_number {
        Some(n) => md.push_str(&format!("# Code Review: {}/{} (PR #{n})\n\n", src.owner, src.name)),
        None => md.push_str(&format!("# Code Review: {}/{}\n\n", src.owner, src.name)),
    }
    let st = &report.stats;
    md.push_str(&format!("- **Repository:** {}\n", src.canonical_url()));
    md.push_str(&format!("- **Mode:** {}\n", report.mode));
    md.push_str(&format!("- **Model:** {}\n", report.model_id));
    md.push_str(&format!("- **Generated:** {}\n", rfc3339::format(&report.generated_at)));
    md.push_str(&format!("- **Duration:** {:.1} s\n", st.duration_s));
    md.push_str(&format!("- **Estimated cost:** ${:.4}\n", st.est_cost_usd));
    md.push_str(&format!(
        "- **Files:** {} reviewed, {} skipped\n\n",
        st.files_reviewed, st.files_skipped
    ));

    md.push_str("## Summary\n\n");
    md.push_str(report.summary_text.trim());
    md.push_str("\n\n## Findings\n\n");
    if report.findings.is_empty() {
        md.push_str("_No findings._\n\n");
    }
    for sev in Severity::ALL {
        let bucket: Vec<_> = report.findings.iter().filter(|c| c.severity == sev).collect();
        if bucket.is_empty() {
            continue;
        }
        md.push_str(&format!("### {}\n\n", sev.title()));
        for c in bucket {
            md.push_str(&format!("- **{}:{}** — {}\n", c.file, c.line, one_line(&c.issue)));
            if !c.suggestion.trim().is_empty() {
                md.push_str(&format!("  Suggestion: {}\n", one_line(&c.suggestion)));
            }
            if !c.snippet.is_empty() {
                let fence = fence_for(&c.snippet);
                md.push_str(&format!("\n  {fence}\n"));
                for line in c.snippet.lines() {
                    md.push_str("  ");
                    md.push_str(line);
                    md.push('\n');
                }
                md.push_str(&format!("  {fence}\n"));
            }
            md.push('\n');
        }
    }

    md.push_str("## Skipped Files\n\n");
    if report.skipped.is_empty() {
        md.push_str("_No files were skipped._\n");
    } else {
        md.push_str("| Reason | Count |\n| --- | --- |\n");
        for (reason, n) in skip_tally(&report.skipped) {
            md.push_str(&format!("| {reason} | {n} |\n"));
        }
        md.push('\n');
        for s in &report.skipped {
            md.push_str(&format!("- `{}` ({})\n", s.path, s.reason));
        }
    }
    md
}

pub fn write_markdown_report(report: &ReviewReport, dir: &Path) -> Result<PathBuf, ArtifactError> {
    atomic_write(dir, MARKDOWN_NAME, render_markdown(report).as_bytes())
}

/// Writes both artifacts, creating `dir` if needed.
pub fn write_all(report: &ReviewReport, dir: &Path) -> Result<ArtifactPaths, ArtifactError> {
    validate_report(report).map_err(ArtifactError::Invalid)?;
    std::fs::create_dir_all(dir).map_err(|source| ArtifactError::Io {
        dir: dir.to_path_buf(),
        source,
    })?;
    let json = write_json_report(report, dir)?;
    let markdown = write_markdown_report(report, dir)?;
    Ok(ArtifactPaths { json, markdown })
}
