//! Offline, deterministic provider that answers the pipeline's own prompts
//! with pattern-based findings. Used for demos and for producing fixture
//! transcripts without a model.

use serde_json::{json, Value};

use super::{ChatProvider, ModelRequest, ModelResponse, ProviderError, Role};
use crate::context::CONTEXT_SYSTEM_PROMPT;
use crate::review::{COMBINED_SYSTEM_PROMPT, FILE_HEADING, REVIEW_SYSTEM_PROMPT};
use crate::summary::SUMMARY_SYSTEM_PROMPT;

#[derive(Debug, Default, Clone, Copy)]
pub struct HeuristicProvider;

struct Rule {
    severity: &'static str,
    issue: &'static str,
    suggestion: &'static str,
    hit: fn(&str) -> bool,
}

const RULES: &[Rule] = &[
    Rule {
        severity: "critical",
        issue: "Possible hard-coded credential",
        suggestion: "Load secrets from the environment or a secret store.",
        hit: |l| {
            let lc = l.to_ascii_lowercase();
            ["password", "secret", "api_key", "apikey", "token"].iter().any(|k| lc.contains(k))
                && l.contains('=')
                && (l.contains('"') || l.contains('\''))
        },
    },
    Rule {
        severity: "high",
        issue: "eval() executes dynamically constructed code",
        suggestion: "Parse the input explicitly instead of evaluating it.",
        hit: |l| l.contains("eval("),
    },
    Rule {
        severity: "medium",
        issue: "unwrap() panics when the value is missing",
        suggestion: "Propagate the error or handle the failure case.",
        hit: |l| l.contains(".unwrap()"),
    },
    Rule {
        severity: "low",
        issue: "Unresolved TODO/FIXME comment",
        suggestion: "Resolve it or track it in an issue.",
        hit: |l| l.contains("TODO") || l.contains("FIXME"),
    },
    Rule {
        severity: "info",
        issue: "Line longer than 120 characters",
        suggestion: "Wrap the line to keep it readable.",
        hit: |l| l.chars().count() > 120,
    },
];

/// Parses `N: text` lines following a `## FILE:` heading.
fn file_sections(user: &str) -> Vec<(String, Vec<(u64, String)>)> {
    let mut out: Vec<(String, Vec<(u64, String)>)> = Vec::new();
    for line in user.lines() {
        if let Some(path) = line.strip_prefix(FILE_HEADING) {
            out.push((path.trim().to_string(), Vec::new()));
            continue;
        }
        let Some((_, lines)) = out.last_mut() else { continue };
        if let Some((num, text)) = line.split_once(": ") {
            if let Ok(n) = num.parse::<u64>() {
                lines.push((n, text.to_string()));
            }
        } else if let Some(num) = line.strip_suffix(':') {
            if let Ok(n) = num.parse::<u64>() {
                lines.push((n, String::new()));
            }
        }
    }
    out
}

fn findings_for(path: &str, lines: &[(u64, String)]) -> Vec<Value> {
    let mut out = Vec::new();
    let base = path.rsplit('/').next().unwrap_or(path).to_ascii_lowercase();
    if base.starts_with("readme") {
        let meaningful = lines.iter().filter(|(_, t)| !t.trim().is_empty()).count();
        if meaningful < 3 {
            out.push(json!({
                "file": path,
                "line": 1,
                "severity": "low",
                "issue": "README is minimal and does not describe the project",
                "suggestion": "Describe the project's purpose, installation and usage.",
            }));
        }
    }
    for (n, text) in lines {
        for rule in RULES {
            if (rule.hit)(text) {
                out.push(json!({
                    "file": path,
                    "line": n,
                    "severity": rule.severity,
                    "issue": rule.issue,
                    "suggestion": rule.suggestion,
                }));
            }
        }
    }
    out
}

fn context_reply(user: &str) -> String {
    let mut section = "";
    let mut entries = 0usize;
    let mut readme_line = None;
    for line in user.lines() {
        if line.starts_with("## ") {
            section = line;
            continue;
        }
        match section {
            "## REPOSITORY TREE" if !line.is_empty() && !line.starts_with("skipped ") => entries += 1,
            "## README" if readme_line.is_none() && !line.trim().is_empty() && line != "(no README)" => {
                readme_line = Some(line.trim().trim_start_matches('#').trim().to_string())
            }
            _ => {}
        }
    }
    match readme_line {
        Some(l) => format!(
            "Repository with {entries} entries in its reviewed tree. The README opens with: \"{l}\"."
        ),
        None => format!("Repository with {entries} entries in its reviewed tree and no README."),
    }
}

fn summary_reply(user: &str) -> String {
    let findings: Vec<&str> = user.lines().filter(|l| l.contains(" — ")).collect();
    if findings.is_empty() {
        return "No findings were reported. Nothing needs immediate action.".into();
    }
    let mut out = format!(
        "The review surfaced {} ranked finding(s). Address them in this order:\n",
        findings.len()
    );
    for (i, f) in findings.iter().take(5).enumerate() {
        out.push_str(&format!("{}. {f}\n", i + 1));
    }
    out.trim_end().to_string()
}

impl ChatProvider for HeuristicProvider {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let system = request
            .messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let user: String = request
            .messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");

        let text = if system == CONTEXT_SYSTEM_PROMPT {
            context_reply(&user)
        } else if system == REVIEW_SYSTEM_PROMPT {
            let all: Vec<Value> = file_sections(&user)
                .iter()
                .flat_map(|(p, lines)| findings_for(p, lines))
                .collect();
            serde_json::to_string_pretty(&all).expect("json")
        } else if system == SUMMARY_SYSTEM_PROMPT {
            summary_reply(&user)
        } else if system == COMBINED_SYSTEM_PROMPT {
            let all: Vec<Value> = file_sections(&user)
                .iter()
                .flat_map(|(p, lines)| findings_for(p, lines))
                .collect();
            let summary = format!(
                "Single-pass review found {} issue(s) across the provided files.",
                all.len()
            );
            json!({ "findings": all, "summary": summary }).to_string()
        } else {
            "[]".to_string()
        };
        Ok(ModelResponse::estimated(request, text))
    }
}
