//! Per-file review: prompt construction, defensive parsing of model output,
//! and snippet attachment.

use serde_json::Value;

use crate::gateway::{Gateway, Message};
use crate::model::{ContextSummary, ReviewComment, Severity, TRUNCATION_MARKER};
use crate::selection::FileEntry;

pub const REVIEW_SYSTEM_PROMPT: &str = "You are the review agent in a multi-stage code review pipeline. \
You review exactly one file from a repository and report concrete, actionable problems: bugs, security \
issues, error handling gaps, performance traps, and maintainability problems. Do not report style nits \
unless nothing else is wrong.\n\
Output contract: respond with only a JSON array of objects with keys file, line, severity, issue, \
suggestion; severity one of critical|high|medium|low|info. `line` is the 1-based line number shown \
before each source line. Respond with [] when there is nothing to report.";

pub const COMBINED_SYSTEM_PROMPT: &str = "You are a code reviewer. You are given a repository tree and \
the contents of its files. Review them and report concrete, actionable problems, then summarize the \
review for a maintainer.\n\
Output contract: respond with only a JSON object {\"findings\": [...], \"summary\": \"...\"} where each \
finding is an object with keys file, line, severity, issue, suggestion; severity one of \
critical|high|medium|low|info; file is the path exactly as given after FILE:; line is the 1-based \
line number shown before each source line. The summary is concise (at most 300 words) and ends with a \
prioritized action list.";

pub const CONTEXT_HEADING: &str = "## PROJECT CONTEXT";
pub const FILE_HEADING: &str = "## FILE: ";
pub const TREE_HEADING: &str = "## REPOSITORY TREE";
pub const MAX_REVIEW_CONTENT_CHARS: usize = 48_000;
pub const DEFAULT_SNIPPET_RADIUS: u32 = 2;
const MAX_JSON_CANDIDATES: usize = 64;

/// `N: ` prefixed lines, joined with newlines.
pub fn number_lines<'a>(lines: impl Iterator<Item = &'a str>, first: usize) -> String {
    lines
        .enumerate()
        .map(|(i, l)| format!("{}: {}", first + i, l.strip_suffix('\r').unwrap_or(l)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn file_block(file: &FileEntry, limit: usize) -> String {
    let mut out = format!("{FILE_HEADING}{}\n", file.path);
    if file.content.is_empty() {
        out.push_str("(empty file)\n");
        return out;
    }
    if file.content.chars().count() > limit {
        let cut: String = file.content.chars().take(limit).collect();
        out.push_str(&number_lines(cut.split('\n'), 1));
        out.push('\n');
        out.push_str(TRUNCATION_MARKER);
        out.push_str(&format!(
            "\nNOTE: this file was truncated to its first {limit} characters; review only the lines shown.\n"
        ));
    } else {
        out.push_str(&number_lines(file.lines(), 1));
        out.push('\n');
    }
    out
}

pub fn build_review_prompt(file: &FileEntry, context: Option<&ContextSummary>) -> Vec<Message> {
    let mut user = String::new();
    if let Some(ctx) = context {
        user.push_str(CONTEXT_HEADING);
        user.push('\n');
        user.push_str(ctx.text.trim());
        user.push_str("\n\n");
    }
    user.push_str(&file_block(file, MAX_REVIEW_CONTENT_CHARS));
    vec![Message::system(REVIEW_SYSTEM_PROMPT), Message::user(user)]
}

/// Result of coercing one model response.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOutcome {
    pub comments: Vec<ReviewComment>,
    /// Elements discarded (no usable issue text, not an object, unknown file).
    pub dropped: u64,
    /// Fields replaced by a default or corrected.
    pub coerced: u64,
    /// No JSON payload could be found at all.
    pub parse_failed: bool,
}

/// Body of the first fenced code block, when the text has one.
fn fenced_body(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
    let body = &after[body_start..];
    Some(match body.find("```") {
        Some(end) => &body[..end],
        None => body,
    })
}

/// Byte index of the bracket closing the one at `open`, ignoring brackets
/// inside string literals.
fn matching_close(bytes: &[u8], open: usize) -> Option<usize> {
    let mut stack: Vec<u8> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'[' => stack.push(b']'),
            b'{' => stack.push(b'}'),
            b']' | b'}' => {
                if stack.pop() != Some(b) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Finds the first balanced `[...]` or `{...}` slice that parses as JSON.
pub fn extract_json(text: &str) -> Option<Value> {
    let scan = |hay: &str| -> Option<Value> {
        let bytes = hay.as_bytes();
        bytes
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == b'[' || b == b'{')
            .take(MAX_JSON_CANDIDATES)
            .find_map(|(i, _)| {
                let end = matching_close(bytes, i)?;
                serde_json::from_str::<Value>(&hay[i..=end]).ok()
            })
    };
    if let Some(body) = fenced_body(text) {
        if let Some(v) = scan(body) {
            return Some(v);
        }
    }
    scan(text)
}

pub fn map_severity(raw: &str) -> Option<Severity> {
    Some(match raw.trim().to_lowercase().as_str() {
        "blocker" | "critical" => Severity::Critical,
        "major" | "error" | "severe" | "high" => Severity::High,
        "warning" | "moderate" | "medium" => Severity::Medium,
        "minor" | "low" | "nit" | "nitpick" => Severity::Low,
        "info" | "note" | "style" | "informational" => Severity::Info,
        _ => return None,
    })
}

fn coerce_line(v: Option<&Value>) -> Option<i64> {
    match v? {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.is_finite()).map(|f| f.trunc().clamp(i64::MIN as f64, i64::MAX as f64) as i64)),
        Value::String(s) => {
            let s = s.trim();
            s.parse::<i64>().ok().or_else(|| {
                s.parse::<f64>()
                    .ok()
                    .filter(|f| f.is_finite())
                    .map(|f| f.trunc().clamp(i64::MIN as f64, i64::MAX as f64) as i64)
            })
        }
        _ => None,
    }
}

fn scalar_text(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Normalizes a model-supplied path for comparison with selected paths.
fn clean_model_path(p: &str) -> String {
    let p = p.trim().replace('\\', "/");
    let mut s = p.as_str();
    while let Some(rest) = s.strip_prefix("./") {
        s = rest;
    }
    s.trim_start_matches('/').to_string()
}

/// Maps a model-supplied path to the file it refers to, and whether the path
/// had to be overridden.
type Resolver<'r, 'f> = dyn Fn(Option<&str>) -> Option<(&'f FileEntry, bool)> + 'r;

fn coerce_element<'f>(
    value: &Value,
    resolve: &Resolver<'_, 'f>,
    out: &mut ParseOutcome,
) {
    let Some(obj) = value.as_object() else {
        out.dropped += 1;
        return;
    };
    let issue = match obj.get("issue") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        _ => {
            out.dropped += 1;
            return;
        }
    };
    let model_path = obj.get("file").and_then(Value::as_str);
    let Some((file, path_coerced)) = resolve(model_path) else {
        out.dropped += 1;
        return;
    };
    let mut coerced = u64::from(path_coerced);

    let max_line = file.line_count.max(1) as i64;
    let line = match coerce_line(obj.get("line")) {
        Some(n) if (1..=max_line).contains(&n) => n,
        Some(n) => {
            coerced += 1;
            n.clamp(1, max_line)
        }
        None => {
            coerced += 1;
            1
        }
    };

    let severity = match obj.get("severity").and_then(Value::as_str).and_then(map_severity) {
        Some(s) => s,
        None => {
            coerced += 1;
            Severity::Medium
        }
    };
    let suggestion = scalar_text(obj.get("suggestion"))
        .map(|s| s.trim().to_string())
        .unwrap_or_default();

    out.coerced += coerced;
    let comment = ReviewComment::new(file.path.clone(), line as u32, severity, issue, suggestion);
    out.comments.push(attach_snippet(comment, file, DEFAULT_SNIPPET_RADIUS));
}

fn findings_array(payload: Value) -> Option<(Vec<Value>, Option<String>)> {
    match payload {
        Value::Array(items) => Some((items, None)),
        Value::Object(mut obj) => {
            let summary = obj.get("summary").and_then(Value::as_str).map(str::to_string);
            match obj.remove("findings") {
                Some(Value::Array(items)) => Some((items, summary)),
                Some(_) => Some((Vec::new(), summary)),
                None if summary.is_some() => Some((Vec::new(), summary)),
                None => Some((vec![Value::Object(obj)], None)),
            }
        }
        _ => None,
    }
}

/// Parses a per-file review response. Never panics; every failure mode is
/// reflected in the counters of the returned outcome.
pub fn parse_findings(text: &str, file: &FileEntry) -> ParseOutcome {
    let mut out = ParseOutcome::default();
    let Some((items, _)) = extract_json(text).and_then(findings_array) else {
        out.parse_failed = true;
        return out;
    };
    let resolve = |p: Option<&str>| -> Option<(&FileEntry, bool)> {
        let differs = p.is_some_and(|p| clean_model_path(p) != file.path);
        Some((file, differs))
    };
    for item in &items {
        coerce_element(item, &resolve, &mut out);
    }
    out
}

/// Lines `line - radius ..= line + radius`, clamped to the file, each
/// prefixed with its number.
pub fn attach_snippet(mut comment: ReviewComment, file: &FileEntry, radius: u32) -> ReviewComment {
    let count = file.line_count;
    if count == 0 {
        comment.snippet = String::new();
        return comment;
    }
    let line = (comment.line as usize).clamp(1, count);
    let first = line.saturating_sub(radius as usize).max(1);
    let last = (line + radius as usize).min(count);
    comment.snippet = number_lines(file.lines().skip(first - 1).take(last - first + 1), first);
    comment
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FileReview {
    pub outcome: ParseOutcome,
    /// Provider failure after retries, if any.
    pub failure: Option<String>,
    pub retries: u64,
}

pub fn review_file(file: &FileEntry, context: Option<&ContextSummary>, gateway: &Gateway) -> FileReview {
    match gateway.complete(build_review_prompt(file, context), 2048) {
        Ok(resp) => FileReview {
            outcome: parse_findings(&resp.text, file),
            failure: None,
            retries: u64::from(resp.attempts.saturating_sub(1)),
        },
        Err(e) => FileReview {
            outcome: ParseOutcome::default(),
            retries: u64::from(e.attempts.saturating_sub(1)),
            failure: Some(e.to_string()),
        },
    }
}

/// Prompt for the single-call baseline: tree plus as many whole files as fit
/// in `budget_chars`, in selection order. Returns the prompt and the indices
/// of the files that made it in.
pub fn build_combined_prompt(tree: &str, files: &[FileEntry], budget_chars: usize) -> (Vec<Message>, Vec<usize>) {
    let mut user = format!("{TREE_HEADING}\n{tree}\n");
    let mut remaining = budget_chars.saturating_sub(user.chars().count());
    let mut included = Vec::new();
    for (i, f) in files.iter().enumerate() {
        let block = file_block(f, MAX_REVIEW_CONTENT_CHARS);
        let cost = block.chars().count() + 1;
        if cost > remaining {
            continue;
        }
        remaining -= cost;
        user.push('\n');
        user.push_str(&block);
        included.push(i);
    }
    (vec![Message::system(COMBINED_SYSTEM_PROMPT), Message::user(user)], included)
}

/// Parses the single-call response `{findings, summary}`. Findings must name
/// one of `files`; others are dropped.
pub fn parse_combined(text: &str, files: &[&FileEntry]) -> (ParseOutcome, Option<String>) {
    let mut out = ParseOutcome::default();
    let Some((items, summary)) = extract_json(text).and_then(findings_array) else {
        out.parse_failed = true;
        return (out, None);
    };
    let resolve = |p: Option<&str>| -> Option<(&FileEntry, bool)> {
        let wanted = clean_model_path(p?);
        files.iter().copied().find(|f| f.path == wanted).map(|f| (f, false))
    };
    for item in &items {
        coerce_element(item, &resolve, &mut out);
    }
    (out, summary.map(|s| s.trim().to_string()).filter(|s| !s.is_empty()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ten_lines() -> FileEntry {
        let body: Vec<String> = (1..=10).map(|i| format!("line {i}")).collect();
        FileEntry::from_bytes("src/x.c", body.join("\n").as_bytes())
    }

    #[test]
    fn prompt_context_section() {
        let f = FileEntry::from_bytes("a.py", b"x = 1\ny = 2\nz = 3");
        let ctx = ContextSummary {
            text: "A demo repo.".into(),
            tree_excerpt: String::new(),
            readme_excerpt: String::new(),
            preview_paths: vec![],
            truncated: false,
        };
        let with = build_review_prompt(&f, Some(&ctx));
        assert!(with[1].content.contains("PROJECT CONTEXT"));
        assert!(with[1].content.contains("A demo repo."));
        let without = build_review_prompt(&f, None);
        assert!(!without[1].content.contains("PROJECT CONTEXT"));
        assert!(without[1].content.contains("1: x = 1\n2: y = 2\n3: z = 3"));
        assert!(without[0].content.contains("respond with only a JSON array"));
    }

    #[test]
    fn prompt_truncates_huge_files() {
        let f = FileEntry::from_bytes("big.txt", "a\n".repeat(40_000).as_bytes());
        let msgs = build_review_prompt(&f, None);
        assert!(msgs[1].content.contains(TRUNCATION_MARKER));
        assert!(msgs[1].content.contains("NOTE: this file was truncated"));
        assert!(msgs[1].content.contains("24000: a"));
        assert!(!msgs[1].content.contains("24002: a"));
    }

    #[test]
    fn fenced_numeric_string_line_and_synonym() {
        let text = "```json\n[{\"line\":\"3\",\"severity\":\"Major\",\"issue\":\"x\"}]\n```";
        let out = parse_findings(text, &ten_lines());
        assert_eq!(out.comments.len(), 1);
        let c = &out.comments[0];
        assert_eq!((c.line, c.severity, c.issue.as_str()), (3, Severity::High, "x"));
        assert_eq!(c.file, "src/x.c");
        assert_eq!(out.dropped, 0);
    }

    #[test]
    fn missing_issue_is_dropped() {
        let out = parse_findings(r#"[{"severity":"high","suggestion":"fix"}]"#, &ten_lines());
        assert!(out.comments.is_empty());
        assert_eq!(out.dropped, 1);
        assert!(!out.parse_failed);
    }

    #[test]
    fn prose_prefix_clamp_and_default_severity() {
        let out = parse_findings(r#"Sure! Here are issues: [{"issue":"y","line":999}]"#, &ten_lines());
        assert_eq!(out.comments.len(), 1);
        assert_eq!(out.comments[0].line, 10);
        assert_eq!(out.comments[0].severity, Severity::Medium);
        assert_eq!(out.coerced, 2);
    }

    #[test]
    fn unparseable_counts_failure() {
        let out = parse_findings("I could not find any problems, great job!", &ten_lines());
        assert!(out.parse_failed);
        assert!(out.comments.is_empty());
        assert_eq!(out.dropped, 0);
    }

    #[test]
    fn single_object_is_wrapped() {
        let out = parse_findings(r#"{"issue":"leak","line":2,"severity":"blocker","tags":["a"]}"#, &ten_lines());
        assert_eq!(out.comments.len(), 1);
        assert_eq!(out.comments[0].severity, Severity::Critical);
    }

    #[test]
    fn brackets_inside_strings_ignored() {
        let text = r#"Result: [{"issue":"index a[i] out of ]] bounds","line":4,"severity":"low"}] done"#;
        let out = parse_findings(text, &ten_lines());
        assert_eq!(out.comments.len(), 1);
        assert_eq!(out.comments[0].issue, "index a[i] out of ]] bounds");
    }

    #[test]
    fn skips_non_json_brackets() {
        let text = r#"See [the docs] first. [{"issue":"z"}]"#;
        let out = parse_findings(text, &ten_lines());
        assert_eq!(out.comments.len(), 1);
    }

    #[test]
    fn path_override_counted() {
        let out = parse_findings(r#"[{"file":"other.c","issue":"z","line":1,"severity":"low"}]"#, &ten_lines());
        assert_eq!(out.comments[0].file, "src/x.c");
        assert_eq!(out.coerced, 1);
        let same = parse_findings(r#"[{"file":"./src/x.c","issue":"z","line":1,"severity":"low"}]"#, &ten_lines());
        assert_eq!(same.coerced, 0);
    }

    #[test]
    fn odd_line_values() {
        let f = ten_lines();
        let lines = |raw: &str| parse_findings(&format!(r#"[{{"issue":"a","line":{raw}}}]"#), &f).comments[0].line;
        assert_eq!(lines("0"), 1);
        assert_eq!(lines("-5"), 1);
        assert_eq!(lines("4.9"), 4);
        assert_eq!(lines("\" 7 \""), 7);
        assert_eq!(lines("\"seven\""), 1);
        assert_eq!(lines("null"), 1);
        assert_eq!(lines("[1]"), 1);
    }

    #[test]
    fn severity_synonyms() {
        for (raw, want) in [
            ("blocker", Severity::Critical),
            ("ERROR", Severity::High),
            ("severe", Severity::High),
            ("Warning", Severity::Medium),
            ("moderate", Severity::Medium),
            ("nit", Severity::Low),
            ("nitpick", Severity::Low),
            ("minor", Severity::Low),
            ("note", Severity::Info),
            ("style", Severity::Info),
            ("informational", Severity::Info),
        ] {
            assert_eq!(map_severity(raw), Some(want), "{raw}");
        }
        assert_eq!(map_severity("catastrophic"), None);
    }

    #[test]
    fn snippet_windows() {
        let f = ten_lines();
        let c = attach_snippet(ReviewComment::new("src/x.c", 5, Severity::Low, "i", ""), &f, 2);
        assert_eq!(c.snippet, "3: line 3\n4: line 4\n5: line 5\n6: line 6\n7: line 7");
        let three = FileEntry::from_bytes("t", b"a\nb\nc");
        let c = attach_snippet(ReviewComment::new("t", 1, Severity::Low, "i", ""), &three, 2);
        assert_eq!(c.snippet, "1: a\n2: b\n3: c");
        let one = FileEntry::from_bytes("o", b"only");
        let c = attach_snippet(ReviewComment::new("o", 1, Severity::Low, "i", ""), &one, 2);
        assert_eq!(c.snippet, "1: only");
    }

    #[test]
    fn combined_parse_maps_files() {
        let a = FileEntry::from_bytes("a.rs", b"fn a() {}\n");
        let b = FileEntry::from_bytes("b.rs", b"fn b() {}\n");
        let text = r#"{"findings":[{"file":"a.rs","line":1,"severity":"high","issue":"x"},
            {"file":"ghost.rs","line":1,"issue":"y"},{"file":"/b.rs","line":2,"issue":"z","severity":"low"}],
            "summary":"Two issues."}"#;
        let (out, summary) = parse_combined(text, &[&a, &b]);
        assert_eq!(out.comments.len(), 2);
        assert_eq!(out.dropped, 1);
        assert_eq!(summary.as_deref(), Some("Two issues."));
    }

    #[test]
    fn combined_prompt_budget() {
        let files: Vec<FileEntry> = (0..5)
            .map(|i| FileEntry::from_bytes(format!("f{i}.txt"), "x".repeat(300).as_bytes()))
            .collect();
        let (msgs, included) = build_combined_prompt("tree\n", &files, 1000);
        assert_eq!(included, vec![0, 1, 2]);
        assert!(msgs[1].content.chars().count() <= 1000);
    }
}
