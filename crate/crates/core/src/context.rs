//! Repository context: tree, README and key-file previews, condensed into a
//! project summary by one model call.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, Message};
use crate::model::{skip_tally, ContextSummary, SkippedFile, TRUNCATION_MARKER};
use crate::selection::FileEntry;

pub const CONTEXT_SYSTEM_PROMPT: &str = "You are the context agent in a multi-stage code review pipeline. \
You read a repository's directory tree, README and a few key files, and describe the project for the \
reviewers who will examine individual files next. Write plain text, no JSON and no Markdown headings. \
Cover the project's purpose, its architecture and main components, and notable conventions \
(languages, build tooling, testing, style). Keep it under 250 words.";

pub const CONTEXT_INSTRUCTION: &str =
    "Summarize the purpose, architecture, and notable conventions of this repository.";

pub const FALLBACK_PREFIX: &str = "Context unavailable; structure:";

/// Root-level files previewed first, in this order.
pub const MANIFEST_NAMES: [&str; 7] = [
    "package.json",
    "pyproject.toml",
    "Cargo.toml",
    "go.mod",
    "Makefile",
    "Dockerfile",
    "CMakeLists.txt",
];

const README_NAMES: [&str; 4] = ["readme.md", "readme", "readme.rst", "readme.txt"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBudget {
    pub total_chars: usize,
    pub tree_chars: usize,
    pub readme_chars: usize,
    pub preview_chars: usize,
    pub per_preview_chars: usize,
}

impl Default for ContextBudget {
    fn default() -> Self {
        ContextBudget {
            total_chars: 24_000,
            tree_chars: 4_000,
            readme_chars: 8_000,
            preview_chars: 12_000,
            per_preview_chars: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BudgetError {
    #[error("tree_chars + readme_chars + preview_chars ({sum}) must equal total_chars ({total})")]
    Unbalanced { sum: usize, total: usize },
    #[error("context inputs use {used} chars, over the budget of {total}")]
    OverBudget { used: usize, total: usize },
}

impl ContextBudget {
    /// Scales the default split proportionally to a new total.
    pub fn with_total(total_chars: usize) -> Self {
        let tree_chars = total_chars / 6;
        let readme_chars = total_chars / 3;
        ContextBudget {
            total_chars,
            tree_chars,
            readme_chars,
            preview_chars: total_chars - tree_chars - readme_chars,
            per_preview_chars: (total_chars / 12).max(1),
        }
    }

    pub fn validate(&self) -> Result<(), BudgetError> {
        let sum = self.tree_chars + self.readme_chars + self.preview_chars;
        if sum != self.total_chars {
            return Err(BudgetError::Unbalanced {
                sum,
                total: self.total_chars,
            });
        }
        Ok(())
    }
}

/// Cuts `text` to at most `limit` chars; a cut text ends with the marker and
/// still fits in `limit`.
pub fn truncate_chars(text: &str, limit: usize) -> (String, bool) {
    if text.chars().count() <= limit {
        return (text.to_string(), false);
    }
    let marker_len = TRUNCATION_MARKER.chars().count();
    if limit < marker_len {
        return (TRUNCATION_MARKER.chars().take(limit).collect(), true);
    }
    let mut out: String = text.chars().take(limit - marker_len).collect();
    out.push_str(TRUNCATION_MARKER);
    (out, true)
}

#[derive(Default)]
struct DirNode {
    dirs: BTreeMap<String, DirNode>,
    files: Vec<String>,
}

impl DirNode {
    fn insert(&mut self, path: &str) {
        match path.split_once('/') {
            Some((dir, rest)) => self.dirs.entry(dir.to_string()).or_default().insert(rest),
            None => self.files.push(path.to_string()),
        }
    }

    fn render(&self, depth: usize, out: &mut String) {
        let mut children: Vec<(&str, Option<&DirNode>)> = self
            .dirs
            .iter()
            .map(|(k, v)| (k.as_str(), Some(v)))
            .chain(self.files.iter().map(|f| (f.as_str(), None)))
            .collect();
        children.sort_by(|a, b| a.0.cmp(b.0));
        for (name, dir) in children {
            out.push_str(&"  ".repeat(depth));
            out.push_str(name);
            match dir {
                Some(d) => {
                    out.push_str("/\n");
                    d.render(depth + 1, out);
                }
                None => out.push('\n'),
            }
        }
    }
}

fn tally_lines(skipped: &[SkippedFile]) -> String {
    skip_tally(skipped)
        .into_iter()
        .map(|(reason, n)| format!("skipped {reason}: {n}\n"))
        .collect()
}

/// Indented tree of the selected paths followed by one tally line per skip
/// reason, cut to `budget.tree_chars`.
pub fn render_tree(selected: &[&str], skipped: &[SkippedFile], budget: &ContextBudget) -> (String, bool) {
    let mut root = DirNode::default();
    for p in selected {
        root.insert(p);
    }
    let mut out = String::new();
    root.render(0, &mut out);
    out.push_str(&tally_lines(skipped));
    truncate_chars(&out, budget.tree_chars)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preview {
    pub path: String,
    pub excerpt: String,
}

fn preview_label(path: &str) -> String {
    format!("--- {path} ---\n")
}

/// Label plus excerpt plus the blank separator line.
fn preview_cost(path: &str, excerpt_chars: usize) -> usize {
    preview_label(path).chars().count() + excerpt_chars + 1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextInputs {
    tree_text: String,
    readme_text: String,
    previews: Vec<Preview>,
    budget: ContextBudget,
    truncated: bool,
    readme_first_line: String,
    selected_count: usize,
    skip_summary: String,
}

impl ContextInputs {
    pub fn new(
        tree_text: String,
        readme_text: String,
        previews: Vec<Preview>,
        budget: ContextBudget,
        truncated: bool,
    ) -> Result<Self, BudgetError> {
        budget.validate()?;
        let used = tree_text.chars().count()
            + readme_text.chars().count()
            + previews.iter().map(|p| p.excerpt.chars().count()).sum::<usize>();
        if used > budget.total_chars {
            return Err(BudgetError::OverBudget {
                used,
                total: budget.total_chars,
            });
        }
        let readme_first_line = readme_text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or("")
            .to_string();
        Ok(ContextInputs {
            tree_text,
            readme_text,
            previews,
            budget,
            truncated,
            readme_first_line,
            selected_count: 0,
            skip_summary: String::new(),
        })
    }

    pub fn tree_text(&self) -> &str {
        &self.tree_text
    }

    pub fn readme_text(&self) -> &str {
        &self.readme_text
    }

    pub fn previews(&self) -> &[Preview] {
        &self.previews
    }

    pub fn budget(&self) -> &ContextBudget {
        &self.budget
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }
}

fn find_readme(selected: &[FileEntry]) -> Option<&FileEntry> {
    README_NAMES.iter().find_map(|name| {
        selected
            .iter()
            .find(|f| !f.path.contains('/') && f.path.to_ascii_lowercase() == *name)
    })
}

/// Gathers tree, README and previews within `budget`. Pure in its inputs.
pub fn collect_context_inputs(
    selected: &[FileEntry],
    skipped: &[SkippedFile],
    budget: &ContextBudget,
) -> Result<ContextInputs, BudgetError> {
    budget.validate()?;
    let paths: Vec<&str> = selected.iter().map(|f| f.path.as_str()).collect();
    let (tree_text, tree_cut) = render_tree(&paths, skipped, budget);

    let readme = find_readme(selected);
    let (readme_text, readme_cut) = readme
        .map(|f| truncate_chars(&f.content, budget.readme_chars))
        .unwrap_or_default();

    let mut order: Vec<&FileEntry> = Vec::new();
    for name in MANIFEST_NAMES {
        if let Some(f) = selected.iter().find(|f| f.path == name) {
            order.push(f);
        }
    }
    let mut rest: Vec<&FileEntry> = selected
        .iter()
        .filter(|f| !MANIFEST_NAMES.contains(&f.path.as_str()))
        .collect();
    rest.sort_by(|a, b| b.line_count.cmp(&a.line_count).then_with(|| a.path.cmp(&b.path)));
    order.extend(rest);

    let readme_path = readme.map(|f| f.path.as_str());
    let mut remaining = budget.preview_chars;
    let mut previews = Vec::new();
    for f in order {
        if Some(f.path.as_str()) == readme_path || f.content.is_empty() {
            continue;
        }
        let overhead = preview_cost(&f.path, 0);
        if remaining <= overhead {
            break;
        }
        let limit = budget.per_preview_chars.min(remaining - overhead);
        let (excerpt, _) = truncate_chars(&f.content, limit);
        remaining -= preview_cost(&f.path, excerpt.chars().count());
        previews.push(Preview {
            path: f.path.clone(),
            excerpt,
        });
    }

    let mut inputs = ContextInputs::new(tree_text, readme_text, previews, *budget, tree_cut || readme_cut)?;
    inputs.selected_count = selected.len();
    inputs.skip_summary = skip_tally(skipped)
        .into_iter()
        .map(|(r, n)| format!("{r} {n}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(inputs)
}

pub fn build_context_prompt(inputs: &ContextInputs) -> Vec<Message> {
    let mut user = String::new();
    user.push_str("## REPOSITORY TREE\n");
    user.push_str(&inputs.tree_text);
    user.push_str("\n## README\n");
    if inputs.readme_text.is_empty() {
        user.push_str("(no README)\n");
    } else {
        user.push_str(&inputs.readme_text);
        user.push('\n');
    }
    user.push_str("\n## KEY FILE PREVIEWS\n");
    if inputs.previews.is_empty() {
        user.push_str("(none)\n");
    }
    for p in &inputs.previews {
        user.push_str(&preview_label(&p.path));
        user.push_str(&p.excerpt);
        user.push('\n');
    }
    user.push('\n');
    user.push_str(CONTEXT_INSTRUCTION);
    vec![Message::system(CONTEXT_SYSTEM_PROMPT), Message::user(user)]
}

/// Deterministic stand-in used when the model call fails.
pub fn fallback_context_text(inputs: &ContextInputs) -> String {
    let skipped = if inputs.skip_summary.is_empty() {
        "none".to_string()
    } else {
        inputs.skip_summary.clone()
    };
    let readme = if inputs.readme_first_line.is_empty() {
        "none".to_string()
    } else {
        inputs.readme_first_line.clone()
    };
    format!(
        "{FALLBACK_PREFIX} {} selected files; skipped: {skipped}. README: {readme}",
        inputs.selected_count
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextOutcome {
    pub summary: ContextSummary,
    pub degraded: bool,
    pub error: Option<String>,
}

/// One model call; a failure degrades to [`fallback_context_text`].
pub fn synthesize_context(inputs: &ContextInputs, gateway: &Gateway) -> ContextOutcome {
    let (text, degraded, error) = match gateway.complete(build_context_prompt(inputs), 1024) {
        Ok(resp) if !resp.text.trim().is_empty() => (resp.text.trim().to_string(), false, None),
        Ok(_) => (
            fallback_context_text(inputs),
            true,
            Some("empty context response".to_string()),
        ),
        Err(e) => (fallback_context_text(inputs), true, Some(e.to_string())),
    };
    ContextOutcome {
        summary: ContextSummary {
            text,
            tree_excerpt: inputs.tree_text.clone(),
            readme_excerpt: inputs.readme_text.clone(),
            preview_paths: inputs.previews.iter().map(|p| p.path.clone()).collect(),
            truncated: inputs.truncated,
        },
        degraded,
        error,
    }
}
