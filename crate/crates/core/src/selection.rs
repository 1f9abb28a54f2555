//! Partitioning a working tree into reviewable and skipped files.

use std::path::Path;

use globset::{Glob, GlobBuilder, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::Workspace;
use crate::model::{SkipReason, SkippedFile};

pub const DEFAULT_MAX_FILE_BYTES: u64 = 200 * 1024;
pub const DEFAULT_MAX_FILES: usize = 50;
/// Only this prefix of a file is sniffed for NUL bytes.
pub const BINARY_SNIFF_BYTES: usize = 8192;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub max_file_bytes: u64,
    pub max_files: usize,
    pub extra_exclude_globs: Vec<String>,
    pub include_only: Option<Vec<String>>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            max_file_bytes: DEFAULT_MAX_FILE_BYTES,
            max_files: DEFAULT_MAX_FILES,
            extra_exclude_globs: Vec::new(),
            include_only: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("max_file_bytes and max_files must be positive")]
    ZeroLimit,
    #[error("invalid glob {pattern:?}: {source}")]
    Glob {
        pattern: String,
        source: globset::Error,
    },
}

/// Built-in patterns for generated and vendored content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    pub directories: Vec<&'static str>,
    pub filenames: Vec<&'static str>,
    pub suffixes: Vec<&'static str>,
}

pub fn default_exclusion_rules() -> RuleSet {
    RuleSet {
        directories: vec![
            ".git",
            "node_modules",
            "vendor",
            "dist",
            "build",
            "target",
            "__pycache__",
            ".venv",
        ],
        filenames: vec![
            "package-lock.json",
            "yarn.lock",
            "Cargo.lock",
            "poetry.lock",
            "go.sum",
        ],
        suffixes: vec![".min.js", ".min.css", ".map", ".lock"],
    }
}

impl RuleSet {
    /// Directory rules match any directory component of the path.
    pub fn matches(&self, path: &str) -> bool {
        let mut parts: Vec<&str> = path.split('/').collect();
        let file = parts.pop().unwrap_or_default();
        parts.iter().any(|d| self.directories.contains(d))
            || self.filenames.contains(&file)
            || self.suffixes.iter().any(|s| file.ends_with(s))
    }
}

/// A selected, decoded file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileEntry {
    pub path: String,
    pub byte_len: u64,
    pub line_count: usize,
    pub content: String,
}

impl FileEntry {
    pub fn from_bytes(path: impl Into<String>, bytes: &[u8]) -> Self {
        let content = String::from_utf8_lossy(bytes).into_owned();
        FileEntry {
            path: path.into(),
            byte_len: bytes.len() as u64,
            line_count: count_lines(&content),
            content,
        }
    }

    /// Lines as split on `\n`; yields `line_count` items.
    pub fn lines(&self) -> impl Iterator<Item = &str> {
        let empty = self.content.is_empty();
        self.content.split('\n').filter(move |_| !empty)
    }
}

pub fn count_lines(content: &str) -> usize {
    if content.is_empty() {
        0
    } else {
        1 + content.bytes().filter(|&b| b == b'\n').count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Classification {
    Selected(FileEntry),
    Skipped(SkipReason),
}

/// Compiled form of a [`SelectionConfig`].
#[derive(Debug, Clone)]
pub struct Selector {
    config: SelectionConfig,
    rules: RuleSet,
    exclude: GlobSet,
    include: Option<GlobSet>,
}

fn glob_set(patterns: &[String]) -> Result<GlobSet, SelectionError> {
    let mut builder = GlobSetBuilder::new();
    for p in patterns {
        let glob: Glob = GlobBuilder::new(p)
            .literal_separator(true)
            .backslash_escape(true)
            .build()
            .map_err(|source| SelectionError::Glob {
                pattern: p.clone(),
                source,
            })?;
        builder.add(glob);
    }
    builder.build().map_err(|source| SelectionError::Glob {
        pattern: patterns.join(","),
        source,
    })
}

impl Selector {
    pub fn new(config: &SelectionConfig) -> Result<Self, SelectionError> {
        if config.max_file_bytes == 0 || config.max_files == 0 {
            return Err(SelectionError::ZeroLimit);
        }
        Ok(Selector {
            config: config.clone(),
            rules: default_exclusion_rules(),
            exclude: glob_set(&config.extra_exclude_globs)?,
            include: config.include_only.as_deref().map(glob_set).transpose()?,
        })
    }

    pub fn config(&self) -> &SelectionConfig {
        &self.config
    }

    /// Rules that depend on the path alone (generated, then config globs).
    fn classify_path(&self, path: &str) -> Option<SkipReason> {
        if self.rules.matches(path) {
            return Some(SkipReason::Generated);
        }
        let excluded = self.exclude.is_match(path)
            || self.include.as_ref().is_some_and(|inc| !inc.is_match(path));
        excluded.then_some(SkipReason::ExcludedByConfig)
    }

    fn classify_content(&self, path: &str, bytes: &[u8]) -> Classification {
        if bytes.len() as u64 > self.config.max_file_bytes {
            return Classification::Skipped(SkipReason::Oversized);
        }
        let sniff = &bytes[..bytes.len().min(BINARY_SNIFF_BYTES)];
        if sniff.contains(&0) {
            return Classification::Skipped(SkipReason::Binary);
        }
        Classification::Selected(FileEntry::from_bytes(path, bytes))
    }
}

/// Classifies one file. Rule order: generated, config globs, size, binary.
pub fn classify_file(path: &str, bytes: &[u8], selector: &Selector) -> Classification {
    match selector.classify_path(path) {
        Some(reason) => Classification::Skipped(reason),
        None => selector.classify_content(path, bytes),
    }
}

fn classify_on_disk(root: &Path, rel: &str, selector: &Selector) -> Classification {
    if let Some(reason) = selector.classify_path(rel) {
        return Classification::Skipped(reason);
    }
    let full = root.join(rel);
    // Check size from metadata first so oversized files are never read.
    match std::fs::metadata(&full) {
        Ok(meta) if meta.len() > selector.config.max_file_bytes => {
            return Classification::Skipped(SkipReason::Oversized)
        }
        Ok(_) => {}
        Err(_) => return Classification::Skipped(SkipReason::Unreadable),
    }
    match std::fs::read(&full) {
        Ok(bytes) => selector.classify_content(rel, &bytes),
        Err(_) => Classification::Skipped(SkipReason::Unreadable),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    pub selected: Vec<FileEntry>,
    pub skipped: Vec<SkippedFile>,
}

impl Selection {
    pub fn candidates(&self) -> usize {
        self.selected.len() + self.skipped.len()
    }
}

fn relative_string(rel: &Path) -> String {
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// All regular files under `root` (symlinks not followed, `.git` pruned),
/// sorted byte-wise.
pub fn list_files(root: &Path) -> Vec<String> {
    let mut out: Vec<String> = walkdir::WalkDir::new(root)
        .follow_links(false)
        .into_iter()
        .filter_entry(|e| !(e.depth() > 0 && e.file_type().is_dir() && e.file_name() == ".git"))
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .filter_map(|e| e.path().strip_prefix(root).ok().map(relative_string))
        .collect();
    out.sort();
    out
}

/// Walks `root`, restricting candidates to `changed` when given.
pub fn walk_tree(root: &Path, changed: Option<&[String]>, selector: &Selector) -> Selection {
    let candidates: Vec<String> = match changed {
        None => list_files(root),
        Some(paths) => {
            let mut v: Vec<String> = paths
                .iter()
                .filter(|p| crate::model::is_clean_relative_path(p))
                .filter(|p| {
                    std::fs::symlink_metadata(root.join(p))
                        .map(|m| m.file_type().is_file())
                        .unwrap_or(false)
                })
                .cloned()
                .collect();
            v.sort();
            v.dedup();
            v
        }
    };

    let mut out = Selection::default();
    for path in candidates {
        match classify_on_disk(root, &path, selector) {
            Classification::Selected(entry) => {
                if out.selected.len() < selector.config.max_files {
                    out.selected.push(entry);
                } else {
                    out.skipped.push(SkippedFile {
                        path,
                        reason: SkipReason::OverFileLimit,
                    });
                }
            }
            Classification::Skipped(reason) => out.skipped.push(SkippedFile { path, reason }),
        }
    }
    out
}

pub fn walk_repository(ws: &Workspace, selector: &Selector) -> Selection {
    walk_tree(&ws.root, ws.pr_changed_files.as_deref(), selector)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn selector() -> Selector {
        Selector::new(&SelectionConfig::default()).unwrap()
    }

    #[test]
    fn default_rules() {
        let rules = default_exclusion_rules();
        assert!(rules.matches("node_modules/a/b.js"));
        assert!(rules.matches("src/app.min.js"));
        assert!(!rules.matches("src/app.js"));
        assert!(rules.matches("Cargo.lock"));
        assert!(rules.matches("web/yarn.lock"));
        assert!(rules.matches("a/b.js.map"));
        assert!(rules.matches("pkg/__pycache__/m.pyc"));
        assert!(!rules.matches("vendor"));
        assert!(!rules.matches("src/builder.rs"));
    }

    #[test]
    fn oversized_text() {
        let bytes = vec![b'a'; 250 * 1024];
        assert_eq!(
            classify_file("big.txt", &bytes, &selector()),
            Classification::Skipped(SkipReason::Oversized)
        );
    }

    #[test]
    fn nul_means_binary() {
        let mut bytes = vec![b'x'; 100];
        bytes[10] = 0;
        assert_eq!(
            classify_file("blob.dat", &bytes, &selector()),
            Classification::Skipped(SkipReason::Binary)
        );
        let mut late = vec![b'x'; BINARY_SNIFF_BYTES + 10];
        late[BINARY_SNIFF_BYTES + 1] = 0;
        assert!(matches!(
            classify_file("late.dat", &late, &selector()),
            Classification::Selected(_)
        ));
    }

    #[test]
    fn generated_outranks_everything() {
        let bytes = vec![b'c'; 1024];
        assert_eq!(
            classify_file("vendor/lib.c", &bytes, &selector()),
            Classification::Skipped(SkipReason::Generated)
        );
        let mut big_binary = vec![0u8; 300 * 1024];
        big_binary[0] = 0;
        assert_eq!(
            classify_file("dist/x.bin", &big_binary, &selector()),
            Classification::Skipped(SkipReason::Generated)
        );
    }

    #[test]
    fn config_globs() {
        let sel = Selector::new(&SelectionConfig {
            extra_exclude_globs: vec!["docs/**".into(), "*.txt".into()],
            include_only: None,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(
            classify_file("docs/a/b.md", b"x", &sel),
            Classification::Skipped(SkipReason::ExcludedByConfig)
        );
        assert_eq!(
            classify_file("notes.txt", b"x", &sel),
            Classification::Skipped(SkipReason::ExcludedByConfig)
        );
        // `*` does not cross `/`.
        assert!(matches!(classify_file("a/notes.txt", b"x", &sel), Classification::Selected(_)));

        let sel = Selector::new(&SelectionConfig {
            include_only: Some(vec!["src/**/*.rs".into()]),
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(classify_file("src/a/b.rs", b"x", &sel), Classification::Selected(_)));
        assert_eq!(
            classify_file("README.md", b"x", &sel),
            Classification::Skipped(SkipReason::ExcludedByConfig)
        );
    }

    #[test]
    fn bad_config() {
        assert!(matches!(
            Selector::new(&SelectionConfig {
                max_files: 0,
                ..Default::default()
            }),
            Err(SelectionError::ZeroLimit)
        ));
        assert!(matches!(
            Selector::new(&SelectionConfig {
                extra_exclude_globs: vec!["a/[b".into()],
                ..Default::default()
            }),
            Err(SelectionError::Glob { .. })
        ));
    }

    #[test]
    fn line_counting() {
        assert_eq!(count_lines(""), 0);
        assert_eq!(count_lines("a"), 1);
        assert_eq!(count_lines("a\n"), 2);
        assert_eq!(count_lines("a\nb\nc"), 3);
        let f = FileEntry::from_bytes("x", b"a\nb");
        assert_eq!(f.lines().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(FileEntry::from_bytes("x", b"").lines().count(), 0);
    }

    #[test]
    fn lossy_decoding() {
        let f = FileEntry::from_bytes("latin1.c", b"caf\xe9\n");
        assert!(f.content.starts_with("caf\u{fffd}"));
        assert_eq!(f.byte_len, 5);
    }
}
