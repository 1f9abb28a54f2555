//! Deterministic deduplication and severity ranking.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::model::ReviewComment;

pub const FUZZY_JACCARD_THRESHOLD: f64 = 0.8;
pub const FUZZY_LINE_WINDOW: u32 = 3;

/// Lowercase, non-alphanumerics to spaces, whitespace collapsed, trimmed.
pub fn normalize_issue(issue: &str) -> String {
    let mapped: String = issue
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Dedup key: file plus normalized issue text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint {
    pub file: String,
    pub normalized_issue: String,
}

impl Fingerprint {
    pub fn of(c: &ReviewComment) -> Self {
        Fingerprint {
            file: c.file.clone(),
            normalized_issue: normalize_issue(&c.issue),
        }
    }
}

fn tokens(normalized: &str) -> BTreeSet<&str> {
    normalized.split(' ').filter(|t| !t.is_empty()).collect()
}

pub fn jaccard(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokens(a), tokens(b));
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// Same file and either equal normalized issues, or token Jaccard >= 0.8
/// with lines at most 3 apart.
pub fn is_duplicate(a: &ReviewComment, b: &ReviewComment) -> bool {
    if a.file != b.file {
        return false;
    }
    let (na, nb) = (normalize_issue(&a.issue), normalize_issue(&b.issue));
    na == nb || (a.line.abs_diff(b.line) <= FUZZY_LINE_WINDOW && jaccard(&na, &nb) >= FUZZY_JACCARD_THRESHOLD)
}

/// True when `a` should survive over `b`: higher severity, then lower line.
/// Callers break the remaining tie by input position.
fn beats(a: &ReviewComment, b: &ReviewComment) -> bool {
    a.severity > b.severity || (a.severity == b.severity && a.line < b.line)
}

/// Removes duplicates in one pass over the input.
///
/// Each comment joins every existing group containing a duplicate of it
/// (merging those groups), so groups are the connected components of the
/// duplicate relation. Each group keeps its best member and sits at the
/// position of its earliest member. Survivors are pairwise non-duplicates,
/// which makes the operation idempotent.
pub fn deduplicate(comments: &[ReviewComment]) -> (Vec<ReviewComment>, usize) {
    struct Group {
        members: Vec<usize>,
        best: usize,
    }
    let mut groups: Vec<Group> = Vec::new();
    for (i, c) in comments.iter().enumerate() {
        let hits: Vec<usize> = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.members.iter().any(|&m| is_duplicate(&comments[m], c)))
            .map(|(gi, _)| gi)
            .collect();
        match hits.split_first() {
            None => groups.push(Group {
                members: vec![i],
                best: i,
            }),
            Some((&first, rest)) => {
                // Later groups fold into the earliest one.
                for &gi in rest.iter().rev() {
                    let g = groups.remove(gi);
                    let target = &mut groups[first];
                    target.members.extend(g.members);
                    if beats(&comments[g.best], &comments[target.best])
                        || (!beats(&comments[target.best], &comments[g.best]) && g.best < target.best)
                    {
                        target.best = g.best;
                    }
                }
                let target = &mut groups[first];
                target.members.push(i);
                if beats(c, &comments[target.best]) {
                    target.best = i;
                }
            }
        }
    }
    let kept: Vec<ReviewComment> = groups.iter().map(|g| comments[g.best].clone()).collect();
    let removed = comments.len() - kept.len();
    (kept, removed)
}

/// Total ranking order: severity descending, then file, line, id ascending.
pub fn rank_order(a: &ReviewComment, b: &ReviewComment) -> Ordering {
    b.severity
        .cmp(&a.severity)
        .then_with(|| a.file.cmp(&b.file))
        .then_with(|| a.line.cmp(&b.line))
        .then_with(|| a.id.cmp(&b.id))
}

pub fn rank(comments: &[ReviewComment]) -> Vec<ReviewComment> {
    let mut out = comments.to_vec();
    out.sort_by(rank_order);
    out
}

pub fn top_k(ranked: &[ReviewComment], k: usize) -> &[ReviewComment] {
    &ranked[..k.min(ranked.len())]
}

/// Dedup then rank; returns the ranked list and the number removed.
pub fn prioritize(comments: &[ReviewComment]) -> (Vec<ReviewComment>, usize) {
    let (kept, removed) = deduplicate(comments);
    (rank(&kept), removed)
}
