use num_rational::Ratio;
use proptest::prelude::*;
use serde_json::{json, Value};

use repo_review::context::{render_tree, truncate_chars, ContextBudget};
use repo_review::eval::format_ratio;
use repo_review::model::{comment_id, is_clean_relative_path, TRUNCATION_MARKER};
use repo_review::priority::{deduplicate, is_duplicate, jaccard, prioritize, rank, rank_order};
use repo_review::review::{attach_snippet, parse_findings};
use repo_review::selection::{count_lines, FileEntry};
use repo_review::{ReviewComment, Severity};

fn severity() -> impl Strategy<Value = Severity> {
    prop::sample::select(Severity::ALL.to_vec())
}

/// Small vocabulary so fuzzy duplicates actually occur.
fn issue() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["null", "check", "missing", "user", "input", "leak", "Unsafe"]), 1..6)
        .prop_map(|w| w.join(" "))
}

fn comment() -> impl Strategy<Value = ReviewComment> {
    (prop::sample::select(vec!["a.rs", "b.py"]), 1u32..12, severity(), issue())
        .prop_map(|(f, line, sev, issue)| ReviewComment::new(f, line, sev, issue, ""))
}

fn file_text() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z ]{0,12}", 0..30).prop_map(|lines| lines.join("\n"))
}

fn element() -> impl Strategy<Value = Value> {
    let line = prop_oneof![
        (-5i64..200).prop_map(Value::from),
        "[0-9a-z]{0,4}".prop_map(Value::from),
        Just(Value::Null),
    ];
    let sev = prop_oneof![
        prop::sample::select(vec!["critical", "HIGH", "Medium", "low", "info", "warning", "bogus", ""]).prop_map(Value::from),
        (0i64..9).prop_map(Value::from),
    ];
    let text = prop_oneof![".{0,20}".prop_map(Value::from), Just(Value::Null), (0i64..3).prop_map(Value::from)];
    let object = (
        prop::option::of(line),
        prop::option::of(sev),
        prop::option::of(text.clone()),
        prop::option::of(text),
        prop::option::of(prop::sample::select(vec!["src/x.rs", "../etc/passwd", "other.py", ""])),
    )
        .prop_map(|(line, sev, issue, suggestion, file)| {
            let mut m = serde_json::Map::new();
            let mut put = |k: &str, v: Option<Value>| {
                if let Some(v) = v {
                    m.insert(k.to_string(), v);
                }
            };
            put("line", line);
            put("severity", sev);
            put("issue", issue);
            put("suggestion", suggestion);
            put("file", file.map(Value::from));
            Value::Object(m)
        });
    prop_oneof![4 => object, 1 => Just(json!(42)), 1 => Just(json!("text")), 1 => Just(json!([1, 2]))]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn truncation_fits_and_keeps_prefix(text in ".{0,80}", limit in 0usize..60) {
        let (out, cut) = truncate_chars(&text, limit);
        prop_assert!(out.chars().count() <= limit);
        prop_assert_eq!(cut, text.chars().count() > limit);
        let marker = TRUNCATION_MARKER.chars().count();
        if !cut {
            prop_assert_eq!(out, text);
        } else if limit >= marker {
            let body = out.strip_suffix(TRUNCATION_MARKER).unwrap();
            prop_assert!(text.starts_with(body));
            prop_assert_eq!(body.chars().count(), limit - marker);
        }
    }

    #[test]
    fn tree_respects_budget(paths in prop::collection::btree_set("[a-c]{1,3}(/[a-c]{1,3}){0,3}", 0..40), tree_chars in 16usize..400) {
        let paths: Vec<&str> = paths.iter().map(String::as_str).collect();
        let budget = ContextBudget { tree_chars, ..ContextBudget::default() };
        let (tree, cut) = render_tree(&paths, &[], &budget);
        prop_assert!(tree.chars().count() <= tree_chars);
        prop_assert_eq!(cut, tree.ends_with(TRUNCATION_MARKER));
    }

    #[test]
    fn lines_agree_with_count(text in file_text()) {
        let f = FileEntry::from_bytes("f.txt", text.as_bytes());
        prop_assert_eq!(f.lines().count(), count_lines(&text));
        prop_assert_eq!(f.line_count, count_lines(&text));
    }

    #[test]
    fn snippet_is_a_clamped_window(text in file_text(), line in 0u32..40, radius in 0u32..4) {
        let f = FileEntry::from_bytes("f.txt", text.as_bytes());
        let c = attach_snippet(ReviewComment::new("f.txt", line, Severity::Low, "x", ""), &f, radius);
        let lines: Vec<&str> = f.lines().collect();
        if lines.is_empty() {
            prop_assert!(c.snippet.is_empty());
            return Ok(());
        }
        let target = (line as usize).clamp(1, lines.len());
        let numbers: Vec<usize> = c
            .snippet
            .split('\n')
            .map(|l| {
                let (n, rest) = l.split_once(": ").expect("numbered line");
                let n: usize = n.trim().parse().unwrap();
                assert_eq!(rest, lines[n - 1]);
                n
            })
            .collect();
        let first = target.saturating_sub(radius as usize).max(1);
        let last = (target + radius as usize).min(lines.len());
        prop_assert_eq!(numbers, (first..=last).collect::<Vec<_>>());
    }

    #[test]
    fn parsed_comments_are_well_formed(text in file_text(), items in prop::collection::vec(element(), 0..8), chatter in "[A-Za-z !:]{0,20}") {
        let f = FileEntry::from_bytes("src/x.rs", text.as_bytes());
        let response = format!("{chatter}\n{}\n", Value::Array(items.clone()));
        let out = parse_findings(&response, &f);
        prop_assert!(!out.parse_failed);
        prop_assert_eq!(out.comments.len() as u64 + out.dropped, items.len() as u64);
        for c in &out.comments {
            prop_assert_eq!(&c.file, "src/x.rs");
            prop_assert!(is_clean_relative_path(&c.file));
            prop_assert!(c.line >= 1 && c.line as usize <= f.line_count.max(1));
            prop_assert!(!c.issue.trim().is_empty());
            prop_assert_eq!(&c.id, &comment_id(&c.file, c.line, &c.issue));
        }
    }

    #[test]
    fn jaccard_is_a_similarity(a in issue(), b in issue()) {
        let (ab, ba) = (jaccard(&a, &b), jaccard(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(jaccard(&a, &a), 1.0);
    }

    #[test]
    fn dedup_leaves_no_duplicates(xs in prop::collection::vec(comment(), 0..10)) {
        let (kept, removed) = deduplicate(&xs);
        prop_assert_eq!(kept.len() + removed, xs.len());
        for (i, a) in kept.iter().enumerate() {
            prop_assert!(xs.contains(a));
            for b in &kept[i + 1..] {
                prop_assert!(!is_duplicate(a, b), "{a:?} / {b:?}");
            }
        }
        // Every dropped comment duplicates another input.
        for (i, x) in xs.iter().enumerate() {
            if !kept.contains(x) {
                prop_assert!(xs.iter().enumerate().any(|(j, y)| i != j && is_duplicate(x, y)));
            }
        }
        let (again, none) = deduplicate(&kept);
        prop_assert_eq!(again, kept);
        prop_assert_eq!(none, 0);
    }

    #[test]
    fn rank_is_a_sorted_permutation(xs in prop::collection::vec(comment(), 0..10)) {
        let ranked = rank(&xs);
        prop_assert_eq!(ranked.len(), xs.len());
        for pair in ranked.windows(2) {
            prop_assert!(rank_order(&pair[0], &pair[1]).is_le());
        }
        let mut a: Vec<_> = xs.iter().map(|c| (&c.id, c.line)).collect();
        let mut b: Vec<_> = ranked.iter().map(|c| (&c.id, c.line)).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
        prop_assert_eq!(rank(&ranked), ranked.clone());
        let (p, _) = prioritize(&xs);
        prop_assert_eq!(prioritize(&p).0, p);
    }

    #[test]
    fn ratio_rendering_rounds_half_away(num in 0u64..100_000, den in 1u64..5_000, decimals in 0u32..5) {
        let r = Ratio::new(num, den);
        let s = format_ratio(r, decimals);
        let (int, frac) = s.split_once('.').unwrap_or((&s, ""));
        prop_assert_eq!(frac.len(), decimals as usize);
        let scale = 10u64.pow(decimals);
        let digits: u64 = format!("{int}{frac}").parse().unwrap();
        let shown = Ratio::new(digits, scale);
        let err = if shown >= r { shown - r } else { r - shown };
        let half = Ratio::new(1, 2 * scale);
        prop_assert!(err <= half, "{s} for {num}/{den}");
        if err == half {
            prop_assert!(shown > r, "tie must round up: {s} for {num}/{den}");
        }
    }
}
