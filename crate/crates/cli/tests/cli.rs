use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use repo_review::testkit::{demo_remote, fixtures_dir, hello_world_remote, metrics_fixture};
use repo_review::ReviewReport;

const FIXED: &str = "2024-01-01T00:00:00Z";
/// Model the committed transcripts were recorded under.
const MODEL: &str = "gpt-4o-mini";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_repo-review"));
    c.env_remove("PROVIDER_API_KEY")
        .env_remove("REPO_REVIEW_REMOTE_BASE")
        .env("PROVIDER_MODEL", MODEL)
        .env("REPO_REVIEW_FIXED_CLOCK", FIXED)
        .env("RUST_LOG", "error");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn repo-review")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Env {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
    remotes: String,
}

fn env() -> Env {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    hello_world_remote(&dir.join("remotes"));
    demo_remote(&dir.join("remotes"));
    let remotes = dir.join("remotes").to_string_lossy().into_owned();
    Env { _tmp: tmp, dir, remotes }
}

fn report(path: &Path) -> ReviewReport {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

const HW: &str = "https://github.com/octocat/Hello-World";

#[test]
fn usage_errors_exit_2() {
    let e = env();
    for args in [
        vec!["review", "not-a-url"],
        vec!["review"],
        vec!["review", HW, "--mode", "turbo"],
        vec!["review", HW, "--pr", "0"],
        vec!["review", HW, "--replay", "missing.jsonl"],
        vec!["review", HW, "--offline", "--max-files", "0"],
        vec!["review", HW],
        vec!["eval", "--repos", "missing.txt", "--out", "x"],
        vec!["aggregate", "--annotations", "missing.csv", "--runs", ".", "--out", "m"],
        vec!["frobnicate"],
    ] {
        let o = run(&e.dir, &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty(), "{args:?}");
        assert!(stdout(&o).is_empty(), "{args:?}");
    }
    let no_model = bin()
        .current_dir(&e.dir)
        .env_remove("PROVIDER_MODEL")
        .args(["review", HW, "--offline", "--remote-base", &e.remotes])
        .output()
        .unwrap();
    assert_eq!(no_model.status.code(), Some(2));
    assert!(stderr(&no_model).contains("PROVIDER_MODEL"), "{}", stderr(&no_model));
}

#[test]
fn review_prints_paths_and_progress() {
    let e = env();
    let o = run(&e.dir, &["review", HW, "--offline", "--remote-base", &e.remotes, "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines, vec!["out/review.json", "out/review.md"]);
    assert!(e.dir.join("out/review.json").is_file());
    let err = stderr(&o);
    assert!(err.starts_with("[1/6] clone: started"), "{err}");
    assert!(err.contains("[2/6] context: completed"), "{err}");
    assert!(err.contains("[3/6] review: progress (1/1)"), "{err}");
    assert!(err.trim_end().lines().last().unwrap().starts_with("[6/6] artifacts: completed"));
    let r = report(&e.dir.join("out/review.json"));
    assert_eq!(r.generated_at.to_rfc3339(), "2024-01-01T00:00:00+00:00");
    assert!(repo_review::validate_report(&r).is_ok());
}

#[test]
fn single_agent_progress_uses_its_own_plan() {
    let e = env();
    let o = run(
        &e.dir,
        &["review", HW, "--offline", "--remote-base", &e.remotes, "--out", "o", "--mode", "single_agent"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("[3/3] artifacts: completed"));
}

#[test]
fn unreachable_repo_exits_1() {
    let e = env();
    let o = run(
        &e.dir,
        &["review", "https://github.com/nobody/missing", "--offline", "--remote-base", &e.remotes],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("clone: failed"));
    assert!(stderr(&o).contains("error: clone failed"));
    assert!(stdout(&o).is_empty());
}

#[test]
fn committed_transcripts_replay_cleanly() {
    let e = env();
    for (url, transcript, files) in [
        (HW, "hw.jsonl", 1),
        ("https://github.com/acme/demo", "demo.jsonl", 5),
    ] {
        let t = fixtures_dir().join(transcript);
        let o = run(
            &e.dir,
            &["review", url, "--replay", t.to_str().unwrap(), "--remote-base", &e.remotes, "--out", transcript],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let r = report(&e.dir.join(transcript).join("review.json"));
        assert_eq!(r.stats.files_reviewed, files);
        assert_eq!(r.stats.provider_calls, 2 + files);
        assert_eq!(r.stats.review_failures, 0, "{transcript} is stale");
        assert!(!r.stats.context_degraded && !r.stats.summary_degraded, "{transcript} is stale");
    }
}

#[test]
fn record_then_replay_is_byte_identical() {
    let e = env();
    let t = e.dir.join("t.jsonl");
    let t = t.to_str().unwrap();
    let url = "https://github.com/acme/demo";
    let a = run(&e.dir, &["review", url, "--offline", "--record", t, "--remote-base", &e.remotes, "--out", "a"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let b = run(&e.dir, &["review", url, "--replay", t, "--remote-base", &e.remotes, "--out", "b"]);
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    for name in ["review.json", "review.md"] {
        assert_eq!(
            std::fs::read(e.dir.join("a").join(name)).unwrap(),
            std::fs::read(e.dir.join("b").join(name)).unwrap(),
            "{name}"
        );
    }
    // A different model id misses every recorded exchange.
    let c = run(
        &e.dir,
        &["review", url, "--replay", t, "--model", "other", "--remote-base", &e.remotes, "--out", "c"],
    );
    assert_eq!(c.status.code(), Some(0));
    let r = report(&e.dir.join("c/review.json"));
    assert!(r.stats.context_degraded && r.stats.summary_degraded);
    assert_eq!(r.stats.review_failures, r.stats.files_reviewed);
}

#[test]
fn show_prompts_dumps_templates() {
    let e = env();
    let o = run(&e.dir, &["review", "--show-prompts"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for (name, text) in repo_review::prompt_templates() {
        assert!(out.contains(&format!("=== {name} ===\n{text}\n")), "{name}");
    }
    let doc = std::fs::read_to_string(fixtures_dir().join("../docs/PROMPTS.md")).unwrap();
    for (name, text) in repo_review::prompt_templates() {
        assert!(doc.contains(&format!("## `{name}`\n\n```text\n{text}\n```")), "docs/PROMPTS.md is stale for {name}");
    }
}

#[test]
fn config_file_applies_and_flags_win() {
    let e = env();
    std::fs::write(
        e.dir.join("repo-review.json"),
        format!(
            r#"{{"mode": "no_context", "offline": true, "remote-base": {:?}, "out": "cfg-out"}}"#,
            e.remotes
        ),
    )
    .unwrap();
    let o = run(&e.dir, &["review", HW]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(report(&e.dir.join("cfg-out/review.json")).mode.as_str(), "no_context");

    let o = run(&e.dir, &["review", HW, "--mode", "full", "--out", "flag-out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(report(&e.dir.join("flag-out/review.json")).mode.as_str(), "full");

    std::fs::write(e.dir.join("repo-review.json"), r#"{"colour": "blue"}"#).unwrap();
    assert_eq!(run(&e.dir, &["review", HW]).status.code(), Some(2));
}

#[test]
fn eval_cross_product_and_refusal() {
    let e = env();
    std::fs::write(
        e.dir.join("repos.txt"),
        "https://github.com/octocat/Hello-World\nhttps://github.com/nobody/missing\n",
    )
    .unwrap();
    let args = [
        "eval", "--repos", "repos.txt", "--modes", "full,single_agent", "--out", "exp", "--offline", "--remote-base",
        &e.remotes,
    ];
    let o = run(&e.dir, &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("4 runs: 2 ok, 2 failed"));
    assert_eq!(stdout(&o), "exp/runs.json\nexp/annotations.csv\n");
    let mut dirs: Vec<String> = std::fs::read_dir(e.dir.join("exp"))
        .unwrap()
        .filter_map(Result::ok)
        .filter(|d| d.path().is_dir())
        .map(|d| d.file_name().to_string_lossy().into_owned())
        .collect();
    dirs.sort();
    assert_eq!(
        dirs,
        [
            "nobody-missing-full-3",
            "nobody-missing-single_agent-4",
            "octocat-Hello-World-full-1",
            "octocat-Hello-World-single_agent-2"
        ]
    );
    let index = repo_review::eval::load_runs_index(&e.dir.join("exp")).unwrap();
    assert_eq!(index.iter().filter(|r| r.failure.is_some()).count(), 2);

    assert_eq!(run(&e.dir, &args).status.code(), Some(2));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(run(&e.dir, &forced).status.code(), Some(0));
}

#[test]
fn aggregate_outputs_and_errors() {
    let e = env();
    let runs = e.dir.join("runs");
    std::fs::create_dir_all(&runs).unwrap();
    let ann = metrics_fixture(&runs);
    let o = run(
        &e.dir,
        &["aggregate", "--annotations", ann.to_str().unwrap(), "--runs", "runs", "--out", "m"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "m/metrics.csv\nm/metrics.json\nm/metrics.tex\n");
    for f in ["metrics.csv", "metrics.json", "metrics.tex"] {
        assert!(e.dir.join("m").join(f).is_file());
    }

    let text = std::fs::read_to_string(&ann).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[3] = lines[3].replacen("acme-api-full-1", "nope", 1);
    std::fs::write(e.dir.join("bad.csv"), lines.join("\n") + "\n").unwrap();
    let o = run(&e.dir, &["aggregate", "--annotations", "bad.csv", "--runs", "runs", "--out", "m2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 4"), "{}", stderr(&o));

    std::fs::write(e.dir.join("empty.csv"), "").unwrap();
    let o = run(&e.dir, &["aggregate", "--annotations", "empty.csv", "--runs", "runs", "--out", "m3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no rows"));
}

fn http_get(addr: &str, path: &str) -> String {
    use std::io::{Read, Write};
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[test]
fn serve_health_port_conflict_and_sigint() {
    let e = env();
    let mut child = bin()
        .current_dir(&e.dir)
        .args(["serve", "--port", "0", "--offline", "--artifact-root", "runs"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut first).unwrap();
    let addr = first.trim().strip_prefix("http://").expect("address line").to_string();
    let health = http_get(&addr, "/health");
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains(r#""status":"ok""#));

    let port = addr.rsplit(':').next().unwrap();
    let o = run(&e.dir, &["serve", "--port", port, "--offline"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cannot listen"), "{}", stderr(&o));

    let killed = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let start = Instant::now();
    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(start.elapsed() < Duration::from_secs(10), "server ignored SIGINT");
        std::thread::sleep(Duration::from_millis(20));
    };
    assert_eq!(status.code(), Some(0));
}

/// Rewrites the committed transcripts from the heuristic reviewer. Run with
/// `cargo test -p repo-review-cli --test cli -- --ignored`.
#[test]
#[ignore]
fn record_fixture_transcripts() {
    let e = env();
    for (url, name) in [(HW, "hw.jsonl"), ("https://github.com/acme/demo", "demo.jsonl")] {
        let dest = fixtures_dir().join(name);
        let _ = std::fs::remove_file(&dest);
        let o = run(
            &e.dir,
            &["review", url, "--offline", "--record", dest.to_str().unwrap(), "--remote-base", &e.remotes, "--out", name],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
}

/// The documented example artifacts are exactly what a replayed demo run
/// writes. Set `UPDATE_GOLDEN=1` to rewrite them.
#[test]
fn golden_artifacts_match() {
    let e = env();
    let t = fixtures_dir().join("demo.jsonl");
    let o = run(
        &e.dir,
        &["review", "https://github.com/acme/demo", "--replay", t.to_str().unwrap(), "--remote-base", &e.remotes, "--out", "g"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let golden = fixtures_dir().join("golden");
    for name in ["review.json", "review.md"] {
        let got = std::fs::read(e.dir.join("g").join(name)).unwrap();
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(golden.join(name), &got).unwrap();
        }
        assert_eq!(got, std::fs::read(golden.join(name)).unwrap(), "{name} drifted from fixtures/golden");
    }
}
