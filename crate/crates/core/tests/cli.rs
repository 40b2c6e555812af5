mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rvos_core::metrics::EvalReport;
use rvos_core::pipeline::{PairStatus, RunManifest, MANIFEST_FILE};
use rvos_core::report::render_summary;
use sha2::{Digest, Sha256};

use common::{mock_worker, png_tree, run_cli, tree};

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn synth_cli(dir: &Path, extra: &[&str]) -> PathBuf {
    let root = dir.join("data");
    let mut args = vec!["synth", "--out", s(&root)];
    args.extend_from_slice(extra);
    let (code, out, err) = run_cli(&args);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("expressions"));
    root
}

#[test]
fn sample_prints_json() {
    let (code, out, _) = run_cli(&["sample", "--frames", "100", "--kfs-strategy", "uniform", "--kfs-number", "10"]);
    assert_eq!(code, 0);
    assert_eq!(out, "[0,11,22,33,44,55,66,77,88,99]\n");
    let (code, out, _) = run_cli(&["sample", "--kfs-strategy", "head-continue", "--frames", "3", "--kfs-number", "40"]);
    assert_eq!(code, 0);
    assert_eq!(out, "[0,1,2]\n");
}

#[test]
fn bad_usage_exits_2() {
    let (code, _, err) = run_cli(&["sample", "--frames", "10", "--kfs-strategy", "random"]);
    assert_eq!(code, 2);
    assert!(err.contains("Usage"), "{err}");
    assert_eq!(run_cli(&["sample", "--frames", "10", "--bogus"]).0, 2);
    assert_eq!(run_cli(&[]).0, 2);
    // semantic errors are usage errors too
    assert_eq!(run_cli(&["sample", "--frames", "10", "--kfs-number", "0"]).0, 2);
    assert_eq!(run_cli(&["sample"]).0, 2);
}

fn digest(root: &Path) -> String {
    let mut h = Sha256::new();
    for (path, bytes) in tree(root) {
        h.update(path.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(&bytes);
    }
    hex::encode(h.finalize())
}

#[test]
fn synth_is_deterministic_and_loads() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let ra = synth_cli(a.path(), &["--seed", "7"]);
    let rb = synth_cli(b.path(), &["--seed", "7"]);
    let rc = synth_cli(c.path(), &["--seed", "8"]);
    assert_eq!(digest(&ra), digest(&rb));
    assert_ne!(digest(&ra), digest(&rc));
    let ds = rvos_core::dataset::load_dataset(&ra, "valid_u").unwrap();
    assert_eq!(ds.videos.len(), 5);
    assert!(ds.annotations_present);
}

#[test]
fn eval_identical_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_cli(dir.path(), &[]);
    let report = dir.path().join("r.json");
    let csv = dir.path().join("r.csv");
    let (code, out, err) = run_cli(&[
        "eval", "--pred", s(&root), "--dataset", s(&root), "--out", s(&report), "--csv", s(&csv),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out, "J&F 100.00  J 100.00  F 100.00\n");
    let r = EvalReport::load(&report).unwrap();
    assert_eq!(r.per_expression.len(), 15);
    let csv = std::fs::read_to_string(csv).unwrap();
    assert!(csv.starts_with("expression,J,F,J&F\nvid000/0,100.00,100.00,100.00\n"), "{csv}");
}

#[test]
fn gated_expression_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_cli(dir.path(), &[]);
    let pred = dir.path().join("pred");
    let (code, out, err) = run_cli(&[
        "run", "--dataset", s(&root), "--out", s(&pred), "--segmenter", "builtin:oracle", "--vlc", "builtin:mock",
        "--pool", "4",
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out, "pairs 15  ok 10  gated 5  errors 0\n");
    let manifest = RunManifest::load(&pred.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.count(PairStatus::GatedZero), 5);

    let report = dir.path().join("r.json");
    let (code, _, _) = run_cli(&["eval", "--pred", s(&pred), "--dataset", s(&root), "--out", s(&report)]);
    assert_eq!(code, 0);
    let r = EvalReport::load(&report).unwrap();
    let ds = rvos_core::dataset::load_dataset(&root, "valid_u").unwrap();
    for e in &ds.expressions {
        let score = r.per_expression[&e.key()];
        let expected = if e.text.contains("ABSENT") { 0.0 } else { 1.0 };
        assert!((score.j - expected).abs() < 1e-9 && (score.f - expected).abs() < 1e-9, "{}", e.key());
    }
}

#[test]
fn ablate_table2_renders_eight_rows() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_cli(dir.path(), &["--videos", "2"]);
    let out = dir.path().join("ablate");
    let csv = dir.path().join("ablate.csv");
    let (code, table, err) = run_cli(&[
        "ablate", "--grid", "table2", "--dataset", s(&root), "--out", s(&out), "--segmenter", "builtin:oracle",
        "--vlc", "builtin:mock", "--csv", s(&csv),
    ]);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 10, "{table}");
    assert!(lines[0].starts_with("VLC | KFS"));
    assert_eq!(lines[2..].iter().filter(|l| l.starts_with('✓')).count(), 3);
    assert_eq!(lines[2..].iter().filter(|l| l.starts_with('×')).count(), 5);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 9);
    // every cell has its own predictions and report
    let cells: Vec<_> = std::fs::read_dir(&out).unwrap().collect();
    assert_eq!(cells.len(), 8);
    assert!(out.join("07-vlc-hybrid-40/report.json").is_file());
}

#[test]
fn config_file_reproduces_flags() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_cli(dir.path(), &["--videos", "2"]);
    let pred = dir.path().join("pred");
    let flags = [
        "run", "--dataset", s(&root), "--out", s(&pred), "--segmenter", "builtin:oracle", "--vlc", "builtin:mock",
        "--kfs-strategy", "uniform", "--kfs-number", "3", "--vlc-strict",
    ];
    let mut printing = vec!["--print-config"];
    printing.extend_from_slice(&flags);
    let (code, printed, _) = run_cli(&printing);
    assert_eq!(code, 0);
    assert!(printed.contains("kfs-number = 3"), "{printed}");
    assert!(printed.contains("vlc-strict = true"), "{printed}");
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, &printed).unwrap();

    // the printed file resolves to itself
    let (_, again, _) = run_cli(&["--config", s(&cfg), "--print-config", "run"]);
    assert_eq!(again, printed);

    assert_eq!(run_cli(&flags).0, 0);
    let from_flags = png_tree(&pred);
    std::fs::remove_dir_all(&pred).unwrap();
    assert_eq!(run_cli(&["--config", s(&cfg), "run"]).0, 0);
    assert_eq!(png_tree(&pred), from_flags);

    // flags override the file
    let (_, over, _) = run_cli(&["--config", s(&cfg), "--print-config", "run", "--kfs-number", "9"]);
    assert!(over.contains("kfs-number = 9"));

    std::fs::write(&cfg, "[run]\nkfs-numbr = 3\n").unwrap();
    let (code, _, err) = run_cli(&["--config", s(&cfg), "run"]);
    assert_eq!(code, 2);
    assert!(err.contains("kfs-numbr"), "{err}");
}

#[test]
fn help_lists_every_flag() {
    let (code, top, _) = run_cli(&["--help"]);
    assert_eq!(code, 0);
    let mut seen = BTreeSet::new();
    for sub in ["run", "eval", "ablate", "sample", "check", "synth", "leaderboard", "conformance"] {
        let (code, help, _) = run_cli(&[sub, "--help"]);
        assert_eq!(code, 0);
        for word in help.split(|c: char| !(c.is_ascii_alphanumeric() || c == '-')) {
            if word.starts_with("--") && word.len() > 2 && word != "--help" && word != "--version" {
                seen.insert(word.to_string());
            }
        }
    }
    assert!(seen.len() > 30);
    for flag in &seen {
        assert!(top.contains(flag.as_str()), "{flag} missing from top-level help");
    }
}

#[test]
fn leaderboard_from_fixture_reports() {
    let dir = fixture("table1");
    let teams = ["MVP-Lab", "DanielLi", "Ranhong", "heshuai", "dytino", "niuqz"];
    let entries: Vec<String> = teams.iter().map(|t| format!("{t}={}", dir.join(format!("{t}.json")).display())).collect();
    let mut args = vec!["leaderboard"];
    args.extend(entries.iter().map(String::as_str));
    let (code, out, err) = run_cli(&args);
    assert_eq!(code, 0, "{err}");
    let order: Vec<&str> = out.lines().skip(2).map(|l| l.split(' ').next().unwrap()).collect();
    assert_eq!(order, ["niuqz", "Ranhong", "dytino", "heshuai", "DanielLi", "MVP-Lab"]);
    assert!(out.lines().any(|l| l.starts_with("Ranhong") && l.ends_with("64.65 | 61.29 | 68.01")), "{out}");

    args.push("--csv");
    let (_, csv, _) = run_cli(&args);
    assert!(csv.contains("\nheshuai,62.22,58.99,65.44\n"), "{csv}");
    assert!(csv.ends_with("MVP-Lab,57.09,53.32,60.85\n"));

    let r = EvalReport::load(&dir.join("Ranhong.json")).unwrap();
    assert_eq!(render_summary(&r), "J&F 64.65  J 61.29  F 68.01");
}

#[test]
fn segmenter_failures_set_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_cli(dir.path(), &["--videos", "2"]);
    let worker = mock_worker("segmenter", "--fail-marker ABSENT --fill full");
    let pred = dir.path().join("pred");
    let base = ["run", "--dataset", s(&root), "--out", s(&pred), "--segmenter", worker.as_str(), "--pool", "2"];

    let (code, out, err) = run_cli(&base);
    assert_eq!(code, 1, "{err}");
    assert_eq!(out, "pairs 6  ok 4  gated 0  errors 2\n");
    let manifest = RunManifest::load(&pred.join(MANIFEST_FILE)).unwrap();
    assert!(manifest
        .pairs
        .iter()
        .filter(|p| p.status == PairStatus::BackendError)
        .all(|p| p.note.as_deref().unwrap().contains("injected")));

    let mut strict = base.to_vec();
    strict.push("--strict");
    assert_eq!(run_cli(&strict).0, 3);

    let missing = ["run", "--dataset", s(&root), "--out", s(&pred), "--segmenter", "/no/such/worker"];
    assert_eq!(run_cli(&missing).0, 3);
}

#[test]
fn checker_failures_fail_open_unless_strict() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_cli(dir.path(), &["--videos", "2"]);
    let checker = mock_worker("checker", "--crash-marker ABSENT");
    let pred = dir.path().join("pred");
    let base = ["run", "--dataset", s(&root), "--out", s(&pred), "--segmenter", "builtin:oracle", "--vlc", checker.as_str()];

    // crashing on the marker means those pairs proceed as "yes"
    let (code, out, err) = run_cli(&base);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out, "pairs 6  ok 6  gated 0  errors 0\n");
    let manifest = RunManifest::load(&pred.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.pairs.iter().filter(|p| p.note.is_some()).count(), 2);

    let mut strict = base.to_vec();
    strict.push("--vlc-strict");
    assert_eq!(run_cli(&strict).0, 3);
}

#[test]
fn eval_missing_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_cli(dir.path(), &["--videos", "2"]);
    let pred = dir.path().join("pred");
    assert_eq!(run_cli(&["run", "--dataset", s(&root), "--out", s(&pred), "--segmenter", "builtin:oracle"]).0, 0);
    std::fs::remove_dir_all(pred.join("Annotations/vid001/1")).unwrap();

    let (code, _, err) = run_cli(&["eval", "--pred", s(&pred), "--dataset", s(&root)]);
    assert_eq!(code, 2);
    assert!(err.contains("vid001/1"), "{err}");

    let (code, out, _) = run_cli(&["eval", "--pred", s(&pred), "--dataset", s(&root), "--score-missing-zero"]);
    assert_eq!(code, 1);
    // 5 of 6 expressions perfect
    assert_eq!(out, "J&F 83.33  J 83.33  F 83.33\n");
}

#[test]
fn check_reports_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_cli(dir.path(), &["--videos", "1"]);
    let ask = |expr: &str, vlc: &str| {
        let (code, out, err) = run_cli(&["check", "--dataset", s(&root), "--video", "vid000", "--expression", expr, "--vlc", vlc]);
        assert_eq!(code, 0, "{err}");
        serde_json::from_str::<serde_json::Value>(&out).unwrap()
    };
    assert_eq!(ask("0", "builtin:mock")["matches"], true);
    let v = ask("2", "builtin:mock");
    assert_eq!(v["matches"], false);
    assert!(v["expression"].as_str().unwrap().contains("ABSENT"));
    let v = ask("2", &mock_worker("checker", "--verbose-answers --name stub"));
    assert_eq!(v["matches"], false);
    assert_eq!(v["backend"], "stub");
    assert!(v["answer"].as_str().unwrap().starts_with("No."));

    let (code, _, _) = run_cli(&["check", "--dataset", s(&root), "--video", "vid000", "--expression", "9", "--vlc", "builtin:mock"]);
    assert_eq!(code, 2);
}

#[test]
fn conformance_against_golden_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let requests = dir.path().join("requests.jsonl");
    let mut lines = vec![r#"{"op":"hello"}"#.to_string()];
    for i in 0..9 {
        let text = if i % 3 == 0 { format!("the ABSENT dog {i}") } else { format!("a running cat {i}") };
        lines.push(serde_json::json!({"op":"check","video_id":"v","expression":text,"prompt":"p","frames":["a.jpg"]}).to_string());
    }
    std::fs::write(&requests, lines.join("\n")).unwrap();
    let checker = mock_worker("checker", "");
    let golden = dir.path().join("golden.jsonl");
    let (code, out, err) = run_cli(&[
        "conformance", "--worker", &checker, "--requests", s(&requests), "--record", s(&golden),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out, "recorded 10 exchanges\n");

    let (code, out, _) = run_cli(&["conformance", "--worker", &checker, "--golden", s(&golden)]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(out, "PASS 10 exchanges, 0 failures\n");

    // a worker with a different rule fails the same transcript
    let other = mock_worker("checker", "--marker cat");
    let (code, out, _) = run_cli(&["conformance", "--worker", &other, "--golden", s(&golden)]);
    assert_eq!(code, 1);
    assert!(out.lines().last().unwrap().starts_with("FAIL 10 exchanges"));

    // segmenter session with RLE masks
    let seg_req = dir.path().join("seg.jsonl");
    std::fs::write(
        &seg_req,
        concat!(
            "{\"op\":\"hello\"}\n",
            "{\"op\":\"segment\",\"video_id\":\"v\",\"expression\":\"x\",\"height\":4,\"width\":5,",
            "\"key_frames\":[{\"index\":0,\"path\":\"a.jpg\"},{\"index\":2,\"path\":\"c.jpg\"}],",
            "\"all_frames\":[\"a.jpg\",\"b.jpg\",\"c.jpg\"]}\n"
        ),
    )
    .unwrap();
    let seg = mock_worker("segmenter", "--fill full");
    let seg_golden = dir.path().join("seg-golden.jsonl");
    assert_eq!(run_cli(&["conformance", "--worker", &seg, "--requests", s(&seg_req), "--record", s(&seg_golden)]).0, 0);
    let text = std::fs::read_to_string(&seg_golden).unwrap();
    assert!(text.contains(r#""coverage":"key_frames_only""#), "{text}");
    assert!(text.contains(r#""rle":[0,20]"#), "{text}");
    assert_eq!(run_cli(&["conformance", "--worker", &seg, "--golden", s(&seg_golden)]).0, 0);
}
