use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn toy(name: &str) -> String {
    fixtures().join("toy").join(name).to_string_lossy().into_owned()
}

fn golden(name: &str) -> String {
    fixtures().join("golden").join(name).to_string_lossy().into_owned()
}

fn har(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_har")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn malformed_line_is_a_data_error_citing_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("actions.txt");
    let lines = [
        "CLICK:(1,2)",
        "BACK",
        "HOME",
        "SCROLL:UP",
        "ENTER",
        "COMPLETE",
        "CLICK:(1,",
        "BACK",
    ];
    std::fs::write(&path, lines.join("\n")).unwrap();
    let out = har(&["parse", "--actions-file", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains(":7:"), "{err}");
    assert!(err.contains("byte 9"), "{err}");
}

#[test]
fn valid_actions_file_passes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("actions.txt");
    std::fs::write(&path, "CLICK:(1,2)\n\nSELECT:(59,892,Chicago)\n").unwrap();
    let out = har(&["parse", "--actions-file", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("2 actions ok"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(har(&["score", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(har(&["parse"]).status.code(), Some(2));
    assert_eq!(
        har(&["mix", "--episodic", "a", "--grounding", "b", "--ratio", "1.5"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(har(&["--version"]).status.code(), Some(0));
}

#[test]
fn cassette_miss_is_a_backend_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = har(&[
        "score",
        "--corpus",
        &toy("corpus.jsonl"),
        "--predictions",
        &toy("warmup_predictions.jsonl"),
        "--backend",
        "replay",
        "--cassette",
        empty.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));

    let out = har(&[
        "reflect-build",
        "--hard",
        &toy("golden/hard.jsonl"),
        "--backend",
        "replay",
        "--cassette",
        empty.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn missing_input_is_a_data_error() {
    let out = har(&[
        "score",
        "--corpus",
        "/nonexistent/corpus.jsonl",
        "--predictions",
        "/nonexistent/p.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn replayed_judge_scores_match_golden() {
    let out = har(&[
        "score",
        "--corpus",
        &toy("corpus.jsonl"),
        "--predictions",
        &toy("warmup_predictions.jsonl"),
        "--backend",
        "replay",
        "--cassette",
        &toy("judge_cassette.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let want = std::fs::read(toy("golden/warmup_rewards.jsonl")).unwrap();
    assert!(out.stdout == want, "score output drifted from golden");
}

#[test]
fn advantages_reproduce_golden() {
    let out = har(&["advantages", "--rewards", &toy("golden/rollout_rewards.jsonl")]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let want = std::fs::read(toy("golden/advantages.jsonl")).unwrap();
    assert!(out.stdout == want);
}

#[test]
fn mix_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let ground = dir.path().join("grounding.jsonl");
    let lines: Vec<String> = (0..9).map(|i| format!("{{\"query_id\":\"q{i}\"}}")).collect();
    std::fs::write(&ground, lines.join("\n")).unwrap();
    let run = |seed: &str| {
        let out = har(&[
            "mix",
            "--episodic",
            &toy("corpus.jsonl"),
            "--grounding",
            ground.to_str().unwrap(),
            "--batch-size",
            "4",
            "--seed",
            seed,
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        out.stdout
    };
    let a = run("7");
    assert_eq!(a, run("7"));
    assert_ne!(a, run("8"));

    let text = String::from_utf8(a).unwrap();
    let batches: Vec<Value> = text.lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(batches.len(), 4);
    let items: usize = batches.iter().map(|b| b["items"].as_array().unwrap().len()).sum();
    assert_eq!(items, 14);
    for b in &batches[..2] {
        let grounding = b["items"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|i| i["task"] == "grounding")
            .count();
        assert_eq!(grounding, 2);
    }
}

#[test]
fn eval_json_matches_hand_counts() {
    let out = har(&[
        "eval",
        "--corpus",
        &golden("metrics_corpus.jsonl"),
        "--predictions",
        &golden("metrics_predictions.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let overall = &v["report"]["overall"];
    assert_eq!(overall["correct_steps"], 6);
    assert_eq!(overall["successful_episodes"], 1);
    assert_eq!(overall["ssr"].as_f64(), Some(0.6));
    assert_eq!(v["report"]["missing_predictions"], 1);
    assert_eq!(v["report"]["unmatched_predictions"], 1);
    assert!(stderr(&out).contains("1 steps had no prediction"));
}

#[test]
fn eval_table_lists_splits() {
    let out = har(&[
        "eval",
        "--corpus",
        &golden("metrics_corpus.jsonl"),
        "--predictions",
        &golden("metrics_predictions.jsonl"),
        "--format",
        "table",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("| General | 2 | 7 | 42.9 | 0.0 | 75.0 | 75.7 |"),
        "{text}"
    );
    assert!(
        text.contains("| Overall | 3 | 10 | 60.0 | 33.3 | 75.0 | 83.0 |"),
        "{text}"
    );
}

#[test]
fn plot_shows_the_regime_gap() {
    let out = har(&[
        "plot",
        "--width",
        "1000",
        "--height",
        "2000",
        "--axis",
        "x",
        "--max-distance",
        "300",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# {\"header\""));
    assert_eq!(lines.next(), Some("distance,norm_distance,reward"));
    let rows: Vec<(f64, f64, f64)> = lines
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
            (f[0], f[1], f[2])
        })
        .collect();
    assert_eq!(rows.len(), 301);
    assert_eq!(rows[0].2, 2.0);
    // inner regime bottoms out at 1 beyond 40 px, then drops below 1 past the threshold
    let inner_last = rows.iter().rev().find(|r| r.1 <= 0.1).unwrap();
    let outer_first = rows.iter().find(|r| r.1 > 0.1).unwrap();
    assert_eq!(inner_last.2, 1.0);
    assert!(outer_first.2 < 0.5, "{outer_first:?}");
}
