//! Subcommand behaviour through the built binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_chartforge");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("CHARTFORGE_SEED")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "chartforge {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_is_deterministic_and_counts_as_asked() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["generate", "--count", "bar=3", "--seed", "42", "--out", "a"],
    );
    ok(
        d.path(),
        &["generate", "--count", "bar=3", "--seed", "42", "--out", "b"],
    );
    let a = fs::read(d.path().join("a/manifest.json")).unwrap();
    assert_eq!(a, fs::read(d.path().join("b/manifest.json")).unwrap());
    assert_eq!(
        json(&d.path().join("a/manifest.json"))["items"]
            .as_array()
            .unwrap()
            .len(),
        3
    );

    ok(d.path(), &["generate", "--count", "radar=2,combo=2", "--out", "c"]);
    let items = jsonl(&d.path().join("c/items.jsonl"));
    assert_eq!(items.len(), 4);
    let radar = items.iter().filter(|i| i["chart_type"] == "radar").count();
    let combo = items.iter().filter(|i| i["chart_type"] == "combo").count();
    assert_eq!((radar, combo), (2, 2));
}

#[test]
fn generate_refuses_occupied_dirs_without_force() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["generate", "--count", "line=2", "--out", "ds"]);
    let out = run(d.path(), &["generate", "--count", "line=2", "--out", "ds"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--force"));

    // --force keeps files it does not own
    fs::write(d.path().join("ds/notes.txt"), "mine").unwrap();
    ok(d.path(), &["generate", "--count", "bar=1", "--out", "ds", "--force"]);
    assert_eq!(fs::read_to_string(d.path().join("ds/notes.txt")).unwrap(), "mine");
    assert_eq!(jsonl(&d.path().join("ds/items.jsonl")).len(), 1);
    assert_eq!(fs::read_dir(d.path().join("ds/charts")).unwrap().count(), 1);
}

#[test]
fn seed_precedence_is_flag_then_env_then_file() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("cfg.toml"), "seed = 5\n").unwrap();
    let seed_of = |dir: &str| {
        json(&d.path().join(dir).join("run_manifest.json"))["seed"]
            .as_u64()
            .unwrap()
    };
    ok(
        d.path(),
        &["--config", "cfg.toml", "generate", "--count", "bar=1", "--out", "file"],
    );
    assert_eq!(seed_of("file"), 5);
    let out = Command::new(BIN)
        .args(["--config", "cfg.toml", "generate", "--count", "bar=1", "--out", "env"])
        .current_dir(d.path())
        .env("CHARTFORGE_SEED", "6")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(seed_of("env"), 6);
    let out = Command::new(BIN)
        .args([
            "--config", "cfg.toml", "--seed", "7", "generate", "--count", "bar=1", "--out", "flag",
        ])
        .current_dir(d.path())
        .env("CHARTFORGE_SEED", "6")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(seed_of("flag"), 7);
}

/// Writes responses answering every item with `answer(gt, index)`.
fn respond(dir: &Path, dataset: &str, file: &str, answer: impl Fn(f64, usize) -> f64) {
    let items = jsonl(&dir.join(dataset).join("items.jsonl"));
    let lines: Vec<String> = items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let v = answer(it["answer_gt"].as_f64().unwrap(), i);
            serde_json::json!({"item_id": it["item_id"], "raw_text": format!("<think>t</think><answer>{v}</answer>")})
                .to_string()
        })
        .collect();
    fs::write(dir.join(file), lines.join("\n") + "\n").unwrap();
}

#[test]
fn evaluate_scores_perfect_and_partial_runs() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["generate", "--count", "bar=4,line=3,scatter=3", "--out", "ds"],
    );
    respond(d.path(), "ds", "perfect.jsonl", |gt, _| gt);
    ok(
        d.path(),
        &[
            "evaluate",
            "--dataset",
            "ds",
            "--responses",
            "perfect.jsonl",
            "--out",
            "ev1",
        ],
    );
    let r = json(&d.path().join("ev1/report.json"));
    assert_eq!(r["overall"].as_f64(), Some(100.0));
    for c in r["cells"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["n"].as_u64() > Some(0))
    {
        assert_eq!(c["accuracy"].as_f64(), Some(100.0));
    }

    // items 0..7 right, 7..10 off by 10%
    respond(d.path(), "ds", "seven.jsonl", |gt, i| if i < 7 { gt } else { gt * 1.1 });
    ok(
        d.path(),
        &[
            "evaluate",
            "--dataset",
            "ds",
            "--responses",
            "seven.jsonl",
            "--out",
            "ev2",
        ],
    );
    let r = json(&d.path().join("ev2/report.json"));
    assert_eq!(r["overall"].as_f64(), Some(70.0));
    let txt = fs::read_to_string(d.path().join("ev2/report.txt")).unwrap();
    let header = txt.lines().nth(1).unwrap();
    let order: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(
        order,
        ["Box", "Area", "Radar", "Scatter", "Bar", "Line", "Combo", "Bar", "Line", "Combo", "Overall"]
    );
}

#[test]
fn evaluate_reports_bad_inputs() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["generate", "--count", "bar=2", "--out", "ds"]);
    let out = run(
        d.path(),
        &[
            "evaluate",
            "--dataset",
            "ds",
            "--responses",
            "nowhere.jsonl",
            "--out",
            "ev",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nowhere.jsonl"));

    fs::write(
        d.path().join("stray.jsonl"),
        "{\"item_id\":\"ghost-q\",\"raw_text\":\"1\"}\n",
    )
    .unwrap();
    let out = run(
        d.path(),
        &[
            "evaluate",
            "--dataset",
            "ds",
            "--responses",
            "stray.jsonl",
            "--out",
            "ev",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("ghost-q"));
}

#[test]
fn reward_and_advantages_fixtures() {
    let d = tempfile::tempdir().unwrap();
    let rows = [
        r#"{"raw_text":"<think>a</think><answer>50</answer>","answer_gt":50}"#,
        r#"{"raw_text":"<think>a</think><answer>52</answer>","answer_gt":50}"#,
        r#"{"raw_text":"<answer>50</answer>","answer_gt":50}"#,
        r#"{"raw_text":"garbage","answer_gt":50}"#,
    ];
    fs::write(d.path().join("in.jsonl"), rows.join("\n")).unwrap();
    ok(
        d.path(),
        &["reward", "--epsilon", "0.02", "--input", "in.jsonl", "--out", "r.jsonl"],
    );
    let totals: Vec<f64> = jsonl(&d.path().join("r.jsonl"))
        .iter()
        .map(|r| r["total"].as_f64().unwrap())
        .collect();
    assert_eq!(totals, [2.0, 1.0, 1.0, 0.0]);
    assert!(d.path().join("run_manifest.json").exists());

    fs::write(
        d.path().join("g.jsonl"),
        "{\"prompt_id\":\"p\",\"reward\":2}\n{\"prompt_id\":\"p\",\"reward\":0}\n",
    )
    .unwrap();
    ok(d.path(), &["advantages", "--input", "g.jsonl", "--out", "a.jsonl"]);
    let a = jsonl(&d.path().join("a.jsonl"));
    assert_eq!(a[0]["advantages"], serde_json::json!([1.0, -1.0]));
}

#[test]
fn curate_boundary_prints_the_mixed_item() {
    let d = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    for (id, marks) in [
        ("q1", [true, true, true]),
        ("q2", [true, false, true]),
        ("q3", [false, false, false]),
    ] {
        for (r, c) in marks.iter().enumerate() {
            lines.push(
                serde_json::json!({"item_id": id, "round_index": r, "prompt_mode": "direct",
                    "temperature": 0.9, "raw_text": "", "correct": c})
                .to_string(),
            );
        }
    }
    fs::write(d.path().join("log.jsonl"), lines.join("\n")).unwrap();
    let stdout = ok(d.path(), &["curate", "boundary", "--log", "log.jsonl"]);
    assert_eq!(stdout.trim(), "q2");
}

#[test]
fn curate_aborts_with_a_cursor_and_resumes() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["generate", "--count", "bar=3", "--out", "ds"]);
    fs::write(
        d.path().join("denied.json"),
        r#"{"default":[{"error":"no key","status":401}]}"#,
    )
    .unwrap();
    fs::write(
        d.path().join("good.json"),
        r#"{"default":["<think>x</think><answer>1</answer>"]}"#,
    )
    .unwrap();
    let out = run(
        d.path(),
        &[
            "curate",
            "run",
            "--dataset",
            "ds",
            "--out",
            "cur",
            "--mock-script",
            "denied.json",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(d.path().join("cur/cursor.json").exists());
    ok(
        d.path(),
        &[
            "curate",
            "run",
            "--dataset",
            "ds",
            "--out",
            "cur",
            "--mock-script",
            "good.json",
            "--resume",
        ],
    );
    assert!(!d.path().join("cur/cursor.json").exists());
    let log = jsonl(&d.path().join("cur/inference_log.jsonl"));
    assert_eq!(log.len(), 3 * 4);
}

#[test]
fn transport_failures_exit_with_two() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["generate", "--count", "bar=2", "--out", "ds"]);
    fs::write(
        d.path().join("denied.json"),
        r#"{"default":[{"error":"no key","status":401}]}"#,
    )
    .unwrap();
    let out = run(
        d.path(),
        &[
            "infer",
            "--dataset",
            "ds",
            "--out",
            "r.jsonl",
            "--mock-script",
            "denied.json",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn distill_reports_shortfall_as_partial() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["generate", "--count", "bar=3", "--out", "ds"]);
    fs::write(d.path().join("untagged.json"), r#"{"default":["about 40"]}"#).unwrap();
    let out = run(
        d.path(),
        &[
            "distill",
            "--dataset",
            "ds",
            "--out",
            "dis",
            "--target",
            "2",
            "--mock-script",
            "untagged.json",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let report = json(&d.path().join("dis/distill_report.json"));
    assert_eq!(report["stats"]["missing_tags"], 6);
    assert_eq!(report["rejection_rates"]["missing_tags"], 100.0);
    assert_eq!(report["shortfall"], 2);
}

#[test]
fn replay_reproduces_and_detects_tampering() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["--seed", "9", "generate", "--count", "area=2,scatter=1", "--out", "ds"],
    );
    let before = fs::read(d.path().join("ds/run_manifest.json")).unwrap();
    // a changed environment must not leak into the replay
    let out = Command::new(BIN)
        .args(["replay", "--manifest", "ds/run_manifest.json"])
        .current_dir(d.path())
        .env("CHARTFORGE_SEED", "1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read(d.path().join("ds/run_manifest.json")).unwrap(), before);

    let mut m = json(&d.path().join("ds/run_manifest.json"));
    m["outputs"]["items.jsonl"] = Value::String("0".repeat(64));
    fs::write(d.path().join("ds/run_manifest.json"), m.to_string()).unwrap();
    let out = run(d.path(), &["replay", "--manifest", "ds/run_manifest.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn render_single_spec_and_import_real() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["generate", "--count", "radar=1", "--out", "ds"]);
    let spec = fs::read_dir(d.path().join("ds/charts"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let spec = spec.to_str().unwrap().to_string();
    ok(
        d.path(),
        &[
            "render",
            "--spec",
            &spec,
            "--out",
            "one/chart.svg",
            "--width",
            "400",
            "--height",
            "300",
        ],
    );
    let svg = fs::read_to_string(d.path().join("one/chart.svg")).unwrap();
    assert!(svg.contains(r#"width="400""#));
    assert!(d.path().join("one/chart.meta.json").exists());

    fs::write(d.path().join("img.png"), b"\x89PNG not really").unwrap();
    let recs = [
        r#"{"image":"img.png","question":"What is the value?","answer":12.5,"chart_type":"bar"}"#,
        r#"{"image":"img.png","question":"What is the other value?","answer":0,"chart_type":"bar"}"#,
        r#"{"image":"img.png","question":"Which radar?","answer":3,"chart_type":"radar"}"#,
    ];
    fs::write(d.path().join("imports.jsonl"), recs.join("\n")).unwrap();
    ok(
        d.path(),
        &["import-real", "--imports", "imports.jsonl", "--out", "real"],
    );
    assert_eq!(jsonl(&d.path().join("real/real_items.jsonl")).len(), 1);
    let rejected = json(&d.path().join("real/real_rejections.json"));
    let idx: Vec<u64> = rejected
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["index"].as_u64().unwrap())
        .collect();
    assert_eq!(idx, [1, 2]);
}
