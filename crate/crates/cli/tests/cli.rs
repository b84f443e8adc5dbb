use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_gazeworld");

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/demo.json")
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema").join(name);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&doc).unwrap()
}

fn assert_valid(validator: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = validator
        .iter_errors(doc)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "schema violations: {errors:#?}");
}

fn gw(workdir: &Path, args: &[&str]) -> Output {
    gw_env(workdir, args, None)
}

fn gw_env(workdir: &Path, args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.arg("--workdir")
        .arg(workdir)
        .args(args)
        .env_remove("GAZEWORLD_SEED");
    if let Some(s) = seed {
        cmd.env("GAZEWORLD_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn demo(workdir: &Path, args: &[&str]) -> Value {
    let cfg = demo_config();
    let mut full = vec!["--config", cfg.to_str().unwrap()];
    full.extend_from_slice(args);
    ok(gw(workdir, &full))
}

fn ok(out: Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

/// Exit code and the error object from the last stderr line.
fn fails(out: Output) -> (i32, Value) {
    assert!(
        !out.status.success(),
        "expected failure, stdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("stderr has an error line");
    let err: Value = serde_json::from_str(last).unwrap_or_else(|e| panic!("{e}: {stderr}"));
    assert_valid(&schema("error.schema.json"), &err);
    (out.status.code().unwrap(), err)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn demo_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let report_schema = schema("report.schema.json");

    let clock = Instant::now();
    let synth = demo(w, &["synth"]);
    let pretrain = demo(w, &["pretrain"]);
    assert!(clock.elapsed() < Duration::from_secs(300));

    let probe = demo(w, &["probe"]);
    let scanpath = demo(w, &["scanpath"]);
    let metrics = demo(
        w,
        &[
            "metrics",
            "--pred",
            "scanpath/predictions.jsonl",
            "--truth",
            "scanpath/predictions.jsonl",
        ],
    );
    for (name, report) in [
        ("synth", &synth),
        ("pretrain", &pretrain),
        ("probe", &probe),
        ("scanpath", &scanpath),
        ("metrics", &metrics),
    ] {
        assert_valid(&report_schema, report);
        assert_eq!(report["command"], name);
        assert_eq!(report["version"], env!("CARGO_PKG_VERSION"));
        let on_disk = read_json(&w.join(format!("reports/{name}.json")));
        assert_eq!(&on_disk, report, "{name} report on disk differs from stdout");
        for rel in report["outputs"].as_object().unwrap().values() {
            assert!(w.join(rel.as_str().unwrap()).exists(), "{name} output {rel} missing");
        }
    }

    let r = &pretrain["result"];
    assert_eq!(r["final_step"], 100);
    assert_eq!(r["tau_first"], 0.998);
    assert_eq!(r["tau_last"], 1.0);
    assert!(r["final_loss"].as_f64().unwrap() < r["initial_loss"].as_f64().unwrap());
    let svg = std::fs::read_to_string(w.join("pretrain/loss.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<polyline").count() == 4);
    let steps = std::fs::read_to_string(w.join("pretrain/steps.jsonl")).unwrap();
    assert_eq!(steps.lines().count(), 100);

    let n_pred = std::fs::read_to_string(w.join("scanpath/predictions.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(n_pred as u64, scanpath["result"]["test_examples"].as_u64().unwrap());

    let m = &metrics["result"]["means"];
    assert_eq!(
        (m["sed"].as_f64(), m["scanmatch"].as_f64(), m["stde"].as_f64()),
        (Some(0.0), Some(1.0), Some(1.0))
    );
    assert_eq!(m["mm_vector"], 1.0);
    assert_eq!(
        metrics["result"]["pairs"].as_array().unwrap().len() as u64,
        m["n_pairs"].as_u64().unwrap()
    );
}

#[test]
fn rerun_from_embedded_config_reproduces_results() {
    let first = tempfile::tempdir().unwrap();
    demo(first.path(), &["synth"]);
    let a = demo(first.path(), &["pretrain", "--set", "train.max_steps=30"]);
    let probe_a = demo(first.path(), &["probe", "--set", "train.max_steps=30"]);

    // Second run only sees the reports written by the first.
    let second = tempfile::tempdir().unwrap();
    let w2 = second.path();
    std::fs::copy(first.path().join("reports/synth.json"), w2.join("synth_cfg.json")).unwrap();
    std::fs::copy(first.path().join("reports/pretrain.json"), w2.join("pretrain_cfg.json")).unwrap();
    std::fs::copy(first.path().join("reports/probe.json"), w2.join("probe_cfg.json")).unwrap();
    ok(gw(w2, &["--config", "synth_cfg.json", "synth"]));
    let b = ok(gw(w2, &["--config", "pretrain_cfg.json", "pretrain"]));
    let probe_b = ok(gw(w2, &["--config", "probe_cfg.json", "probe"]));

    assert_eq!(a["config"], b["config"]);
    assert_eq!(a["result"], b["result"]);
    assert_eq!(probe_a["result"], probe_b["result"]);
    let ck_a = std::fs::read(first.path().join("pretrain/model.gzw")).unwrap();
    let ck_b = std::fs::read(w2.join("pretrain/model.gzw")).unwrap();
    assert!(ck_a == ck_b, "checkpoints differ");
    let svg_a = std::fs::read(first.path().join("pretrain/loss.svg")).unwrap();
    let svg_b = std::fs::read(w2.join("pretrain/loss.svg")).unwrap();
    assert!(svg_a == svg_b, "loss curves differ");
}

#[test]
fn resume_from_periodic_checkpoint_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let set = ["--set", "train.max_steps=40", "--set", "train.checkpoint_every=20"];
    demo(w, &["synth"]);
    let mut args = vec!["pretrain"];
    args.extend_from_slice(&set);
    demo(w, &args);
    let full = std::fs::read(w.join("pretrain/model.gzw")).unwrap();
    let full_steps = std::fs::read_to_string(w.join("pretrain/steps.jsonl")).unwrap();

    args.extend_from_slice(&["--resume", "pretrain/checkpoints/step_000020.gzw"]);
    let resumed = demo(w, &args);
    assert_eq!(resumed["result"]["resumed_from_step"], 20);
    assert_eq!(resumed["result"]["steps_run"], 20);
    assert!(std::fs::read(w.join("pretrain/model.gzw")).unwrap() == full);
    let tail: Vec<&str> = full_steps.lines().skip(20).collect();
    let resumed_steps = std::fs::read_to_string(w.join("pretrain/steps.jsonl")).unwrap();
    assert_eq!(resumed_steps.lines().collect::<Vec<_>>(), tail);
}

#[test]
fn ablation_report_orders_gaze_above_random() {
    let dir = tempfile::tempdir().unwrap();
    let report = demo(dir.path(), &["ablate"]);
    assert_valid(&schema("report.schema.json"), &report);
    let r = &report["result"];
    assert_eq!(r["runs"].as_array().unwrap().len(), 3);
    let mean = &r["mean_auroc"];
    let (gaze, random) = (
        mean["intensity-order"].as_f64().unwrap(),
        mean["random"].as_f64().unwrap(),
    );
    assert!(gaze > random, "gaze {gaze} random {random}");
    assert_eq!(r["gaze_beats_random"], true);
}

#[test]
fn every_unknown_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    std::fs::write(
        w.join("bad.json"),
        r#"{"train": {"lr": 1}, "extra": {}, "data": {"n_images": 5}}"#,
    )
    .unwrap();
    let (code, err) = fails(gw(w, &["--config", "bad.json", "--set", "model.depth=4", "synth"]));
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "invalid-config");
    let details: Vec<&str> = err["error"]["details"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d.as_str().unwrap())
        .collect();
    assert_eq!(details.len(), 3, "{details:?}");
    for key in ["train.lr", "extra", "model.depth"] {
        assert!(details.contains(&format!("unknown key {key}").as_str()), "{details:?}");
    }
    assert!(!w.join("reports").exists());
}

#[test]
fn invalid_values_are_reported_together() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = fails(gw(
        dir.path(),
        &["--set", "train.batch_size=0", "--set", "model.patch_px=3", "synth"],
    ));
    assert_eq!(code, 2);
    assert_eq!(err["error"]["details"].as_array().unwrap().len(), 2, "{err}");
}

#[test]
fn missing_inputs_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let (code, err) = fails(gw(w, &["probe"]));
    assert_eq!(code, 1);
    assert_eq!(err["error"]["kind"], "missing-file");
    assert!(err["error"]["details"][0].as_str().unwrap().ends_with("model.gzw"));

    let (_, err) = fails(gw(w, &["pretrain"]));
    assert!(err["error"]["message"].as_str().unwrap().contains("data"));

    let (_, err) = fails(gw(w, &["--config", "nope.json", "synth"]));
    assert_eq!(err["error"]["kind"], "missing-file");
    assert!(err["error"]["message"].as_str().unwrap().contains("nope.json"));

    let (_, err) = fails(gw(w, &["metrics", "--pred", "p.jsonl", "--truth", "t.jsonl"]));
    assert!(err["error"]["details"][0].as_str().unwrap().ends_with("p.jsonl"));
}

#[test]
fn stale_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    demo(w, &["synth"]);
    let (code, err) = fails(gw_env(
        w,
        &["--config", demo_config().to_str().unwrap(), "pretrain"],
        Some("7"),
    ));
    assert_eq!(code, 1);
    assert!(
        err["error"]["message"].as_str().unwrap().contains("seed 0 (config 7)"),
        "{err}"
    );
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let cfg = demo_config();
    let a = ok(gw_env(w, &["--config", cfg.to_str().unwrap(), "synth"], Some("5")));
    assert_eq!(a["seed"], 5);
    assert_eq!(a["config"]["model"]["init_seed"], 5);
    assert_eq!(a["config"]["train"]["seed"], 5);
    let manifest = read_json(&w.join("data/manifest.json"));
    assert_eq!(manifest["seed"], 5);
    let other = tempfile::tempdir().unwrap();
    let b = ok(gw(other.path(), &["--config", cfg.to_str().unwrap(), "synth"]));
    assert_ne!(a["result"], b["result"]);

    let (code, _) = fails(gw_env(w, &["synth"], Some("-1")));
    assert_eq!(code, 2);
}

#[test]
fn metrics_on_mismatched_files_fails() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    std::fs::write(
        w.join("a.jsonl"),
        "{\"image_id\":\"x\",\"task\":0,\"fixations\":[{\"x\":0.1,\"y\":0.1,\"dur\":0.2}]}\n",
    )
    .unwrap();
    std::fs::write(
        w.join("b.jsonl"),
        "{\"image_id\":\"y\",\"task\":0,\"fixations\":[{\"x\":0.1,\"y\":0.1,\"dur\":0.2}]}\n",
    )
    .unwrap();
    let (code, err) = fails(gw(w, &["metrics", "--pred", "a.jsonl", "--truth", "b.jsonl"]));
    assert_eq!(code, 1);
    assert!(err["error"]["message"].as_str().unwrap().contains("image x"));
    std::fs::write(w.join("c.jsonl"), "not json\n").unwrap();
    let (_, err) = fails(gw(w, &["metrics", "--pred", "c.jsonl", "--truth", "b.jsonl"]));
    assert_eq!(err["error"]["kind"], "runtime");
}

#[test]
fn config_command_prints_resolved_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ok(gw(dir.path(), &["config", "--set", "train.learning_rate=0.01"]));
    assert_eq!(cfg["train"]["learning_rate"], 0.01);
    assert_eq!(cfg["model"]["embed_dim"], 32);
    let demo_cfg = ok(gw(dir.path(), &["config", "--demo"]));
    assert_eq!(demo_cfg["data"]["n_images"], 120);
    assert!(!dir.path().join("reports").exists());
}

#[test]
fn usage_errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = fails(gw(dir.path(), &["frobnicate"]));
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "usage");
    let (code, _) = fails(gw(dir.path(), &["--set", "novalue", "synth"]));
    assert_eq!(code, 2);
}
