use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn sfdqn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfdqn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sfdqn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_TRAIN: &str = "steps = 20\nunits_per_step = 2\nsync_interval = 5\ncheckpoint_interval = 5\n";

/// gen-data → train → eval on a tiny problem.
fn pipeline(dir: &Path) {
    let data = dir.join("data");
    let run = dir.join("run");
    let cfg = dir.join("small.cfg");
    fs::write(&cfg, SMALL_TRAIN).unwrap();
    ok(&["gen-data", "--seed", "5", "--n-units", "40", "--out", p(&data)]);
    ok(&[
        "train",
        "--dataset",
        p(&data.join("dataset.sfds")),
        "--config",
        p(&cfg),
        "--seed",
        "1",
        "--out",
        p(&run),
    ]);
    ok(&["eval", "--checkpoints", p(&run.join("checkpoints")), "--workers", "2"]);
}

#[test]
fn full_pipeline_writes_documented_outputs() {
    let dir = TempDir::new().unwrap();
    pipeline(dir.path());
    let data = dir.path().join("data");
    let run = dir.path().join("run");

    for f in ["dataset.sfds", "dataset.json", "background.pgm", "gen-data.cfg"] {
        assert!(data.join(f).is_file(), "missing {f}");
    }
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("dataset.json")).unwrap()).unwrap();
    assert_eq!(sidecar["n_units"], 40);
    assert_eq!(sidecar["seed"], 5);
    assert_eq!(sidecar["action_classes"].as_array().unwrap().len(), 9);
    assert_eq!(sidecar["env_config_hash"].as_str().unwrap().len(), 16);

    let cks: Vec<_> = fs::read_dir(run.join("checkpoints")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(cks.len(), 4);
    assert!(run.join("checkpoints/ckpt-000005.sfck").is_file());
    for f in ["final.sfck", "test.sfds", "train.cfg", "dataset.json", "background.pgm"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }

    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step,mean_loss,checkpoint_id");
    assert_eq!(lines.len(), 21);
    assert!(lines[5].starts_with("5,") && lines[5].ends_with(",1"));
    assert!(lines[4].ends_with(','));

    let curve = fs::read_to_string(run.join("learning_curve.csv")).unwrap();
    let rows: Vec<&str> = curve.lines().collect();
    assert_eq!(rows[0], "checkpoint_id,step,precision");
    assert_eq!(rows.len(), 5);
    assert!(rows[4].starts_with("4,20,"));

    let report = fs::read_to_string(run.join("precision_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 5);
    // 40 units at 0.9 train fraction leave 4 test units
    assert!(report.lines().nth(1).unwrap().starts_with("1,5,4,"));

    let summary = fs::read_to_string(run.join("eval_summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "4");
    assert_eq!(row[1], "4");
    assert_eq!(row[5], "20");
    assert!(run.join("eval.cfg").is_file());
}

#[test]
fn resolved_config_snapshot_reloads() {
    let dir = TempDir::new().unwrap();
    pipeline(dir.path());
    let snap = dir.path().join("run/train.cfg");
    let text = fs::read_to_string(&snap).unwrap();
    assert!(text.contains("steps = 20"));
    assert!(text.contains("train_seed = 1"));
    // the snapshot is itself a valid config
    let out = dir.path().join("again");
    ok(&[
        "gen-data",
        "--config",
        p(&snap),
        "--n-units",
        "3",
        "--out",
        p(&out),
    ]);
}

#[test]
fn rollout_writes_trace_summary_and_frames() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("roll");
    let stdout = ok(&[
        "rollout", "--oracle", "--steps", "10", "--drift", "0.0002", "--seed", "3", "--dump-every", "5", "--out",
        p(&out),
    ]);
    assert!(stdout.contains("in-band fraction"));
    let trace = fs::read_to_string(out.join("rollout_trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "step,phase,action,contact_rate,in_band");
    // 50 warm-up plus 10 measured steps
    assert_eq!(trace.lines().count(), 61);
    let summary = fs::read_to_string(out.join("rollout_summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().starts_with("10,50,0.0002,"));
    let frames = fs::read_dir(out.join("frames")).unwrap().count();
    assert_eq!(frames, 12);
    assert!(out.join("frames/frame-00060.pgm").is_file());
}

#[test]
fn rollout_drives_with_a_checkpoint() {
    let dir = TempDir::new().unwrap();
    pipeline(dir.path());
    let out = dir.path().join("roll");
    ok(&[
        "rollout",
        "--checkpoint",
        p(&dir.path().join("run/final.sfck")),
        "--steps",
        "5",
        "--out",
        p(&out),
    ]);
    let cfg = fs::read_to_string(out.join("rollout.cfg")).unwrap();
    assert!(cfg.starts_with("# policy: greedy"));
}

#[test]
fn inspect_reports_histograms() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--seed", "2", "--n-units", "30", "--out", p(&data)]);
    let out = ok(&["inspect", "--dataset", p(&data.join("dataset.sfds"))]);
    assert!(out.contains("units: 30"));
    assert!(out.contains("reward rate:"));
    assert!(out.contains("ContactRate histogram (31 frames)"));
    assert!(out.contains("max ContactRate:"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = sfdqn(&["gen-data", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = sfdqn(&["gen-data", "--n-units", "10", "--drift", "inf", "--out", p(&dir.path().join("y"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn format_errors_exit_with_code_3() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--seed", "1", "--n-units", "5", "--out", p(&data)]);
    let ds = data.join("dataset.sfds");
    let mut bytes = fs::read(&ds).unwrap();
    bytes[0] = b'X';
    fs::write(&ds, &bytes).unwrap();
    let out = sfdqn(&["inspect", "--dataset", p(&ds)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte 0"));

    let ck = dir.path().join("broken.sfck");
    fs::write(&ck, b"SFDQN-CK\0 truncated").unwrap();
    let out = sfdqn(&["rollout", "--checkpoint", p(&ck), "--steps", "1", "--out", p(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn numeric_faults_exit_with_code_4() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, SMALL_TRAIN).unwrap();
    ok(&["gen-data", "--seed", "4", "--n-units", "40", "--out", p(&data)]);
    let out = sfdqn(&[
        "train",
        "--dataset",
        p(&data.join("dataset.sfds")),
        "--config",
        p(&cfg),
        "--lr",
        "1e6",
        "--out",
        p(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("training aborted"));
}
