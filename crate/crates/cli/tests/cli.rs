use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use knoll::geom::{validate_scenario, Workspace};
use knoll::laygen::{decode_record, read_dataset};

fn knoll(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_knoll"))
        .args(args)
        .env_remove("KNOLL_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = knoll(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small dataset and a briefly trained model shared by the tests.
fn fixture() -> &'static (tempfile::TempDir, PathBuf, PathBuf) {
    static FIXTURE: OnceLock<(tempfile::TempDir, PathBuf, PathBuf)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data.jsonl");
        let model = dir.path().join("model.bin");
        ok(&["gen", "--count", "200", "--iters", "500", "--seed", "3", "--out", s(&data)]);
        ok(&[
            "train", "--data", s(&data), "--out", s(&model), "--kind", "transformer", "--epochs", "1", "--batch-size", "16",
        ]);
        (dir, data, model)
    })
}

const SCENE: &str = "\
# w l x y yaw
0.040 0.030 0.05 0.22 0.3
0.020 0.020 0.20 0.06 -0.8
0.045 0.012 0.12 0.15 1.2
0.015 0.035 0.24 0.24 0.0
0.030 0.030 0.07 0.07 2.0
0.011 0.018 0.17 0.25 0.5
0.050 0.021 0.25 0.14 -0.2
0.026 0.044 0.14 0.04 0.9
";

#[test]
fn gen_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| dir.path().join(n)).collect();
    for (p, seed) in paths.iter().zip(["7", "7", "8"]) {
        ok(&["gen", "--count", "20", "--seed", seed, "--iters", "300", "--out", s(p)]);
    }
    let read = |p: &PathBuf| fs::read_to_string(p).unwrap();
    assert_eq!(read(&paths[0]), read(&paths[1]));
    assert_ne!(read(&paths[0]), read(&paths[2]));
    let records = read_dataset(read(&paths[0]).as_bytes()).unwrap();
    assert_eq!(records.len(), 20);
    for r in &records {
        assert!((2..=10).contains(&r.len()));
        assert!(validate_scenario(r, &Workspace::default()).is_ok());
    }
}

#[test]
fn gen_respects_count_range_and_gap() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.jsonl");
    ok(&["gen", "--count", "10", "--n-min", "3", "--n-max", "3", "--gap", "0.01", "--iters", "200", "--out", s(&p)]);
    let records = read_dataset(fs::read(&p).unwrap().as_slice()).unwrap();
    assert!(records.iter().all(|r| r.len() == 3));
    let gap = records
        .iter()
        .map(|r| knoll::laygen::min_pairwise_gap(&r.target_layout()))
        .fold(f64::INFINITY, f64::min);
    assert!(gap >= 0.01 - 1e-9, "{gap}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&knoll(&[])), 2);
    for args in [&["frobnicate"][..], &["gen", "--count", "3", "--bogus", "--out", "x"]] {
        let out = knoll(args);
        assert_eq!(code(&out), 2);
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage:"));
    }
    assert_eq!(code(&knoll(&["gen", "--count", "many", "--out", "x"])), 2);
    assert_eq!(code(&knoll(&["--help"])), 0);
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.jsonl");
    assert_eq!(code(&knoll(&["gen", "--count", "3", "--n-min", "5", "--n-max", "2", "--out", s(&out)])), 2);
    assert_eq!(code(&knoll(&["gen", "--count", "0", "--out", s(&out)])), 2);
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"n\":1}\n").unwrap();
    assert_eq!(code(&knoll(&["render", "--layout", s(&bad), "--out", s(&out)])), 2);
    let threads = Command::new(env!("CARGO_BIN_EXE_knoll"))
        .args(["gen", "--count", "2", "--out", s(&out)])
        .env("KNOLL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&threads), 2);
}

#[test]
fn thread_bound_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen", "--count", "12", "--seed", "2", "--iters", "300", "--out", s(&a)]);
    let one = Command::new(env!("CARGO_BIN_EXE_knoll"))
        .args(["gen", "--count", "12", "--seed", "2", "--iters", "300", "--out", s(&b)])
        .env("KNOLL_THREADS", "1")
        .output()
        .unwrap();
    assert!(one.status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn train_writes_model_and_log() {
    let (dir, _, model) = fixture();
    assert!(model.exists());
    let log = fs::read_to_string(dir.path().join("model.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,train_nll,val_nll,lr,wall_seconds"));
    assert_eq!(lines.count(), 1);
}

#[test]
fn eval_prints_table_and_csv() {
    let (dir, data, model) = fixture();
    let csv = dir.path().join("report.csv");
    let out = ok(&["eval", "--model", s(model), "--per-n", "4", "--seed", "1", "--csv", s(&csv)]);
    let table = String::from_utf8(out.stdout).unwrap();
    let header = table.lines().next().unwrap();
    for n in ["n=2", "n=4", "n=6", "n=8", "n=10"] {
        assert!(header.split_whitespace().any(|c| c == n), "{table}");
    }
    assert!(table.contains("MEAN"));
    let body = fs::read_to_string(&csv).unwrap();
    assert_eq!(body.lines().count(), 6);
    let again = ok(&["eval", "--model", s(model), "--per-n", "4", "--seed", "1"]);
    assert_eq!(table, String::from_utf8(again.stdout).unwrap());
    ok(&["eval", "--model", s(model), "--data", s(data)]);
}

#[test]
fn knoll_emits_valid_targets_plan_and_drawings() {
    let (dir, _, model) = fixture();
    let scene = dir.path().join("scene.txt");
    fs::write(&scene, SCENE).unwrap();
    let out_dir = dir.path().join("run");
    ok(&["knoll", "--scene", s(&scene), "--model", s(model), "--out-dir", s(&out_dir)]);
    let record = decode_record(fs::read_to_string(out_dir.join("targets.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(record.len(), 8);
    assert!(validate_scenario(&record, &Workspace::default()).is_ok());
    let plan = knoll::plan::plan_from_text::<f64>(&fs::read_to_string(out_dir.join("plan.txt")).unwrap()).unwrap();
    assert!(!plan.is_empty() && plan.len() <= 3 * 8);
    for name in ["before.svg", "after.svg"] {
        let svg = fs::read_to_string(out_dir.join(name)).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains(">7</text>"));
    }

    // already tidy: nothing to do
    let again = dir.path().join("again");
    let out = ok(&[
        "knoll", "--scene", s(&out_dir.join("after.scene")), "--model", s(model), "--out-dir", s(&again),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("0 actions"));
    assert_eq!(fs::read_to_string(again.join("plan.txt")).unwrap(), "");
}

#[test]
fn knoll_order_permutes_slot_occupants() {
    let (dir, _, model) = fixture();
    let scene = dir.path().join("scene_order.txt");
    fs::write(&scene, SCENE).unwrap();
    let mut slots = Vec::new();
    for order in ["area-desc", "area-asc"] {
        let out_dir = dir.path().join(order);
        ok(&["knoll", "--scene", s(&scene), "--model", s(model), "--order", order, "--out-dir", s(&out_dir)]);
        let record = decode_record(fs::read_to_string(out_dir.join("targets.jsonl")).unwrap().trim()).unwrap();
        assert!(validate_scenario(&record, &Workspace::default()).is_ok());
        slots.push(fs::read_to_string(out_dir.join("slots.txt")).unwrap());
    }
    assert_ne!(slots[0], slots[1]);
    assert_eq!(code(&knoll(&["knoll", "--scene", s(&scene), "--model", s(model), "--order", "color", "--out-dir", "x"])), 2);
}

#[test]
fn knoll_is_reproducible_with_sampling() {
    let (dir, _, model) = fixture();
    let scene = dir.path().join("scene_t.txt");
    fs::write(&scene, SCENE).unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        ok(&[
            "knoll", "--scene", s(&scene), "--model", s(model), "--temperature", "0.5", "--seed", "9", "--out-dir", s(&out_dir),
        ]);
        fs::read_to_string(out_dir.join("targets.jsonl")).unwrap()
    };
    assert_eq!(run("t1"), run("t2"));
}

#[test]
fn knoll_reads_keypoint_scenes() {
    let (dir, _, model) = fixture();
    let scene = dir.path().join("kp.txt");
    fs::write(&scene, "0.02 0.02 0.06 0.02 0.06 0.04 0.02 0.04\n0.10,0.10 0.13,0.10 0.13,0.15 0.10,0.15\n").unwrap();
    let out_dir = dir.path().join("kp");
    ok(&["knoll", "--scene", s(&scene), "--model", s(model), "--out-dir", s(&out_dir)]);
    let record = decode_record(fs::read_to_string(out_dir.join("targets.jsonl")).unwrap().trim()).unwrap();
    let o = record.objects[1];
    assert!((o.width - 0.05).abs() < 1e-12 && (o.length - 0.03).abs() < 1e-12, "{o:?}");
    assert!(validate_scenario(&record, &Workspace::default()).is_ok());
}

#[test]
fn knoll_rejects_bad_scenes() {
    let (dir, _, model) = fixture();
    let scene = dir.path().join("bad_scene.txt");
    fs::write(&scene, "0.02 0.02 0.1 0.1 0\n0 0 1 0 1 1 0 1\n").unwrap();
    let out = knoll(&["knoll", "--scene", s(&scene), "--model", s(model), "--out-dir", s(&dir.path().join("bad"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn render_draws_a_dataset_line() {
    let (dir, data, _) = fixture();
    let svg = dir.path().join("line3.svg");
    ok(&["render", "--layout", s(data), "--line", "3", "--out", s(&svg)]);
    let n = read_dataset(fs::read(data).unwrap().as_slice()).unwrap()[2].len();
    let body = fs::read_to_string(&svg).unwrap();
    assert_eq!(body.matches("</text>").count(), n);
    assert_eq!(code(&knoll(&["render", "--layout", s(data), "--line", "100000", "--out", s(&svg)])), 2);
}
