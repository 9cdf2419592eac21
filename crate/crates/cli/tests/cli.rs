use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use slam_cli::manifest::RunManifest;

fn slam(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slam"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = slam(args, dir);
    assert!(
        out.status.success(),
        "slam {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str], dir: &Path) -> String {
    let out = slam(args, dir);
    assert!(!out.status.success(), "slam {args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn simulate(dir: &Path, k: &str, seed: &str) {
    ok(
        &["simulate", "--k", k, "--n", "400", "--n-patterns", "5", "--seed", seed, "--out-dir", "sim"],
        dir,
    );
}

#[test]
fn simulate_then_pipeline_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "6", "3");
    let stdout = ok(
        &["pipeline", "--q", "sim/q.csv", "--responses", "sim/responses.csv", "--truth", "sim/truth.json", "--out-dir", "run"],
        d,
    );
    assert!(stdout.contains("TPR 1.000, 1-FDR 1.000"), "{stdout}");
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("sim/truth.json")).unwrap()).unwrap();
    let mut a0: Vec<String> = truth["a0"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    a0.sort();
    let selected: Vec<String> = fs::read_to_string(d.join("run/selected.txt")).unwrap().lines().map(String::from).collect();
    assert_eq!(selected, a0);

    let m = RunManifest::read(&d.join("run/manifest.json")).unwrap();
    assert_eq!(m.command, "pipeline");
    assert_eq!(m.stages, vec!["path", "hierarchy", "metrics"]);
    assert_eq!(m.inputs.len(), 3);
    assert_eq!(m.seed, Some(0));
    assert!(m.outputs.iter().all(|o| d.join(o).exists()));
}

#[test]
fn large_k_pipeline_records_screening() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "15", "4");
    ok(
        &["pipeline", "--q", "sim/q.csv", "--responses", "sim/responses.csv", "--out-dir", "run"],
        d,
    );
    let m = RunManifest::read(&d.join("run/manifest.json")).unwrap();
    assert_eq!(m.stages.first().map(String::as_str), Some("screen"));
    assert!(d.join("run/screen.json").exists());
    let n_candidates = fs::read_to_string(d.join("run/candidates.txt")).unwrap().lines().count();
    assert!(n_candidates < 1 << 15);
}

#[test]
fn rerun_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "5", "8");
    fs::write(d.join("run.cfg"), "lambda = -1.4\nq = sim/q.csv\n").unwrap();
    ok(
        &["--config", "run.cfg", "fit", "--responses", "sim/responses.csv", "--out", "fit.json"],
        d,
    );
    let first = fs::read(d.join("fit.json")).unwrap();
    let m = RunManifest::read(&d.join("fit.json.manifest.json")).unwrap();
    assert_eq!(m.config["lambda"], "-1.4");
    fs::remove_file(d.join("fit.json")).unwrap();
    ok(&["rerun", "--manifest", "fit.json.manifest.json"], d);
    assert_eq!(fs::read(d.join("fit.json")).unwrap(), first);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "13", "5");
    for (threads, out) in [("1", "one"), ("3", "three")] {
        ok(
            &["--threads", threads, "pipeline", "--q", "sim/q.csv", "--responses", "sim/responses.csv", "--out-dir", out],
            d,
        );
    }
    for file in ["candidates.txt", "selected.txt", "path.json", "screen.json"] {
        assert_eq!(
            fs::read(d.join("one").join(file)).unwrap(),
            fs::read(d.join("three").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn malformed_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("q.csv"), "1,0\n0,1\n1,1\n").unwrap();
    fs::write(d.join("r.csv"), "1,0,1\n0,1,x\n").unwrap();
    let e = err(&["fit", "--q", "q.csv", "--responses", "r.csv", "--lambda", "-1", "--out", "f.json"], d);
    assert!(e.contains("r.csv:2:") && e.contains("'x'"), "{e}");

    fs::write(d.join("r.csv"), "1,0\n0,1\n").unwrap();
    let e = err(&["fit", "--q", "q.csv", "--responses", "r.csv", "--lambda", "-1", "--out", "f.json"], d);
    assert!(e.contains("3 items") && e.contains("2 columns"), "{e}");

    fs::write(d.join("r.csv"), "1,0,1\n0,1,1\n").unwrap();
    let e = err(&["fit", "--q", "q.csv", "--responses", "r.csv", "--out", "f.json"], d);
    assert!(e.contains("--lambda"), "{e}");

    fs::write(d.join("c.cfg"), "lamda = -1\n").unwrap();
    let e = err(
        &["--config", "c.cfg", "fit", "--q", "q.csv", "--responses", "r.csv", "--lambda", "-1", "--out", "f.json"],
        d,
    );
    assert!(e.contains("lamda"), "{e}");
}

#[test]
fn identifiability_and_hierarchy_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("q.csv"), "1,0\n0,1\n1,0\n0,1\n1,0\n0,1\n").unwrap();
    fs::write(d.join("a.txt"), "00\n10\n11\n").unwrap();
    let report = ok(&["check-id", "--q", "q.csv", "--patterns", "a.txt"], d);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["verdict"], "strict");

    let out = ok(&["hierarchy", "--patterns", "a.txt", "--out", "h.json", "--dot", "h.dot"], d);
    assert!(out.contains("1 prerequisite edges"), "{out}");
    assert!(fs::read_to_string(d.join("h.dot")).unwrap().contains("g0 -> g1"));

    fs::write(d.join("q2.csv"), "0,1\n1,1\n0,1\n1,1\n").unwrap();
    let out = ok(&["equiv", "--q", "q2.csv", "--out", "e.json"], d);
    assert!(out.starts_with("3 equivalence classes"), "{out}");
}
