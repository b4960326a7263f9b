use std::fs;
use std::path::Path;
use std::process::Command;

use dynslam::simulator::library;

fn short_scenario(dir: &Path) -> String {
    let mut c = library::config("S-MASO").unwrap();
    c.duration = Some(25.0);
    let path = dir.join("short.toml");
    fs::write(&path, c.to_toml()).unwrap();
    path.to_string_lossy().into_owned()
}

fn dynslam(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dynslam")).args(args).output().unwrap()
}

#[test]
fn run_writes_outputs_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = short_scenario(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = dynslam(&["run", "--scenario", &scen, "--setup", "full", "--seed", "4", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "trajectory.txt",
        "groundtruth.txt",
        "metrics.json",
        "metrics.csv",
        "entities.csv",
        "decisions.jsonl",
        "loops.jsonl",
        "optimizations.csv",
        "graph.txt",
    ] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read(a.join("trajectory.txt")).unwrap(), fs::read(b.join("trajectory.txt")).unwrap());
    let traj = fs::read_to_string(a.join("trajectory.txt")).unwrap();
    assert!(traj.lines().all(|l| l.split_whitespace().count() == 8));
    let graph = fs::read_to_string(a.join("graph.txt")).unwrap();
    dynslam::graph::text::read_graph::<f64>(&graph).unwrap();
}

#[test]
fn export_frames_one_line_per_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = short_scenario(tmp.path());
    let out = tmp.path().join("frames.jsonl");
    let o = dynslam(&["export-frames", "--scenario", &scen, "--seed", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().count(), 251);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["index"], 0);
}

#[test]
fn bad_arguments_fail() {
    let o = dynslam(&["run", "--scenario", "S-SASO", "--setup", "intra", "--out", "/nonexistent/x"]);
    assert!(!o.status.success());
    let o = dynslam(&["run", "--scenario", "nowhere.toml", "--out", "/tmp/x"]);
    assert!(!o.status.success());
}
