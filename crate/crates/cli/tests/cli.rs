use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn mstrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mstrack")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_scene(dir: &Path, sources: &str) -> std::path::PathBuf {
    let spec = format!(
        r#"{{
  "duration_s": 3.0,
  "seed": 11,
  "geometry": {{"mic_positions": [[0.05, 0.05, 0.0], [-0.05, 0.05, 0.0], [-0.05, -0.05, 0.0], [0.05, -0.05, 0.0]]}},
  "sources": {sources},
  "noise": {{"snr_db": 20.0}}
}}"#
    );
    let file = dir.join("scene.json");
    std::fs::write(&file, spec).unwrap();
    file
}

const STATIC_SOURCE: &str = r#"[{
    "trajectory": [{"t_s": 0.0, "azimuth_deg": 35.0}],
    "activity": [[0.3, 3.0]],
    "excitation": {"type": "white"}
  }]"#;

fn simulate(dir: &Path, sources: &str) -> std::path::PathBuf {
    let scene = write_scene(dir, sources);
    let sim = dir.join("sim");
    let out = mstrack(&["simulate", "--spec", path(&scene), "--out", path(&sim)]);
    assert!(out.status.success(), "simulate failed: {}", String::from_utf8_lossy(&out.stderr));
    sim
}

fn run(command: &str, sim: &Path, out: &Path) -> Output {
    mstrack(&[
        command,
        "--wav",
        path(&sim.join("mixture.wav")),
        "--geometry",
        path(&sim.join("geometry.json")),
        "--out",
        path(out),
    ])
}

#[test]
fn localize_then_evaluate_a_static_source() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), STATIC_SOURCE);
    let loc = dir.path().join("loc");
    let out = run("localize", &sim, &loc);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["heatmap.csv", "heatmap.pgm", "peaks.jsonl"] {
        assert!(loc.join(file).exists(), "{file} missing");
    }
    let metrics = dir.path().join("metrics.json");
    let out = mstrack(&[
        "evaluate",
        "--truth",
        path(&sim.join("truth.json")),
        "--peaks",
        path(&loc.join("peaks.jsonl")),
        "--out",
        path(&metrics),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(metrics).unwrap()).unwrap();
    let mae = report["mae_deg"].as_f64().expect("some peaks matched");
    assert!(mae <= 5.0, "MAE {mae:.2} deg");
}

#[test]
fn silent_recording_yields_no_tracks() {
    let dir = TempDir::new().unwrap();
    let scene = dir.path().join("silent.json");
    std::fs::write(
        &scene,
        r#"{"duration_s": 2.0, "seed": 1,
            "geometry": {"mic_positions": [[0.05, 0.05, 0.0], [-0.05, 0.05, 0.0], [-0.05, -0.05, 0.0], [0.05, -0.05, 0.0]]}}"#,
    )
    .unwrap();
    let sim = dir.path().join("sim");
    assert!(mstrack(&["simulate", "--spec", path(&scene), "--out", path(&sim)]).status.success());
    let trk = dir.path().join("trk");
    let out = run("track", &sim, &trk);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = std::fs::read_to_string(trk.join("tracks.jsonl")).unwrap();
    let records = lines.lines().filter(|l| !l.trim().is_empty() && !l.contains("\"header\"")).count();
    assert_eq!(records, 0, "unexpected track records:\n{lines}");
}

#[test]
fn invalid_configuration_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), STATIC_SOURCE);
    let out = mstrack(&[
        "localize",
        "--wav",
        path(&sim.join("mixture.wav")),
        "--geometry",
        path(&sim.join("geometry.json")),
        "--out",
        path(&dir.path().join("loc")),
        "--localizer.step",
        "-1",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unreadable_input_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), STATIC_SOURCE);
    let bogus = dir.path().join("not_a.wav");
    std::fs::write(&bogus, b"definitely not RIFF").unwrap();
    let out = mstrack(&[
        "track",
        "--wav",
        path(&bogus),
        "--geometry",
        path(&sim.join("geometry.json")),
        "--out",
        path(&dir.path().join("trk")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn repeated_runs_write_identical_outputs() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), STATIC_SOURCE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("track", &sim, &a).status.success());
    assert!(run("track", &sim, &b).status.success());
    for file in ["tracks.jsonl", "peaks.jsonl", "heatmap.csv"] {
        if a.join(file).exists() {
            assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file} differs");
        }
    }
    assert!(a.join("tracks.jsonl").exists());
}
