use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use depthvision_core::io::{write_png, RawGrid};
use depthvision_core::ImageRgb;

const BIN: &str = env!("CARGO_BIN_EXE_depthvision");

fn dv(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = dv(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("error line");
    serde_json::from_str(line).expect("error line is JSON")
}

/// Small dataset and a few-step model shared by the tests of one directory.
fn setup(dir: &Path) {
    ok(dir, &["--seed", "5", "simulate", "--out", "ds", "--scenes", "3", "--width", "40", "--height", "32"]);
    ok(
        dir,
        &["--seed", "5", "train", "--dataset", "ds", "--steps", "3", "--batch-size", "2", "--resolution", "32", "--out", "tr"],
    );
}

fn grid(path: PathBuf) -> RawGrid {
    RawGrid::read(&path).unwrap()
}

#[test]
fn runs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    ok(d, &["--seed", "5", "simulate", "--out", "ds2", "--scenes", "3", "--width", "40", "--height", "32"]);
    ok(
        d,
        &["--seed", "5", "train", "--dataset", "ds2", "--steps", "3", "--batch-size", "2", "--resolution", "32", "--out", "tr2"],
    );
    let record = |p: &str| -> serde_json::Value { serde_json::from_slice(&fs::read(d.join(p)).unwrap()).unwrap() };
    let (a, b) = (record("ds/run.json"), record("ds2/run.json"));
    assert_eq!(a["outputs"], b["outputs"]);
    assert_eq!(a["config_hash"], b["config_hash"]);
    assert_eq!(fs::read(d.join("tr/weights.dvnn")).unwrap(), fs::read(d.join("tr2/weights.dvnn")).unwrap());
    assert_eq!(fs::read(d.join("tr/losses.jsonl")).unwrap(), fs::read(d.join("tr2/losses.jsonl")).unwrap());
    let t = record("tr/run.json");
    assert_eq!(t["command"], "train");
    assert_eq!(t["seed"], 5);
    assert_eq!(t["args"][2], "train");
    assert!(t["outputs"]["weights.dvnn"].as_str().is_some_and(|h| h.len() == 64));
    assert!(!fs::read_to_string(d.join("tr/run.json")).unwrap().contains("timestamp"));
}

#[test]
fn pipeline_equals_stage_composition() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    let scene = "ds/scene_0001";
    ok(d, &["pipeline", "--scene", scene, "--weights", "tr/weights.dvnn", "--crop", "32", "--out", "p"]);
    ok(
        d,
        &["project", "--cloud", &format!("{scene}/cloud.bin"), "--calib", &format!("{scene}/calib.json"), "--crop", "32", "--out", "s1"],
    );
    ok(d, &["densify", "--depth", "s1/depth.dvim", "--out", "s2"]);
    ok(d, &["synth", "--weights", "tr/weights.dvnn", "--depth", "s1/depth.dvim", "--out", "s3"]);
    ok(
        d,
        &[
            "fuse", "--rgb", &format!("{scene}/rgb.png"), "--gan", "s3/synth.dvim",
            "--calib", &format!("{scene}/calib.json"), "--out", "s4",
        ],
    );
    for (a, b) in [
        ("p/depth.dvim", "s1/depth.dvim"),
        ("p/synth.dvim", "s3/synth.dvim"),
        ("p/synth.png", "s3/synth.png"),
        ("p/fused.dvim", "s4/fused.dvim"),
        ("p/fused.png", "s4/fused.png"),
        ("p/alpha.json", "s4/alpha.json"),
    ] {
        assert_eq!(fs::read(d.join(a)).unwrap(), fs::read(d.join(b)).unwrap(), "{a} vs {b}");
    }
    let depth = grid(d.join("s1/depth.dvim"));
    let dense = grid(d.join("s2/dense.dvim"));
    assert_eq!((dense.width, dense.height), (32, 32));
    assert!(dense.data.iter().all(|v| v.is_finite()));
    // densification keeps every measured pixel
    for (s, f) in depth.data.iter().zip(&dense.data) {
        if s.is_finite() {
            assert_eq!(s, f);
        }
    }
}

#[test]
fn dark_camera_gives_synthesized_image() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    let gan = ImageRgb::from_fn(8, 6, |u, v| [u as f64 / 8.0, v as f64 / 6.0, 0.5]).unwrap();
    RawGrid::from(&gan).write(&d.join("gan.dvim")).unwrap();
    write_png(&d.join("black.png"), &ImageRgb::filled(8, 6, [0.0; 3]).unwrap()).unwrap();
    for mode in ["full", "pixelwise"] {
        ok(d, &["fuse", "--rgb", "black.png", "--gan", "gan.dvim", "--mode", mode, "--out", mode]);
        assert_eq!(grid(d.join(mode).join("fused.dvim")).data, gan.data(), "{mode}");
    }
    write_png(&d.join("night.png"), &ImageRgb::filled(40, 32, [0.0; 3]).unwrap()).unwrap();
    ok(
        d,
        &["pipeline", "--scene", "ds/scene_0000", "--rgb", "night.png", "--weights", "tr/weights.dvnn", "--crop", "32", "--mode", "full", "--out", "p"],
    );
    assert_eq!(fs::read(d.join("p/fused.dvim")).unwrap(), fs::read(d.join("p/synth.dvim")).unwrap());
}

#[test]
fn pixelwise_half_dark_card() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let gan = ImageRgb::filled(8, 4, [0.25, 0.5, 0.75]).unwrap();
    RawGrid::from(&gan).write(&d.join("gan.dvim")).unwrap();
    let card = ImageRgb::from_fn(8, 4, |u, _| if u < 4 { [0.0; 3] } else { [1.0; 3] }).unwrap();
    write_png(&d.join("card.png"), &card).unwrap();
    ok(d, &["fuse", "--rgb", "card.png", "--gan", "gan.dvim", "--mode", "pixelwise", "--out", "f"]);
    let fused = grid(d.join("f/fused.dvim")).into_rgb().unwrap();
    for v in 0..4 {
        for u in 0..8 {
            let want = if u < 4 { gan.pixel(u, v) } else { card.pixel(u, v) };
            assert_eq!(fused.pixel(u, v), want, "({u}, {v})");
        }
    }
    let alpha: serde_json::Value = serde_json::from_slice(&fs::read(d.join("f/alpha.json")).unwrap()).unwrap();
    assert_eq!(alpha["alpha"]["mean"], 0.5);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);

    fs::write(d.join("bad.json"), r#"{"lama": {"l_low": 0.5}}"#).unwrap();
    let out = dv(d, &["--config", "bad.json", "fuse", "--rgb", "x.png", "--gan", "y.dvim", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["error"]["kind"], "config");
    assert!(e["error"]["message"].as_str().unwrap().contains("lama.l_high"));

    let out = dv(d, &["synth", "--weights", "missing.dvnn", "--depth", "x.dvim", "--out", "o"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"]["kind"], "io");

    fs::write(d.join("hot.json"), r#"{"train": {"lr": 1e150}}"#).unwrap();
    let out = dv(
        d,
        &["--config", "hot.json", "train", "--dataset", "ds", "--steps", "5", "--batch-size", "2", "--resolution", "32", "--out", "hot"],
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(error_line(&out)["error"]["message"].as_str().unwrap().contains("step"));

    // nothing listens on the port of a dropped listener
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/v1");
    let out = dv(d, &["evaluate", "--manifest", "ds/manifest.json", "--mode", "camera", "--endpoint", &url, "--out", "ev"]);
    assert_eq!(out.status.code(), Some(5));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("ev/report.json")).unwrap()).unwrap();
    assert_eq!(report["all"]["acc"], 0.0);

    let out = dv(d, &["evaluate", "--manifest", "ds", "--mode", "full", "--out", "ev2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_with_mock_writes_report_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    ok(d, &["evaluate", "--manifest", "ds", "--mode", "full", "--weights", "tr/weights.dvnn", "--endpoint", "mock:luminance", "--out", "ev"]);
    ok(
        d,
        &[
            "evaluate", "--manifest", "ds", "--mode", "full", "--weights", "tr/weights.dvnn",
            "--endpoint", "replay:ev/transcript.jsonl", "--out", "ev2",
        ],
    );
    assert_eq!(fs::read(d.join("ev/report.json")).unwrap(), fs::read(d.join("ev2/report.json")).unwrap());
    assert!(fs::read_to_string(d.join("ev/report.txt")).unwrap().contains("Night"));
}
