use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mpo_xrf::cube::SpectralImage;
use mpo_xrf::events::CalibrationMap;

fn mpoxrf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpoxrf"))
        .args(args)
        .output()
        .unwrap()
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn zero_photons_writes_an_empty_cube() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "empty.sic");
    let run = mpoxrf(&[
        "simulate",
        "--config",
        &config("reference_25mm.toml"),
        "--photons",
        "0",
        "--out",
        &out,
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let cube = SpectralImage::load(&out).unwrap();
    assert_eq!(cube.total(), 0);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(mpoxrf(&["simulate"]).status.code(), Some(2));
    assert_eq!(mpoxrf(&["no-such-command"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = mpoxrf(&[
        "window",
        "--cube",
        &path(dir.path(), "x.sic"),
        "--window",
        "9:6",
        "--out-dir",
        &path(dir.path(), "w"),
    ]);
    assert_eq!(bad.status.code(), Some(2), "{}", stderr(&bad));
}

#[test]
fn bad_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "bad.toml");
    std::fs::write(&cfg, "[scene]\nls_mm = 25.0\nbogus = 1\n").unwrap();
    let run = mpoxrf(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        &path(dir.path(), "o.sic"),
    ]);
    assert_eq!(run.status.code(), Some(3), "{}", stderr(&run));
}

#[test]
fn unreadable_input_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let junk = path(dir.path(), "junk.sic");
    std::fs::write(&junk, b"not a cube").unwrap();
    let run = mpoxrf(&["psf", "--image", &junk]);
    assert_eq!(run.status.code(), Some(4), "{}", stderr(&run));
}

#[test]
fn empty_psf_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let cube = path(dir.path(), "empty.sic");
    let sim = mpoxrf(&[
        "simulate",
        "--config",
        &config("reference_25mm.toml"),
        "--photons",
        "0",
        "--out",
        &cube,
    ]);
    assert!(sim.status.success());
    let run = mpoxrf(&["psf", "--image", &cube]);
    assert_eq!(run.status.code(), Some(5), "{}", stderr(&run));
}

#[test]
fn calibration_round_trip_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let mut events = Vec::new();
    for (label, energy, seed) in [
        ("Ti", "4.51", "1"),
        ("Cu", "8.05", "2"),
        ("Zr", "15.78", "3"),
    ] {
        let out = path(dir.path(), &format!("{label}.tpxe"));
        let mut args = vec![
            "synth-events",
            "--line",
            energy,
            "--size",
            "8",
            "--per-pixel",
            "500",
            "--gain-min",
            "0.05",
            "--gain-max",
            "0.05",
            "--seed",
            seed,
            "--out",
            &out,
        ];
        let truth = path(dir.path(), "truth.csv");
        if label == "Ti" {
            args.extend(["--truth-out", &truth]);
        }
        let run = mpoxrf(&args);
        assert!(run.status.success(), "{}", stderr(&run));
        events.push(format!("{label}={out}"));
    }
    let cal = path(dir.path(), "cal.csv");
    let mut args = vec![
        "calibrate",
        "--lines",
        "Ti=4.51,Cu=8.05,Zr=15.78",
        "--out",
        &cal,
    ];
    for e in &events {
        args.extend(["--events", e]);
    }
    let run = mpoxrf(&args);
    assert!(run.status.success(), "{}", stderr(&run));
    let map = CalibrationMap::load(&cal).unwrap();
    assert_eq!(map.dead_count(), 0);
    let mean = map.gain.iter().sum::<f64>() / map.gain.len() as f64;
    assert!((mean - 0.05).abs() < 0.0005, "mean gain {mean}");
    assert!(map.gain.iter().all(|g| (g - 0.05).abs() < 0.005));

    let cube = path(dir.path(), "cal.sic");
    let run = mpoxrf(&[
        "apply-cal",
        "--events",
        events[1].split_once('=').unwrap().1,
        "--cal",
        &cal,
        "--out",
        &cube,
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert_eq!(
        SpectralImage::load(&cube).unwrap().meta.photons,
        8 * 8 * 500
    );
}

#[test]
fn calibrate_rejects_a_missing_line() {
    let dir = tempfile::tempdir().unwrap();
    let ti = path(dir.path(), "ti.tpxe");
    let run = mpoxrf(&[
        "synth-events",
        "--line",
        "4.51",
        "--size",
        "4",
        "--per-pixel",
        "50",
        "--out",
        &ti,
    ]);
    assert!(run.status.success());
    let run = mpoxrf(&[
        "calibrate",
        "--lines",
        "Ti=4.51,Cu=8.05",
        "--events",
        &format!("Ti={ti}"),
        "--out",
        &path(dir.path(), "cal.csv"),
    ]);
    assert_eq!(run.status.code(), Some(2), "{}", stderr(&run));
    assert!(stderr(&run).contains("Cu"));
}
