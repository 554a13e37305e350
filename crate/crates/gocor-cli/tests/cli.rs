//! End-to-end smoke tests of the command-line surface.

use std::path::Path;
use std::process::Command;

use gocor_cli::formats::{read_cvol, write_cvol, write_fmap, Dtype};
use gocor::{CorrespondenceVolume, VolumeKind};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gocor"))
}

fn write_scene_pair(dir: &Path, seed: u64) -> (std::path::PathBuf, std::path::PathBuf) {
    let scene = gocor::synthbench::make_repetitive_scene(12, 12, 5, 2, (1, 1), 0.05, seed).unwrap();
    let r = dir.join("ref.fmap");
    let q = dir.join("query.fmap");
    write_fmap(&r, &scene.f_r, Dtype::F64).unwrap();
    write_fmap(&q, &scene.f_q, Dtype::F64).unwrap();
    (r, q)
}

#[test]
fn solve_writes_volume_and_finite_positive_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (r, q) = write_scene_pair(dir.path(), 5);
    let vol_path = dir.path().join("out.cvol");
    let output = binary()
        .arg("solve")
        .arg(&r)
        .arg(&q)
        .arg("--out")
        .arg(&vol_path)
        .output()
        .unwrap();
    assert!(output.status.success());
    let report = String::from_utf8(output.stdout).unwrap();
    assert!(report.contains("command: solve"));
    let losses: Vec<f64> = report
        .lines()
        .filter(|l| l.contains(".loss: "))
        .map(|l| l.split(": ").nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 4, "3 iterations plus the final loss");
    assert!(losses.iter().all(|&l| l.is_finite() && l > 0.0));

    let vol = read_cvol(&vol_path).unwrap();
    assert_eq!(vol.kind(), VolumeKind::Global);
    assert_eq!((vol.height(), vol.width()), (12, 12));
}

#[test]
fn solve_zero_iterations_matches_normalized_plain_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let (r, q) = write_scene_pair(dir.path(), 6);
    let vol_path = dir.path().join("out.cvol");
    let output = binary()
        .arg("solve")
        .arg(&r)
        .arg(&q)
        .arg("--out")
        .arg(&vol_path)
        .args(["--set", "num_iter=0", "--set", "initializer=simple"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let vol = read_cvol(&vol_path).unwrap();

    let f_r = gocor_cli::formats::read_fmap(&r).unwrap();
    let f_q = gocor_cli::formats::read_fmap(&q).unwrap();
    let init = gocor::init_filter_map(&f_r, &gocor::InitializerConfig::simple()).unwrap();
    let plain = gocor::correlate(&init.w, &f_q, VolumeKind::Global).unwrap();
    assert_eq!(vol.data(), plain.data());
}

#[test]
fn solve_local_mode_uses_local_volume() {
    let dir = tempfile::tempdir().unwrap();
    let (r, q) = write_scene_pair(dir.path(), 7);
    let vol_path = dir.path().join("out.cvol");
    let output = binary()
        .arg("solve")
        .arg(&r)
        .arg(&q)
        .arg("--out")
        .arg(&vol_path)
        .args(["--set", "mode=local", "--set", "radius=3"])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let vol = read_cvol(&vol_path).unwrap();
    assert_eq!(vol.kind(), VolumeKind::Local { radius: 3 });
}

#[test]
fn solve_rejects_malformed_input_with_offset() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.fmap");
    std::fs::write(&bad, b"JUNKDATA").unwrap();
    let output = binary()
        .arg("solve")
        .arg(&bad)
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("x.cvol"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("byte offset"), "{err}");
}

#[test]
fn bench_reports_one_margin_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let output = binary()
        .args(["bench", "--set", "seeds=2", "--set", "scene_h=16", "--set", "scene_w=16"])
        .args(["--set", "scene_d=8", "--set", "num_iter=2"])
        .arg("--out")
        .arg(&report_path)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let per_seed = report["per_seed"].as_array().unwrap();
    assert_eq!(per_seed.len(), 2);
    for seed in per_seed {
        assert_eq!(seed["margins"].as_array().unwrap().len(), 3);
        assert!(seed.get("elapsed_ms").is_none(), "timings leak by default");
    }
    assert_eq!(
        report["summary"]["mean_margin_by_iteration"]
            .as_array()
            .unwrap()
            .len(),
        3
    );
}

#[test]
fn bench_noise_free_iteration_zero_margin_is_zero() {
    let output = binary()
        .args(["bench", "--set", "seeds=2", "--set", "noise_std=0"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&output.stdout).unwrap();
    for seed in report["per_seed"].as_array().unwrap() {
        let m0 = seed["margins"][0].as_f64().unwrap();
        assert!(m0.abs() <= 1e-6, "iteration-0 margin {m0} on noise-free scene");
    }
}

#[test]
fn export_heatmap_one_hot_and_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let vol_path = dir.path().join("v.cvol");
    let mut vol = CorrespondenceVolume::zeros(3, 3, VolumeKind::Global);
    // One-hot inside the probe slice (1,1).
    let slice_len = 9;
    vol.data_mut()[(1 * 3 + 1) * slice_len + 4] = 2.5;
    write_cvol(&vol_path, &vol, Dtype::F64).unwrap();

    let pgm = dir.path().join("hm.pgm");
    let csv = dir.path().join("hm.csv");
    let output = binary()
        .arg("export-heatmap")
        .arg(&vol_path)
        .args(["--probe", "1", "1"])
        .arg("--out")
        .arg(&pgm)
        .arg("--csv")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(output.status.success());
    let bytes = std::fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n3 3\n255\n"));
    let pixels = &bytes[b"P5\n3 3\n255\n".len()..];
    assert_eq!(pixels.iter().filter(|&&p| p == 255).count(), 1);
    assert_eq!(pixels.iter().filter(|&&p| p == 0).count(), 8);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);

    // Degenerate (constant) slice renders all black: probe (0,0) is all zeros.
    let output = binary()
        .arg("export-heatmap")
        .arg(&vol_path)
        .args(["--probe", "0", "0"])
        .arg("--out")
        .arg(&pgm)
        .output()
        .unwrap();
    assert!(output.status.success());
    let bytes = std::fs::read(&pgm).unwrap();
    assert!(bytes[b"P5\n3 3\n255\n".len()..].iter().all(|&p| p == 0));

    // Out-of-bounds probe fails.
    let output = binary()
        .arg("export-heatmap")
        .arg(&vol_path)
        .args(["--probe", "9", "9"])
        .arg("--out")
        .arg(&pgm)
        .output()
        .unwrap();
    assert!(!output.status.success());
}

#[test]
fn export_heatmap_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (r, q) = write_scene_pair(dir.path(), 8);
    let vol_path = dir.path().join("v.cvol");
    assert!(binary()
        .args(["--serial", "solve"])
        .arg(&r)
        .arg(&q)
        .arg("--out")
        .arg(&vol_path)
        .output()
        .unwrap()
        .status
        .success());
    let mut images = Vec::new();
    for run in 0..2 {
        let pgm = dir.path().join(format!("{run}.pgm"));
        assert!(binary()
            .arg("export-heatmap")
            .arg(&vol_path)
            .args(["--probe", "2", "3"])
            .arg("--out")
            .arg(&pgm)
            .output()
            .unwrap()
            .status
            .success());
        images.push(std::fs::read(&pgm).unwrap());
    }
    assert_eq!(images[0], images[1]);
}

#[test]
fn oracle_subcommand_passes_with_exit_zero() {
    let output = binary().args(["oracle", "--set", "seeds=5"]).output().unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("result: pass"));
}

#[test]
fn gradcheck_warns_on_eta_zero_and_respects_corruption_hook() {
    let output = binary().arg("gradcheck").output().unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("eta=0"));
    assert!(!String::from_utf8_lossy(&output.stderr).contains("eta=0.1"));

    let output = binary()
        .args(["gradcheck", "--corrupt-gradient"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stdout).contains("result: fail"));

    // With smoothing the warning disappears.
    let output = binary()
        .args(["gradcheck", "--set", "eta=0.1"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(!String::from_utf8_lossy(&output.stderr).contains("warning"));
}

#[test]
fn unknown_config_key_is_an_error() {
    let output = binary()
        .args(["bench", "--set", "typo_key=3"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown config key"));
}
