//! Acceptance criterion 10: two serial runs of `solve` and `bench` with the
//! same configuration produce byte-identical outputs.

use std::path::Path;
use std::process::Command;

use gocor_cli::formats::{write_fmap, Dtype};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gocor"))
}

fn criterion(number: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance criterion {number} ({name}): {}{}",
        if pass { "PASS" } else { "FAIL" },
        if detail.is_empty() {
            String::new()
        } else {
            format!(" [{detail}]")
        }
    );
    assert!(pass, "criterion {number} ({name}) failed: {detail}");
}

fn write_scene_pair(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let scene = gocor::synthbench::make_repetitive_scene(12, 12, 6, 2, (1, 1), 0.05, 3).unwrap();
    let r = dir.join("ref.fmap");
    let q = dir.join("query.fmap");
    write_fmap(&r, &scene.f_r, Dtype::F64).unwrap();
    write_fmap(&q, &scene.f_q, Dtype::F64).unwrap();
    (r, q)
}

#[test]
fn criterion_10_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (r, q) = write_scene_pair(dir.path());

    let mut solve_outputs = Vec::new();
    for run in 0..2 {
        let vol = dir.path().join(format!("run{run}.cvol"));
        let trace = dir.path().join(format!("run{run}.trace"));
        let output = binary()
            .args(["--serial", "solve"])
            .arg(&r)
            .arg(&q)
            .arg("--out")
            .arg(&vol)
            .arg("--trace")
            .arg(&trace)
            .args(["--set", "num_iter=3"])
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "solve failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        solve_outputs.push((
            std::fs::read(&vol).unwrap(),
            std::fs::read(&trace).unwrap(),
            output.stdout,
        ));
    }
    let solve_identical = solve_outputs[0] == solve_outputs[1];

    let mut bench_outputs = Vec::new();
    for run in 0..2 {
        let report = dir.path().join(format!("bench{run}.json"));
        let output = binary()
            .args(["--serial", "bench", "--set", "seeds=3", "--set", "scene_h=16"])
            .args(["--set", "scene_w=16", "--set", "scene_d=8"])
            .arg("--out")
            .arg(&report)
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "bench failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        bench_outputs.push((std::fs::read(&report).unwrap(), output.stdout));
    }
    let bench_identical = bench_outputs[0] == bench_outputs[1];

    criterion(
        10,
        "CLI determinism",
        solve_identical && bench_identical,
        &format!("solve byte-identical: {solve_identical}, bench byte-identical: {bench_identical}"),
    );
}
