//! End-to-end CLI checks: exit codes, output files, manifest digests.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_elastmono")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .join("configs")
        .join(name)
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin()).args(args).output().expect("spawn");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn nd_happy_path_writes_matrix_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = run(&[
        "nd",
        "--config",
        config("smoke.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    let matrix = std::fs::read_to_string(dir.path().join("nd_measured.txt")).unwrap();
    assert!(matrix.starts_with("# ndmatrix v1"));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "nd");
    assert_eq!(manifest["outputs"][0]["path"], "nd_measured.txt");
    // digest in the manifest matches the written file
    use sha2::Digest;
    let digest = hex::encode(sha2::Sha256::digest(matrix.as_bytes()));
    assert_eq!(manifest["outputs"][0]["sha256"], serde_json::json!(digest));
}

#[test]
fn forward_writes_mesh_dump_and_energies() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = run(&[
        "forward",
        "--config",
        config("smoke.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    let dump = std::fs::read_to_string(dir.path().join("mesh.txt")).unwrap();
    assert!(dump.starts_with("# mesh nodes="));
    assert!(dump.contains("edge 0"));
    let csv = std::fs::read_to_string(dir.path().join("forward_energies.csv")).unwrap();
    assert!(csv.starts_with("load,edge,axis,pairing,energy,rel_gap"));
}

#[test]
fn linearized_inner_beta_out_of_range_exits_1_citing_bound() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = run(&[
        "reconstruct-inner",
        "--config",
        config("smoke.json").to_str().unwrap(),
        "--override",
        "test.mode=\"linearized\"",
        "--override",
        "test.beta=1.0",
        "--override",
        "inclusions=[]",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 1, "stderr: {stderr}");
    assert!(
        stderr.contains("beta") && stderr.contains("min(lambda0, mu0)"),
        "message must cite the admissible bound: {stderr}"
    );
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut text = std::fs::read_to_string(config("smoke.json")).unwrap();
    text = text.replacen("\"version\": 1,", "\"version\": 1, \"typo_key\": true,", 1);
    std::fs::write(&bad, text).unwrap();
    let (code, _, stderr) = run(&[
        "nd",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(stderr.contains("typo_key"), "stderr: {stderr}");
}

#[test]
fn missing_output_dir_exits_1() {
    let (code, _, stderr) = run(&["nd", "--config", config("smoke.json").to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(stderr.contains("output"), "stderr: {stderr}");
}

#[test]
fn malformed_override_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = run(&[
        "nd",
        "--config",
        config("smoke.json").to_str().unwrap(),
        "--override",
        "mesh.n:14",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(stderr.contains("key=value"), "stderr: {stderr}");
}

/// Golden files for the shipped mixed phantom, frozen from the first
/// verified run: the mask is the pixel bounding box of the three
/// inclusions (144 of 256 pixels at grid 16).
#[test]
fn reconstruct_outer_mixed_phantom_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = run(&[
        "reconstruct-outer",
        "--config",
        config("mixed_phantom.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");

    let csv = std::fs::read_to_string(dir.path().join("outer_indicators.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 256);
    let indicators = std::fs::read(dir.path().join("outer_indicators.pgm")).unwrap();
    assert!(indicators.starts_with(b"P5\n16 16\n255\n"));

    use sha2::Digest;
    let mask = std::fs::read(dir.path().join("outer_mask.pgm")).unwrap();
    let digest = hex::encode(sha2::Sha256::digest(&mask));
    assert_eq!(
        digest, "ea2b79e3d28975e4eb6beb0aa079d861b13697dc1e0b0a169f54854b51548bae",
        "outer mask deviates from the recorded golden file"
    );
    let set = mask.iter().rev().take(256).filter(|&&b| b == 255).count();
    assert_eq!(set, 144);
}
