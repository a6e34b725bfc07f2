//! Regression against committed reconstructions of the desk scenario.
//! Set `RTINV_BLESS=1` to regenerate the files under `tests/golden/`.

use std::path::{Path, PathBuf};
use std::process::Command;

use rtinv_harness::export::read_spatial;

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

#[test]
fn desk_linear_reconstruction_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/desk.json");
    let out = Command::new(env!("CARGO_BIN_EXE_rtinv"))
        .args(["invert-linear", "--quiet", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let bless = std::env::var_os("RTINV_BLESS").is_some();
    for (produced, stored) in [("f.csv", "desk_f.csv"), ("u0.csv", "desk_u0.csv")] {
        let fresh = dir.path().join(produced);
        let reference = golden(stored);
        if bless || !reference.exists() {
            std::fs::create_dir_all(reference.parent().unwrap()).unwrap();
            std::fs::copy(&fresh, &reference).unwrap();
            continue;
        }
        let a = read_spatial(&fresh).unwrap();
        let b = read_spatial(&reference).unwrap();
        assert_eq!(a.values.len(), b.values.len(), "{stored}");
        let scale = b.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (i, (x, y)) in a.values.iter().zip(&b.values).enumerate() {
            assert!((x - y).abs() <= 1e-9 * scale, "{stored} cell {i}: {x} vs {y}");
        }
    }
}
