use std::path::Path;
use std::process::{Command, Output};

fn hsforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsforge"))
        .current_dir(dir)
        .args(["--workers", "2", "--set", "lut_size=600"])
        .args(args)
        .output()
        .expect("run hsforge")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = hsforge(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn full_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();

    ok(d, &["gen-coeffs", "--out", "coeffs.csv"]);
    let coeffs = std::fs::read_to_string(d.join("coeffs.csv")).unwrap();
    assert_eq!(coeffs.lines().next().unwrap(), "wavelength_nm,k_ab,k_ar,k_ant,k_brown,k_w,k_m,r_if");
    assert_eq!(coeffs.lines().count(), 212);

    ok(d, &["gen-soil", "--regions", "france,spain", "--out", "soils.csv"]);
    std::fs::write(d.join("run.cfg"), "coeff_file = coeffs.csv\nsoil_file = soils.csv\nregion = spain\n").unwrap();

    ok(d, &["--config", "run.cfg", "build-lut", "--out", "lut.bin"]);
    ok(d, &["--config", "run.cfg", "--seed", "5", "synth-input", "--tiles", "2", "--noise-sigma", "0.003", "--out", "input"]);
    assert!(d.join("input/SYN_0001/sensor.img").is_file());

    let out = ok(d, &["--config", "run.cfg", "make-dataset", "--input", "input", "--lut", "lut.bin", "--out", "dataset"]);
    assert!(out.contains("2 tiles, 0 failed"), "{out}");
    let manifest = std::fs::read_to_string(d.join("dataset/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    assert!(d.join("dataset/spain/SYN_0000/quality_scene_classification.img").is_file());

    // refuses to overwrite without the flag
    let again = hsforge(d, &["--config", "run.cfg", "make-dataset", "--input", "input", "--lut", "lut.bin", "--out", "dataset"]);
    assert!(!again.status.success());

    for target in ["dataset", "dataset/spain", "dataset/spain/SYN_0001"] {
        ok(d, &["validate", target]);
    }

    let csv = ok(d, &["export-spectra", "--cube", "dataset/spain/SYN_0000/surf_refl", "--pixel", "3,4", "--pixel", "0,0"]);
    assert_eq!(csv.lines().count(), 212);
    assert_eq!(csv.lines().next().unwrap(), "wavelength_nm,r3_c4,r0_c0");

    ok(d, &["--config", "run.cfg", "invert", "--input", "input/SYN_0000/sensor", "--lut", "lut.bin", "--out", "inv"]);
    ok(d, &["--config", "run.cfg", "simulate", "--traits", "inv/traits", "--out", "inv/surf_refl"]);
    assert!(d.join("inv/surf_refl.hdr").is_file());

    let bench = ok(d, &["--config", "run.cfg", "bench", "--lut", "lut.bin", "--pixels", "32"]);
    assert!(bench.contains("all kernels agree"), "{bench}");
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = hsforge(d, &["--set", "no_such_key=1", "gen-coeffs"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));

    let o = hsforge(d, &["export-spectra", "--cube", "missing"]);
    assert!(!o.status.success());

    let o = hsforge(d, &["validate", "."]);
    assert!(!o.status.success());

    let o = hsforge(d, &["--workers", "0", "gen-coeffs"]);
    assert!(!o.status.success());
}
