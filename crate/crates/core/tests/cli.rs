use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use central_lab::measures::{read_distance_matrix_csv, EmpiricalMeasure};
use central_lab::orbits::{read_spectrum_csv, SampleGrid};
use central_lab::pliss::{read_selection_csv, write_sequence_csv};
use central_lab::spectrum::{read_gap_curve_csv, read_pairs_csv};

fn lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_central-lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn error_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stderr).expect("stderr is one JSON object")
}

const NORTH_SOUTH: &str = r#"{"name": "north-south", "k": 1, "maps": [{"a": 0.0, "b": 0.5}]}"#;

#[test]
fn spectrum_of_single_map_has_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("ns.json");
    fs::write(&model, NORTH_SOUTH).unwrap();
    let out = dir.path().join("out");
    let o = lab(&["spectrum", "--model", model.to_str().unwrap(), "--max-period", "6", "--svg"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_spectrum_csv(fs::File::open(out.join("spectrum.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    let curve = read_gap_curve_csv(fs::File::open(out.join("gap_curve.csv")).unwrap()).unwrap();
    assert_eq!(curve.len(), 6);
    assert!(fs::read_to_string(out.join("gap_curve.svg")).unwrap().starts_with("<svg"));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("spectrum.json")).unwrap()).unwrap();
    assert_eq!(manifest["connected"], false);
}

#[test]
fn zero_eps_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = lab(&["construct", "--target", "0.4", "--eps", "0"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "parameter");
    assert!(!out.exists());
}

#[test]
fn target_outside_spectrum_is_rejected_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = lab(&["construct", "--target", "3", "--eps", "0.4"], &out);
    assert_eq!(o.status.code(), Some(2));
    let err = error_json(&o);
    assert_eq!(err["error"], "precondition");
    assert!(err["message"].as_str().unwrap().contains("outside the exponent spectrum"));
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["spectrum", "--max-period", "zero"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "usage");
}

#[test]
fn short_construction_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = lab(&["construct", "--target", "0.4", "--eps", "0.4", "--stages", "2", "--seed", "11"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["records"].as_array().unwrap().len(), 2);
    assert!(manifest["failure"].is_null());
    let table = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    for n in 1..=2 {
        let cert = central_lab::cli::load_certificate(&out.join(format!("cert_stage_{n}.json"))).unwrap();
        assert!(cert.chi > 0.0);
    }
}

#[test]
fn pliss_selection_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("seq.csv");
    let mut buf = Vec::new();
    write_sequence_csv(&mut buf, &[1.0, -1.0, -0.5, 0.5, -1.0]).unwrap();
    fs::write(&input, buf).unwrap();
    let out = dir.path().join("out");
    let o = lab(
        &["pliss", "--input", input.to_str().unwrap(), "--lambda0", "-1", "--lambda1", "0"],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sel = read_selection_csv(fs::File::open(out.join("selection.csv")).unwrap()).unwrap();
    assert_eq!(sel, vec![1, 2, 4]);

    let o = lab(
        &["pliss", "--input", input.to_str().unwrap(), "--lambda0", "0", "--lambda1", "0"],
        &dir.path().join("bad"),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("bad").exists());
}

#[test]
fn approx_writes_a_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let args = [
        "approx", "--x-word", "0", "--x-fiber", "0", "--y-word", "0", "--y-fiber", "0", "--gamma", "0.1", "--chi", "1",
    ];
    let o = lab(&args, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cert = central_lab::cli::load_certificate(&out.join("certificate.json")).unwrap();
    assert_eq!(cert.chi, 1.0);

    // the two fixed points of the first map are half a circle apart
    let far = [
        "approx", "--x-word", "0", "--x-fiber", "0", "--y-word", "0", "--y-fiber", "0.5", "--gamma", "0.1", "--chi", "0.5",
    ];
    let o = lab(&far, &dir.path().join("none"));
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_json(&o)["error"], "not-found");
}

#[test]
fn pairs_and_measures_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pair = dir.path().join("pair.json");
    let reference = r#"{"name": "reference", "k": 2, "maps": [{"a": 0.0, "b": 0.5}, {"a": 0.5, "b": 0.5}]}"#;
    fs::write(&pair, format!(r#"{{"first": {reference}, "second": {reference}, "log_shift": 1.5}}"#)).unwrap();
    let out = dir.path().join("pairs");
    let o = lab(&["pairs2d", "--model", pair.to_str().unwrap(), "--max-period", "4", "--svg"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pairs = read_pairs_csv(fs::File::open(out.join("pairs.csv")).unwrap()).unwrap();
    assert!(pairs.iter().all(|p| p.lambda2 > p.lambda1));

    fs::write(&pair, format!(r#"{{"first": {reference}, "second": {reference}, "log_shift": 0.5}}"#)).unwrap();
    let o = lab(&["pairs2d", "--model", pair.to_str().unwrap()], &dir.path().join("undominated"));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "configuration");

    let out = dir.path().join("measures");
    let o = lab(&["measure", "--max-period", "3", "--depth", "2", "--bins", "8"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (labels, matrix) = read_distance_matrix_csv(fs::File::open(out.join("distances.csv")).unwrap()).unwrap();
    assert_eq!(labels.len(), matrix.len());
    assert!((0..labels.len()).all(|i| matrix[i][i] == 0.0));
    let grid = SampleGrid::new(2, 8).unwrap();
    let mu = EmpiricalMeasure::read_csv(fs::File::open(out.join("measure_0000.csv")).unwrap(), 2, grid).unwrap();
    assert!((mu.total_weight() - 1.0).abs() < 1e-12);
}

#[test]
fn identical_invocations_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(lab(&["spectrum", "--max-period", "8"], out).status.success());
    }
    for name in ["spectrum.csv", "gap_curve.csv", "spectrum.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}
