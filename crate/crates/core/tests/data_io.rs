use std::fs;
use std::path::Path;

use multiplex_forge::data::{
    generate_synthetic, load_dataset, read_matrix_csv, save_dataset, write_matrix_csv, SynthConfig,
};
use multiplex_forge::{DenseTensor, Error};

fn small_synth() -> SynthConfig {
    SynthConfig {
        subjects: 6,
        n: 7,
        signal_nodes: 3,
        ..SynthConfig::default()
    }
}

fn write_raw(dir: &Path, name: &str, m: &DenseTensor) {
    write_matrix_csv(&dir.join(name), m).unwrap();
}

#[test]
fn save_then_load_reproduces_matrices() {
    let tmp = tempfile::tempdir().unwrap();
    let d = generate_synthetic(&small_synth()).unwrap();
    save_dataset(&d, tmp.path()).unwrap();
    let back = load_dataset(tmp.path()).unwrap();
    assert_eq!(back.len(), d.len());
    for (a, b) in d.subjects.iter().zip(&back.subjects) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.label, b.label);
        let gap = a.source.weights().sub(b.source.weights()).unwrap().max_abs();
        assert!(gap <= 1e-15);
        let (ta, tb) = (a.target.as_ref().unwrap(), b.target.as_ref().unwrap());
        assert!(ta.weights().sub(tb.weights()).unwrap().max_abs() <= 1e-15);
    }
}

#[test]
fn loading_normalized_data_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let once = tmp.path().join("once");
    let twice = tmp.path().join("twice");
    save_dataset(&generate_synthetic(&small_synth()).unwrap(), &once).unwrap();
    let first = load_dataset(&once).unwrap();
    save_dataset(&first, &twice).unwrap();
    let second = load_dataset(&twice).unwrap();
    for (a, b) in first.subjects.iter().zip(&second.subjects) {
        assert!(a.source.weights().sub(b.source.weights()).unwrap().max_abs() <= 1e-15);
    }
}

#[test]
fn ragged_matrix_is_non_square() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.csv");
    let row = vec!["0.5"; 35].join(",");
    let text: String = (0..34).map(|_| format!("{row}\n")).collect();
    fs::write(&path, text).unwrap();
    assert!(matches!(read_matrix_csv(&path, 35), Err(Error::NonSquare { .. })));
}

#[test]
fn asymmetric_input_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.csv");
    fs::write(&path, "0,1,2\n1,0,3\n2,3.1,0\n").unwrap();
    assert!(matches!(read_matrix_csv(&path, 3), Err(Error::Asymmetry { i: 1, j: 2, .. })));
}

fn raw_manifest(dir: &Path, subjects: &[(&str, &str)], with_range: bool) {
    let list: Vec<String> = subjects
        .iter()
        .map(|(id, label)| {
            format!(r#"{{"id": "{id}", "label": "{label}", "source": "{id}_s.csv", "target": "{id}_t.csv"}}"#)
        })
        .collect();
    let norm = if with_range {
        r#"{"curv": {"min": 0.0, "max": 20.0}, "thick": {"min": -1.0, "max": 3.0}}"#
    } else {
        "null"
    };
    let text = format!(
        r#"{{"version": 1, "n": 3, "source_view": "curv", "target_view": "thick", "normalization": {norm}, "subjects": [{}]}}"#,
        list.join(", ")
    );
    fs::write(dir.join("manifest.json"), text).unwrap();
}

#[test]
fn global_min_max_normalization_matches_recomputation() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let raw = [
        [[0.0, 2.0, 6.0], [2.0, 0.0, 4.0], [6.0, 4.0, 0.0]],
        [[9.0, 3.0, 10.0], [3.0, 9.0, 5.0], [10.0, 5.0, 9.0]],
    ];
    for (k, m) in raw.iter().enumerate() {
        let rows: Vec<Vec<f64>> = m.iter().map(|r| r.to_vec()).collect();
        let t = DenseTensor::from_rows(&rows).unwrap();
        write_raw(dir, &format!("s{k}_s.csv"), &t);
        write_raw(dir, &format!("s{k}_t.csv"), &t.scale(0.5));
    }
    raw_manifest(dir, &[("s0", "+1"), ("s1", "-1")], false);
    let d = load_dataset(&dir.join("manifest.json")).unwrap();

    // Off-diagonal range is [2, 10] for the source and [1, 5] for the target.
    let (lo, hi) = (2.0, 10.0);
    for (k, m) in raw.iter().enumerate() {
        let got = d.subjects[k].source.weights();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { (m[i][j] - lo) / (hi - lo) };
                assert!((got[(i, j)] - want).abs() < 1e-15);
            }
        }
    }
    for view in ["curv", "thick"] {
        let mut all = Vec::new();
        for s in &d.subjects {
            let net = if view == "curv" { &s.source } else { s.target.as_ref().unwrap() };
            all.extend(net.upper_triangle());
        }
        let min = all.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((min, max), (0.0, 1.0), "{view}");
    }
    assert_eq!(d.normalization["curv"].min, 2.0);
    assert_eq!(d.normalization["thick"].max, 5.0);
}

#[test]
fn recorded_ranges_take_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let t = DenseTensor::from_rows(&[vec![0.0, 5.0, 10.0], vec![5.0, 0.0, 15.0], vec![10.0, 15.0, 0.0]]).unwrap();
    write_raw(dir, "a_s.csv", &t);
    write_raw(dir, "a_t.csv", &t.scale(0.1));
    raw_manifest(dir, &[("a", "+1")], true);
    let d = load_dataset(dir).unwrap();
    let s = d.subjects[0].source.weights();
    assert!((s[(0, 1)] - 0.25).abs() < 1e-15);
    assert!((s[(1, 2)] - 0.75).abs() < 1e-15);
    let tgt = d.subjects[0].target.as_ref().unwrap().weights();
    assert!((tgt[(0, 2)] - 0.5).abs() < 1e-15);
}

#[test]
fn duplicate_ids_and_bad_labels_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let t = DenseTensor::from_rows(&[vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 3.0], vec![2.0, 3.0, 0.0]]).unwrap();
    write_raw(dir, "a_s.csv", &t);
    write_raw(dir, "a_t.csv", &t);
    raw_manifest(dir, &[("a", "+1"), ("a", "-1")], false);
    assert!(matches!(load_dataset(dir), Err(Error::DuplicateId(id)) if id == "a"));
    raw_manifest(dir, &[("a", "yes")], false);
    assert!(matches!(load_dataset(dir), Err(Error::Parse { .. })));
}

#[test]
fn missing_file_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    raw_manifest(tmp.path(), &[("ghost", "+1")], false);
    assert!(matches!(load_dataset(tmp.path()), Err(Error::Io { .. })));
}
