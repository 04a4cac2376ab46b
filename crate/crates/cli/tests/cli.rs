use std::path::Path;
use std::process::{Command, Output};

use daal_core::formats::write_labeled_volume;
use daal_core::volume::LabeledVolume;

fn daal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_daal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = daal(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, patients: &str) -> String {
    let out = dir.join("cohort");
    ok(&[
        "synth",
        "--patients",
        patients,
        "--slices",
        "5",
        "--dim",
        "4",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    out.join("manifest.csv").to_str().unwrap().to_string()
}

#[test]
fn train_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), "60");
    let model = tmp.path().join("model");
    let model = model.to_str().unwrap();
    ok(&[
        "train",
        "--manifest",
        &manifest,
        "--method",
        "daal-single",
        "--epochs",
        "20",
        "--lr",
        "1e-2",
        "--validation-fraction",
        "0.2",
        "--query-dim",
        "4",
        "--info-dim",
        "4",
        "--out",
        model,
    ]);
    for file in ["model.json", "params.bin", "loss_curve.csv"] {
        assert!(Path::new(model).join(file).exists(), "{file} missing");
    }
    let curve = std::fs::read_to_string(Path::new(model).join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 22);

    let metrics = tmp.path().join("metrics.json");
    ok(&[
        "eval",
        "--model",
        model,
        "--manifest",
        &manifest,
        "--out",
        metrics.to_str().unwrap(),
    ]);
    let value: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&metrics).unwrap()).unwrap();
    let c = value["c_index"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&c));
    assert_eq!(value["n_patients"], 60);
    assert_eq!(value["risks"].as_array().unwrap().len(), 60);
}

#[test]
fn cv_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), "80");
    let results = tmp.path().join("results");
    let results = results.to_str().unwrap();
    let cv = |out: &str, extra: &[&str]| {
        let mut args = vec![
            "cv",
            "--manifest",
            &manifest,
            "--methods",
            "mean-cox,daal-multiple",
            "--k-values",
            "3,5",
            "--epochs",
            "5",
            "--lr",
            "1e-2",
            "--null-permutations",
            "20",
            "--query-dim",
            "3",
            "--info-dim",
            "3",
            "--out",
            out,
        ];
        args.extend_from_slice(extra);
        ok(&args);
    };
    cv(results, &[]);
    let serial = tmp.path().join("serial");
    cv(serial.to_str().unwrap(), &["--serial"]);
    let a = std::fs::read(Path::new(results).join("results.json")).unwrap();
    let b = std::fs::read(serial.join("results.json")).unwrap();
    assert_eq!(a, b);

    let table = tmp.path().join("out").join("table.csv");
    ok(&[
        "report",
        "--results",
        results,
        "--out",
        table.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,3,5");
    assert!(lines[1].starts_with("mean-cox,"));
    assert!(lines[2].starts_with("daal-multiple,"));
    for sibling in ["table_std.csv", "table_hr.csv", "table_folds.json"] {
        assert!(
            tmp.path().join("out").join(sibling).exists(),
            "{sibling} missing"
        );
    }
}

#[test]
fn gradcheck_exit_codes() {
    assert!(ok(&["gradcheck", "--seed", "1"]).contains("daal-multiple"));
    let out = daal(&["gradcheck", "--seed", "1", "--tolerance", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn input_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    let out = daal(&[
        "eval",
        "--model",
        tmp.path().to_str().unwrap(),
        "--manifest",
        missing.to_str().unwrap(),
        "--out",
        "x.json",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let manifest = synth(tmp.path(), "30");
    let out = daal(&[
        "train",
        "--manifest",
        &manifest,
        "--method",
        "no-such-method",
        "--out",
        "m",
    ]);
    assert_ne!(out.status.code(), Some(0));
    let out = daal(&[
        "cv",
        "--manifest",
        &manifest,
        "--methods",
        "mean-cox",
        "--k-values",
        "2",
        "--out",
        "r",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn select_slices_writes_tiles_and_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let dims = (6, 5, 4);
    let n = dims.0 * dims.1 * dims.2;
    let intensities: Vec<f32> = (0..n).map(|i| i as f32).collect();
    let mut mask = vec![0u8; n];
    for (x, y, z) in [(2, 2, 1), (3, 2, 1), (2, 3, 2)] {
        mask[x + dims.0 * (y + dims.1 * z)] = 1;
    }
    let volume = LabeledVolume::new(dims, intensities, mask).unwrap();
    let (vi, vm) = (tmp.path().join("v.mvol"), tmp.path().join("m.mvol"));
    write_labeled_volume(&volume, &vi, &vm).unwrap();
    let out = tmp.path().join("tiles");
    let stdout = ok(&[
        "select-slices",
        "--intensities",
        vi.to_str().unwrap(),
        "--mask",
        vm.to_str().unwrap(),
        "--kx1",
        "1",
        "--kx2",
        "1",
        "--size",
        "8",
        "--patient",
        "p7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("anchors x=2 y=2 z=1"), "{stdout}");
    let sidecar: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("p7_slices.json")).unwrap()).unwrap();
    assert_eq!(sidecar["slice_count"], 5);
    assert_eq!(sidecar["coverage_ratio"], 1.0);
    let tiles = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "tile")
        })
        .count();
    assert_eq!(tiles, 4);
}
