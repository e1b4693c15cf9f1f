use spinegrade::phantom::PhantomSpec;
use std::path::Path;
use std::process::{Command, Output};

fn spinegrade(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinegrade"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SPINEGRADE_OUT")
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn parse_reports_on_complex_sentences() {
    let tmp = tempfile::tempdir().unwrap();
    let reports = tmp.path().join("reports");
    std::fs::create_dir(&reports).unwrap();
    let fixture =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/complex_sentences.tsv");
    std::fs::copy(&fixture, reports.join("complex_sentences.tsv")).unwrap();
    let out = spinegrade(
        &["parse-reports", "reports", "-o", "labels.csv"],
        tmp.path(),
    );
    assert_ok(&out);
    let rows = csv_rows(&tmp.path().join("labels.csv"));
    let grades: Vec<(&str, &str, &str, &str)> = rows
        .iter()
        .map(|r| (r[0].as_str(), r[2].as_str(), r[3].as_str(), r[4].as_str()))
        .collect();
    assert_eq!(
        grades,
        vec![
            ("example1", "0", "1", "2"),
            ("example2", "0", "2", "1"),
            ("example3", "3", "3", "3"),
        ]
    );
    assert!(tmp.path().join("labels.manifest.json").exists());
    assert!(tmp.path().join("labels.diagnostics.json").exists());
}

#[test]
fn missing_inputs_exit_one_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 7] = [
        &["parse-reports", "nope", "-o", "out/labels.csv"],
        &["segment-score", "nope", "-o", "out"],
        &["extract-discs", "nope", "-o", "out"],
        &["phantom-gen", "--spec", "nope.toml", "-o", "out"],
        &["train-toy", "nope.csv", "-o", "out"],
        &["evaluate", "nope.csv", "--model", "nope.spnc", "-o", "out"],
        &["pipeline", "--data", "nope", "-o", "out"],
    ];
    for args in cases {
        let out = spinegrade(args, tmp.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!tmp.path().join("out").exists(), "{args:?} left outputs");
        assert!(!out.stderr.is_empty());
    }
    let out = spinegrade(&["pipeline", "-o", "out"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(tmp.path().join("bad.toml"), "curve_degree = 1\n").unwrap();
    std::fs::write(tmp.path().join("spec.toml"), "").unwrap();
    let out = spinegrade(
        &[
            "pipeline",
            "--phantom",
            "spec.toml",
            "--config",
            "bad.toml",
            "-o",
            "out",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn stages_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_ok(&spinegrade(
        &["phantom-gen", "--studies", "12", "-o", "studies"],
        dir,
    ));
    assert!(dir.join("studies/phantom000/sagittal.spnv").exists());

    assert_ok(&spinegrade(&["segment-score", "studies", "-o", "seg"], dir));
    let rows = csv_rows(&dir.join("seg/segmentation_scores.csv"));
    assert_eq!(rows.len(), 12 * 7);
    assert!(rows.iter().all(|r| r[4] == "true"));

    assert_ok(&spinegrade(
        &["extract-discs", "studies", "-o", "discs"],
        dir,
    ));
    assert_eq!(csv_rows(&dir.join("discs/features.csv")).len(), 12 * 6);
    assert!(dir.join("discs/discs/phantom000_L4L5_axial.spnv").exists());
    assert!(dir.join("discs/discs/phantom000_L4L5_frame.json").exists());

    assert_ok(&spinegrade(
        &["train-toy", "discs/features.csv", "-o", "model"],
        dir,
    ));
    assert!(dir.join("model/model.spnc").exists());
    assert_ok(&spinegrade(
        &[
            "evaluate",
            "model/features.csv",
            "--model",
            "model/model.spnc",
            "--merge-mild-moderate",
            "--level",
            "L4-L5",
            "-o",
            "eval",
        ],
        dir,
    ));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("eval/metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["view"], "merged-mild-moderate");
    assert_eq!(metrics["class_names"].as_array().unwrap().len(), 3);
    for name in ["seg", "discs", "model", "eval"] {
        assert!(dir.join(name).join("manifest.json").exists(), "{name}");
    }
}

#[test]
fn pipeline_on_phantom_spec_honours_out_env() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = PhantomSpec::default();
    spec.study_id = "p".into();
    std::fs::write(tmp.path().join("default.toml"), spec.to_toml_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_spinegrade"))
        .args([
            "pipeline",
            "--phantom",
            "default.toml",
            "--studies",
            "10",
            "--jobs",
            "1",
        ])
        .current_dir(tmp.path())
        .env("SPINEGRADE_OUT", "from_env")
        .output()
        .unwrap();
    assert_ok(&out);
    let run = tmp.path().join("from_env");
    for f in [
        "labels.csv",
        "segmentation_scores.csv",
        "features.csv",
        "split.json",
        "model.spnc",
        "training.json",
        "metrics.json",
        "metrics.txt",
        "config.toml",
        "manifest.json",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "pipeline");
    assert_eq!(manifest["config"]["phantom"]["study_id"], "p");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 10);
}
