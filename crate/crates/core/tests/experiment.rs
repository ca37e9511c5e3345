use std::fs;
use std::path::Path;

use annobudget::experiment::{load_results, report_from_dir, run_sweep, ExperimentConfig, RunOptions};
use annobudget::synth::GeneratorSpec;
use annobudget::targets::TrainMode;
use annobudget::Error;

fn small_config() -> ExperimentConfig {
    let text = r#"{
        "synthetic": {
            "classes": 3, "features": 6, "instances": 240, "annotators": 12,
            "separation": 2.0, "noise": {"kind": "flip_range", "min": 0.0, "max": 0.5},
            "seed": 3
        },
        "ks": [1, 4, 12],
        "replicates": 3,
        "base_seed": 21
    }"#;
    ExperimentConfig::from_json(text).unwrap()
}

fn run_into(dir: &Path, jobs: usize, resume: bool) -> Vec<u8> {
    let opts = RunOptions {
        jobs: Some(jobs),
        resume,
        output_dir: Some(dir.to_path_buf()),
    };
    run_sweep(&small_config(), &opts).unwrap();
    fs::read(dir.join("report.json")).unwrap()
}

#[test]
fn reports_are_byte_identical_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let sequential = run_into(&tmp.path().join("a"), 1, false);
    let parallel = run_into(&tmp.path().join("b"), 4, false);
    let again = run_into(&tmp.path().join("c"), 4, false);
    assert_eq!(sequential, parallel);
    assert_eq!(parallel, again);
    for name in ["accuracy.csv", "transitions.csv"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(name)).unwrap(),
            fs::read(tmp.path().join("b").join(name)).unwrap()
        );
    }
}

#[test]
fn resume_reuses_cells_and_reproduces_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let first = run_into(&dir, 2, false);

    // Drop one cell and tag another so a rerun would be visible.
    fs::remove_file(dir.join("cells/k004_r001.json")).unwrap();
    let tagged = dir.join("cells/k001_r000.json");
    let mut cell: serde_json::Value = serde_json::from_str(&fs::read_to_string(&tagged).unwrap()).unwrap();
    cell["strategies"][0]["epoch_losses"][0] = serde_json::json!(123.0);
    fs::write(&tagged, serde_json::to_string_pretty(&cell).unwrap()).unwrap();

    run_into(&dir, 2, true);
    assert!(dir.join("cells/k004_r001.json").exists());
    let kept: serde_json::Value = serde_json::from_str(&fs::read_to_string(&tagged).unwrap()).unwrap();
    assert_eq!(kept["strategies"][0]["epoch_losses"][0], serde_json::json!(123.0));

    // Restoring the tagged cell makes the resumed report identical.
    fs::remove_file(&tagged).unwrap();
    let resumed = run_into(&dir, 2, true);
    assert_eq!(first, resumed);
}

#[test]
fn resume_ignores_cells_from_a_different_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    run_into(&dir, 1, false);
    let mut cfg = small_config();
    cfg.train.learning_rate = 0.01;
    let opts = RunOptions {
        jobs: Some(1),
        resume: true,
        output_dir: Some(dir.clone()),
    };
    let changed = run_sweep(&cfg, &opts).unwrap();
    let fresh = run_sweep(&cfg, &RunOptions { jobs: Some(1), ..RunOptions::default() }).unwrap();
    assert_eq!(serde_json::to_string(&changed).unwrap(), serde_json::to_string(&fresh).unwrap());
}

#[test]
fn report_from_directory_matches_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let original = run_into(&dir, 2, false);
    let rebuilt = report_from_dir(&dir).unwrap();
    let mut text = serde_json::to_string_pretty(&rebuilt).unwrap();
    text.push('\n');
    assert_eq!(text.as_bytes(), &original[..]);

    let (cfg, cells) = load_results(&dir).unwrap();
    assert_eq!(cells.len(), 9);
    assert_eq!(cfg.fingerprint(), small_config().fingerprint());
}

#[test]
fn report_structure() {
    let report = run_sweep(&small_config(), &RunOptions { jobs: Some(2), ..RunOptions::default() }).unwrap();
    let names: Vec<&str> = report.modes.iter().map(|m| m.mode.as_str()).collect();
    assert_eq!(names, ["ML", "ML/AbsoluteGT", "LD", "LD/AbsoluteGT"]);
    for mode in &report.modes {
        assert_eq!(mode.per_k.len(), 3);
        assert!(mode.per_k.iter().all(|s| s.replicates == 3));
        assert!((mode.gain - (mode.max.accuracy - mode.min.accuracy)).abs() < 1e-15);
    }
    // Consecutive pairs plus (first, last).
    let pairs: Vec<(usize, usize)> = report
        .transitions
        .iter()
        .filter(|t| t.mode == TrainMode::Ld)
        .map(|t| (t.from_k, t.to_k))
        .collect();
    assert_eq!(pairs, [(1, 4), (4, 12), (1, 12)]);
    let table = report.render_table();
    assert!(table.contains("[LD]\nmin "), "{table}");
}

#[test]
fn empty_directory_is_not_a_result_set() {
    let tmp = tempfile::tempdir().unwrap();
    let err = report_from_dir(tmp.path()).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)), "{err:?}");
}

#[test]
fn config_validation() {
    let bad = [
        r#"{"ks": [1]}"#,
        r#"{"dataset": "x.jsonl", "synthetic": null, "ks": []}"#,
        r#"{"dataset": "x.jsonl", "ks": [0]}"#,
        r#"{"dataset": "x.jsonl", "ks": [1], "replicates": 0}"#,
        r#"{"dataset": "x.jsonl", "ks": [1], "unknown_key": 1}"#,
        r#"{"dataset": "x.jsonl", "ks": [1], "split": {"train": 0.5, "dev": 0.1, "test": 0.1}}"#,
        r#"{"dataset": "x.jsonl", "ks": [1], "train": {"learning_rate": -1}}"#,
    ];
    for text in bad {
        assert!(ExperimentConfig::from_json(text).is_err(), "accepted {text}");
    }
    let mut cfg = small_config();
    cfg.ks = vec![13];
    assert!(matches!(
        run_sweep(&cfg, &RunOptions::default()),
        Err(Error::BudgetOutOfRange { k: 13, max: 12 })
    ));
}

#[test]
fn fingerprint_ignores_bookkeeping_fields() {
    let a = small_config();
    let mut b = a.clone();
    b.output_dir = Some("elsewhere".into());
    b.export_maps = true;
    b.replicates = 7;
    b.ks = vec![2];
    assert_eq!(a.fingerprint(), b.fingerprint());
    b.base_seed += 1;
    assert_ne!(a.fingerprint(), b.fingerprint());
    let mut c = a.clone();
    c.synthetic = Some(GeneratorSpec::reference(0));
    assert_ne!(a.fingerprint(), c.fingerprint());
}

#[test]
fn diverging_training_fails_the_sweep_and_lists_failures() {
    let mut cfg = small_config();
    cfg.train.learning_rate = 1e308;
    let tmp = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        jobs: Some(2),
        resume: false,
        output_dir: Some(tmp.path().to_path_buf()),
    };
    let err = run_sweep(&cfg, &opts).unwrap_err();
    assert!(err.is_runtime(), "{err:?}");
    match err {
        Error::Sweep { failed, total, .. } => assert_eq!((failed, total), (9, 9)),
        other => panic!("unexpected {other:?}"),
    }
    assert!(tmp.path().join("failures.json").exists());
    assert!(!tmp.path().join("report.json").exists());
}

#[test]
fn exported_maps_cover_every_cell() {
    let mut cfg = small_config();
    cfg.export_maps = true;
    cfg.ks = vec![1, 12];
    cfg.replicates = 1;
    let tmp = tempfile::tempdir().unwrap();
    run_sweep(&cfg, &RunOptions { jobs: Some(1), resume: false, output_dir: Some(tmp.path().to_path_buf()) }).unwrap();
    let mut names: Vec<String> = fs::read_dir(tmp.path().join("maps"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["ld_k001_r000.csv", "ld_k012_r000.csv", "ml_k001_r000.csv", "ml_k012_r000.csv"]);
}
