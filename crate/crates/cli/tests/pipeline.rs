use std::path::{Path, PathBuf};
use std::process::Command;

use triadrec::features::{load_feature_file, write_feature_file, FeatureTable};
use triadrec::pipeline::{prepare, run_ablation_prepared, run_experiment, ExperimentConfig, FeatureSource};
use triadrec::report::read_report;
use triadrec::splitfile::SplitDir;
use triadrec::stages::{train_rec_on_split, write_synthetic, MANIFEST_FILE};
use triadrec::HarnessError;
use triadrec_core::data::SynthConfig;
use triadrec_core::NoClock;

fn smoke_data(dir: &Path, seed: u64) -> PathBuf {
    let data = dir.join("data");
    let config = SynthConfig { n_users: 50, n_restaurants: 10, seed, ..SynthConfig::default() };
    write_synthetic(&config, &data).unwrap();
    data
}

fn projection_config(data: &Path, out: &Path) -> ExperimentConfig {
    let mut config = ExperimentConfig::desk_scale(data, out, 3);
    config.feature_source = FeatureSource::RandomProjection { dim: 48 };
    config
}

#[test]
fn smoke_run_with_cae_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = smoke_data(dir.path(), 1);
    let out = dir.path().join("out");
    let mut config = ExperimentConfig::desk_scale(&data, &out, 1);
    config.cae.max_epochs = 2;
    let report = run_experiment(&config).unwrap();

    for f in ["report.json", "report.txt", "features.tsv", "rec/rec.ckpt", "cae/cae.ckpt", "cae/history.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert_eq!(read_report(&out.join("report.json")).unwrap(), report);
    assert!(report.metrics.contains_key("test"));
    assert_eq!(report.cae_history.as_ref().unwrap().epochs(), 2);
    assert_eq!(load_feature_file(&out.join("features.tsv")).unwrap().dim(), 48);
    let text = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.contains("B-Score"), "{text}");
}

#[test]
fn wrong_length_feature_file_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = smoke_data(dir.path(), 2);
    let mut table = FeatureTable::new(7).unwrap();
    table.insert("images/whatever.ppm", vec![0.0; 7]).unwrap();
    let path = dir.path().join("short.tsv");
    write_feature_file(&table, &path).unwrap();

    let out = dir.path().join("out");
    let mut config = ExperimentConfig::desk_scale(&data, &out, 2);
    config.feature_source = FeatureSource::FeatureFile { path };
    let err = run_experiment(&config).unwrap_err();
    match &err {
        HarnessError::Stage { stage: "config", source } => {
            assert!(matches!(**source, HarnessError::Config(_)), "{source}");
        }
        other => panic!("expected a config-stage error, got {other}"),
    }
    assert!(err.to_string().starts_with("[config]"), "{err}");
    assert!(!out.join("rec/rec.ckpt").exists());
}

#[test]
fn feature_file_missing_an_image_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let data = smoke_data(dir.path(), 2);
    let mut table = FeatureTable::new(48).unwrap();
    table.insert("images/nothing_here.ppm", vec![0.0; 48]).unwrap();
    let path = dir.path().join("partial.tsv");
    write_feature_file(&table, &path).unwrap();
    let mut config = ExperimentConfig::desk_scale(&data, dir.path().join("out"), 2);
    config.feature_source = FeatureSource::FeatureFile { path };
    let err = run_experiment(&config).unwrap_err();
    assert!(matches!(err, HarnessError::Stage { stage: "extract", .. }), "{err}");
    assert!(!dir.path().join("out/rec/rec.ckpt").exists());
}

#[test]
fn recommender_stage_rerun_matches_the_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = smoke_data(dir.path(), 4);
    let out = dir.path().join("out");
    let report = run_experiment(&projection_config(&data, &out)).unwrap();

    // only the files on disk, as a separate invocation would see them
    let split = SplitDir::read(&out.join("augmented")).unwrap();
    let features = load_feature_file(&out.join("features.tsv")).unwrap();
    let alone = train_rec_on_split(&split.split, &features, &report.config.rec, &NoClock).unwrap();
    assert_eq!(alone.metrics, report.metrics);
    assert_eq!(alone.history.val_b_score, report.rec_history.val_b_score);
    assert_eq!(alone.history.best_epoch, report.rec_history.best_epoch);
}

#[test]
fn ablation_with_one_block_count_has_one_column() {
    let dir = tempfile::tempdir().unwrap();
    let data = smoke_data(dir.path(), 5);
    let prepared = prepare(&projection_config(&data, &dir.path().join("out"))).unwrap();
    let report = run_ablation_prepared(&prepared, &[2]).unwrap();
    assert_eq!(report.column_names(), vec!["2RB"]);
    let table = report.table();
    let b_row = table.lines().find(|l| l.starts_with("B-Score")).unwrap();
    assert_eq!(b_row.split_whitespace().count(), 2, "{table}");
    assert!(dir.path().join("out/ablation.json").is_file());
    assert!(dir.path().join("out/ablation/2rb.ckpt").is_file());

    let both = run_ablation_prepared(&prepared, &[1, 2]).unwrap();
    assert_eq!(both.column_names(), vec!["1RB", "2RB"]);
    assert_eq!(both.columns[0].feature_checksum, both.columns[1].feature_checksum);
    assert_eq!(both.columns[1].metrics, report.columns[0].metrics);
}

#[test]
fn synthetic_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = SynthConfig { n_users: 15, n_restaurants: 5, seed: 8, ..SynthConfig::default() };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let reviews = write_synthetic(&config, &a).unwrap();
    write_synthetic(&config, &b).unwrap();
    assert_eq!(std::fs::read(a.join(MANIFEST_FILE)).unwrap(), std::fs::read(b.join(MANIFEST_FILE)).unwrap());
    for path in reviews.iter().flat_map(|r| &r.image_paths) {
        assert_eq!(std::fs::read(a.join(path)).unwrap(), std::fs::read(b.join(path)).unwrap(), "{path}");
    }
}

fn triadrec(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_triadrec")).args(args).output().unwrap()
}

#[test]
fn binary_reports_the_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = dir.path().join("out");
    let run = triadrec(&["run", "--data", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!run.status.success());
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("[split]") && stderr.contains("manifest.jsonl"), "{stderr}");

    let bad = triadrec(&["evaluate", "--model", "x", "--features", "y", "--split", "z"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("[evaluate]"));
}

#[test]
fn binary_runs_the_stages_one_by_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth", "--users", "30", "--restaurants", "6", "--seed", "2", "--out", &p("data")],
        vec!["split", "--manifest", &p("data/manifest.jsonl"), "--seed", "2", "--out", &p("split")],
        vec!["train-cae", "--split", &p("split"), "--max-epochs", "1", "--out", &p("cae")],
        vec!["augment", "--split", &p("split"), "--out", &p("aug")],
        vec!["extract", "--cae", &p("cae/cae.ckpt"), "--split", &p("aug"), "--out", &p("f.tsv")],
        vec!["train-rec", "--features", &p("f.tsv"), "--split", &p("aug"), "--embed", "8", "--out", &p("rec")],
        vec!["evaluate", "--model", &p("rec/rec.ckpt"), "--features", &p("f.tsv"), "--split", &p("aug"), "--out", &p("eval.json")],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        let o = triadrec(&args);
        assert!(o.status.success(), "{}: {}", step[0], String::from_utf8_lossy(&o.stderr));
    }
    let trained: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rec/metrics.json")).unwrap()).unwrap();
    let evaluated: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(trained["test"], evaluated);
}
