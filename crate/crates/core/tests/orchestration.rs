mod common;

use aps_core::orchestration::{
    emit_plots, read_marker, run_all, run_stage, stage_dir, table_paths, ExperimentConfig, Stage, StageOutcome,
    PLOT_PANELS,
};
use aps_core::Error;
use common::{tiny_config, TINY};

#[test]
fn fused_training_before_branch_pretraining_is_a_dependency_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), &["training.pc_source=\"ground_truth\""]);
    run_stage(&cfg, Stage::Generate, false).unwrap();
    run_stage(&cfg, Stage::Augment, false).unwrap();
    let err = run_stage(&cfg, Stage::TrainFused, false).unwrap_err();
    match &err {
        Error::Dependency { stage, missing } => {
            assert_eq!(stage, "train-fused");
            assert_eq!(missing, "pretrain-branches");
        }
        other => panic!("expected a dependency error, got {other:?}"),
    }
    assert_eq!(err.exit_code(), 3);
    assert!(!stage_dir(tmp.path(), Stage::TrainFused).exists());
}

#[test]
fn rerun_with_same_config_is_a_no_op_unless_forced() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), &[]);
    assert_eq!(run_stage(&cfg, Stage::Generate, false).unwrap(), StageOutcome::Ran);
    let first = read_marker(tmp.path(), Stage::Generate).unwrap().unwrap();
    let manifest = std::fs::read(stage_dir(tmp.path(), Stage::Generate).join("manifest.jsonl")).unwrap();
    assert_eq!(run_stage(&cfg, Stage::Generate, false).unwrap(), StageOutcome::UpToDate);
    assert_eq!(read_marker(tmp.path(), Stage::Generate).unwrap().unwrap(), first);
    assert_eq!(run_stage(&cfg, Stage::Generate, true).unwrap(), StageOutcome::Ran);
    let again = std::fs::read(stage_dir(tmp.path(), Stage::Generate).join("manifest.jsonl")).unwrap();
    assert_eq!(again, manifest);
    assert!(tmp.path().join("config.toml").is_file());
    assert!(stage_dir(tmp.path(), Stage::Generate).join("config.toml").is_file());
}

#[test]
fn changed_upstream_config_makes_artifacts_stale() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), &[]);
    run_stage(&cfg, Stage::Generate, false).unwrap();
    let changed = tiny_config(tmp.path(), &["world.seed=2"]);
    let err = run_stage(&changed, Stage::Augment, false).unwrap_err();
    assert!(matches!(&err, Error::StaleArtifact { stage, .. } if stage == "generate"), "{err:?}");
    assert_eq!(err.exit_code(), 3);

    run_stage(&changed, Stage::Generate, false).unwrap();
    assert_eq!(run_stage(&changed, Stage::Augment, false).unwrap(), StageOutcome::Ran);
}

#[test]
fn training_seed_leaves_data_stages_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), &[]);
    let seeded = tiny_config(tmp.path(), &["seed=2"]);
    for s in [Stage::Generate, Stage::Augment] {
        assert_eq!(s.hash(&cfg), s.hash(&seeded));
    }
    for s in [Stage::TrainClassifier, Stage::TrainFused, Stage::Report] {
        assert_ne!(s.hash(&cfg), s.hash(&seeded));
    }
}

#[test]
fn locked_run_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), &[]);
    std::fs::write(tmp.path().join(".lock"), "1").unwrap();
    assert!(matches!(run_stage(&cfg, Stage::Generate, false), Err(Error::Locked(_))));
    std::fs::remove_file(tmp.path().join(".lock")).unwrap();
    run_stage(&cfg, Stage::Generate, false).unwrap();
    assert!(!tmp.path().join(".lock").exists());
}

#[test]
fn malformed_configs_are_config_errors() {
    let cases = [
        TINY.replace("height = 64", "height = 48"),
        TINY.replace("extent = 8.0", "extent = 8.0\nunknown = true"),
        TINY.replace("[disruption]\noccluders_per_scene = 2", "[disruption]\noccluders_per_scene = 0"),
        TINY.replace("head_units = [16, 8]\ndropconnect_rate = 0.0\ndropout_rate = 0.0\nbatch_norm = true\n\n[models.pc_branch]",
            "head_units = [24, 8]\ndropconnect_rate = 0.0\ndropout_rate = 0.0\nbatch_norm = true\n\n[models.pc_branch]"),
        "not = [valid".to_string(),
    ];
    for text in cases {
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
        assert_eq!(err.exit_code(), 2);
    }
    assert!(matches!("train-everything".parse::<Stage>(), Err(Error::Config(_))));
}

#[test]
fn plots_need_training_histories() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(emit_plots(tmp.path()), Err(Error::Dependency { .. })));
}

#[test]
fn every_stage_is_reachable_from_generate() {
    let cfg = tiny_config(std::path::Path::new("/nonexistent"), &[]);
    for (i, s) in Stage::ALL.iter().enumerate() {
        for d in s.dependencies(&cfg) {
            let j = Stage::ALL.iter().position(|x| *x == d).unwrap();
            assert!(j < i, "{d} must precede {s}");
        }
        if *s != Stage::Generate {
            assert!(!s.dependencies(&cfg).is_empty());
        }
    }
}

#[test]
fn tiny_pipeline_produces_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), &[]);
    let outcomes = run_all(&cfg, false).unwrap();
    assert!(outcomes.iter().all(|(_, o)| *o == StageOutcome::Ran));
    for p in table_paths(tmp.path()) {
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().count() >= 2, "{}", p.display());
    }
    let plots = std::fs::read_dir(stage_dir(tmp.path(), Stage::Report).join("plots")).unwrap().count();
    assert_eq!(plots, PLOT_PANELS + 1);
    let bundle = stage_dir(tmp.path(), Stage::Evaluate).join("bundle");
    for f in ["classifier.ckpt", "generator.ckpt", "regressor.ckpt", "norm_params.json", "bundle.json"] {
        assert!(bundle.join(f).is_file(), "{f}");
    }
    let reruns = run_all(&cfg, false).unwrap();
    assert!(reruns.iter().all(|(_, o)| *o == StageOutcome::UpToDate));
}
