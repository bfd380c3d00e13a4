use std::path::Path;

use smflab::harness::{
    diagnose_isc, load_stage_checkpoint, read_checkpoint_meta, run_pipeline, sample_checkpoint, ExperimentConfig,
    HarnessError, ModelArch, PipelineOptions, SampleSource, Stage, StageOutcome,
};
use smflab::isc::StudentModel;

fn config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(include_str!("../../../configs/smoke.toml")).unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn no_stages_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir.path().join("out"));
    let summary = run_pipeline(&cfg, &[], PipelineOptions::default()).unwrap();
    assert!(summary.stages.is_empty());
    assert!(!cfg.output_dir.exists());
}

#[test]
fn missing_input_names_the_prior_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    match run_pipeline(&cfg, &[Stage::Distill], PipelineOptions::default()) {
        Err(HarnessError::MissingInput { stage, .. }) => assert_eq!(stage, "teacher"),
        other => panic!("{other:?}"),
    }
    match run_pipeline(&cfg, &[Stage::Eval], PipelineOptions::default()) {
        Err(HarnessError::MissingInput { stage, .. }) => assert_eq!(stage, "teacher"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn dry_run_touches_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir.path().join("out"));
    let opts = PipelineOptions {
        dry_run: true,
        ..Default::default()
    };
    let summary = run_pipeline(&cfg, &Stage::ALL, opts).unwrap();
    assert!(summary.stages.iter().all(|s| s.1 == StageOutcome::Planned));
    assert!(!cfg.output_dir.exists());
}

#[test]
fn full_pipeline_artifacts_resume_and_staleness() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let summary = run_pipeline(&cfg, &Stage::ALL, PipelineOptions::default()).unwrap();
    assert!(summary.stages.iter().all(|s| s.1 == StageOutcome::Ran));
    let names = files(dir.path());
    let ckpts = names.iter().filter(|n| n.ends_with(".smf")).count();
    let csvs = names.iter().filter(|n| n.ends_with("_loss.csv")).count();
    assert_eq!(ckpts, 5, "{names:?}");
    assert_eq!(csvs, 3, "{names:?}");
    assert!(names.contains(&"metrics.csv".to_string()));
    assert_eq!(names.iter().filter(|n| n.ends_with(".svg")).count(), 3);

    // The distilled checkpoint loads for refinement with the matching fingerprint.
    let arch = ModelArch::Velocity(cfg.velocity_arch().unwrap());
    let (_, meta) = load_stage_checkpoint::<StudentModel<f32>>(&cfg, "student_stage1.smf", &arch).unwrap();
    assert_eq!(meta.fingerprint, cfg.stage_fingerprint(Stage::Distill));
    assert_eq!(meta.iteration, cfg.stage1.iterations);

    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,seed,value\n"));
    for key in [
        "teacher.sw,1,",
        "student_k1.sw,mean,",
        "refined_k2.sw,std,",
        "student_k1.diversity,2,",
    ] {
        assert!(metrics.contains(key), "{key}");
    }

    // Second run skips everything.
    let again = run_pipeline(&cfg, &Stage::ALL, PipelineOptions::default()).unwrap();
    assert!(again.stages.iter().all(|s| s.1 == StageOutcome::Skipped));

    // Rerunning eval reproduces the report byte for byte.
    let forced = PipelineOptions {
        force: true,
        ..Default::default()
    };
    run_pipeline(&cfg, &[Stage::Eval], forced).unwrap();
    assert_eq!(
        std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap(),
        metrics
    );

    // A changed stage-1 setting makes distill outputs stale.
    let mut changed = cfg.clone();
    changed.stage1.iterations += 1;
    match run_pipeline(&changed, &[Stage::Distill], PipelineOptions::default()) {
        Err(HarnessError::Stale { stage, .. }) => assert_eq!(stage, "distill"),
        other => panic!("{other:?}"),
    }
    match run_pipeline(&changed, &[Stage::Refine], PipelineOptions::default()) {
        Err(HarnessError::Stale { .. }) => {}
        other => panic!("{other:?}"),
    }
    // Teacher outputs do not depend on stage-1 settings.
    let t = run_pipeline(&changed, &[Stage::Teacher], PipelineOptions::default()).unwrap();
    assert_eq!(t.stages[0].1, StageOutcome::Skipped);
    assert_eq!(
        read_checkpoint_meta(&dir.path().join("teacher.smf"))
            .unwrap()
            .fingerprint,
        changed.stage_fingerprint(Stage::Teacher)
    );

    let s = sample_checkpoint(&cfg, SampleSource::Refined, 1, 5).unwrap();
    assert_eq!(s.shape(), (cfg.dataset.eval_size, 2));
    assert_eq!(s, sample_checkpoint(&cfg, SampleSource::Refined, 1, 5).unwrap());

    let diag = diagnose_isc(&cfg).unwrap();
    assert!(diag.student.unwrap().is_finite());
    let text = diag.to_string();
    assert!(text.contains("algorithm") && text.contains("prose"));
}
