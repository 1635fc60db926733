use std::path::Path;

use llp::harness::{
    entropy_trace_report, mean_and_std, run_experiment, sweep, timing_profile, ExperimentConfig, SweepParam,
};
use llp::trainer::{Algorithm, FakeBatchPolicy, MetricTrace};
use llp::Error;

fn config(algo: Algorithm, out: &Path) -> ExperimentConfig {
    serde_json::from_value(serde_json::json!({
        "dataset": "blobs-800",
        "algo": algo.to_string(),
        "bag_size": 16,
        "epochs": 3,
        "seeds": [1, 2, 3],
        "out_dir": out,
        "hidden": 16,
        "noise_dim": 4,
    }))
    .unwrap()
}

#[test]
fn three_seeds_give_three_curves_and_a_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Algorithm::LlpGan, dir.path());
    cfg.plots = true;
    let report = run_experiment(&cfg).unwrap();
    assert!(report.complete);
    assert_eq!(report.runs.len(), 3);
    for (run, seed) in report.runs.iter().zip([1, 2, 3]) {
        assert_eq!(run.seed, seed);
        assert_eq!(run.curve.len(), 3);
        assert!(dir.path().join(format!("curves_{seed}.csv")).exists());
    }
    let finals: Vec<f64> = report.runs.iter().map(|r| r.final_error.unwrap()).collect();
    let (mean, std) = mean_and_std(&finals);
    assert_eq!(report.final_error_mean, mean);
    assert_eq!(report.final_error_std, std);

    let on_disk: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(on_disk.get("final_error_std").is_some());
    assert!(dir.path().join("error_curves.png").exists());

    let csv = std::fs::read_to_string(dir.path().join("curves_2.csv")).unwrap();
    let trace = MetricTrace::from_csv(&csv).unwrap();
    assert_eq!(trace.epoch_errors(), report.runs[1].curve);
}

#[test]
fn sweeps_give_one_summary_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Algorithm::LlpGan, dir.path());
    cfg.seeds = vec![0];
    cfg.epochs = 1;
    let report = sweep(&cfg, SweepParam::LambdaSup, &[0.1, 1.0, 4.0]).unwrap();
    assert_eq!(report.summaries.len(), 3);
    let lambdas: Vec<f64> = report.summaries.iter().map(|s| s.lambda_sup).collect();
    assert_eq!(lambdas, vec![0.1, 1.0, 4.0]);
    assert!(report.summaries.iter().all(|s| s.mean_curve.len() == 1));
    assert!(dir.path().join("curves_lambda_sup=4_0.csv").exists());
}

#[test]
fn reruns_agree_except_for_wallclock() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Algorithm::Dllp, dir.path());
    cfg.seeds = vec![4, 5];
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.without_wallclock(), b.without_wallclock());
}

#[test]
fn timing_rows_are_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Algorithm::LlpGan, dir.path());
    cfg.fake_batch = FakeBatchPolicy::AllTrainingPoints;
    let report = timing_profile(&cfg, &[500, 2000, 8000]).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.is_monotone(), "{:?}", report.rows);
    assert!((0.0..=1.0).contains(&report.r_squared));
    assert!(matches!(timing_profile(&cfg, &[500, 2000]), Err(Error::InvalidConfig(_))));
}

#[test]
fn dllp_entropy_trace_shrinks() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Algorithm::Dllp, dir.path());
    cfg.seeds = vec![7];
    cfg.epochs = 12;
    cfg.dataset = "blobs-1600".into();
    cfg.plots = true;
    let report = run_experiment(&cfg).unwrap();
    let curve = &report.runs[0].entropy_curve;
    assert_eq!(curve.len(), 12);
    assert!(curve.iter().all(|e| *e >= 0.0));
    assert!(curve.last() < curve.first(), "{curve:?}");
    assert!(dir.path().join("entropy_curves.png").exists());

    let trace = MetricTrace::from_csv(&std::fs::read_to_string(dir.path().join("curves_7.csv")).unwrap()).unwrap();
    let written = entropy_trace_report(&trace, dir.path().join("entropy.csv")).unwrap();
    assert_eq!(&written, curve);
    let text = std::fs::read_to_string(dir.path().join("entropy.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("epoch,entropy"));
    assert_eq!(text.lines().count(), 13);
}

#[test]
fn entropy_report_needs_an_entropy_column() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        entropy_trace_report(&MetricTrace::default(), dir.path().join("e.csv")),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn unknown_datasets_do_not_resolve() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Algorithm::Dllp, dir.path());
    cfg.dataset = "imagenet".into();
    assert!(matches!(run_experiment(&cfg), Err(Error::Resolution { .. })));
    cfg.dataset = "mnist".into();
    cfg.data_dir = Some(dir.path().join("missing"));
    assert!(matches!(run_experiment(&cfg), Err(Error::Resolution { .. })));
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Algorithm::Dllp, dir.path());
    cfg.seeds.clear();
    assert!(run_experiment(&cfg).is_err());
    let mut cfg = config(Algorithm::Dllp, dir.path());
    cfg.lambda_ent = -1.0;
    assert!(run_experiment(&cfg).is_err());
}
