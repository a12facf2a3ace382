mod common;

use common::{masked_windows, tiny};
use graph_imputer::baselines::linear_impute;
use graph_imputer::imputer::FusionMode;
use graph_imputer::model::{Model, ModelKind};
use graph_imputer::train_eval::{
    l2_eval, l2_min_eval, train_run, EvalOptions, MetricUnits, TrainConfig, FINAL_CHECKPOINT, METRICS_FILE,
};
use graph_imputer::Error;

fn quick(iterations: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size,
        learning_rate: 3e-3,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn identical_runs_log_identical_losses() {
    let windows = masked_windows(2, 12, 6, 1, false);
    let run = || {
        let mut m = tiny(ModelKind::GraphImputer, 0);
        let r = train_run(&mut m, &windows, &quick(4, 3), None).unwrap();
        (r.metrics, m.to_bytes().unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let windows = masked_windows(2, 12, 4, 2, false);
    for kind in [ModelKind::GraphImputer, ModelKind::BidirLstm, ModelKind::RoleInvariantVrnn] {
        let mut m = tiny(kind, 1);
        let before = m.to_bytes().unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..quick(3, 2)
        };
        train_run(&mut m, &windows, &cfg, None).unwrap();
        assert_eq!(m.to_bytes().unwrap(), before, "{kind}");
    }
}

#[test]
fn training_lowers_the_loss_of_every_trainable_kind() {
    let windows = masked_windows(2, 16, 12, 3, false);
    for kind in ModelKind::ALL.into_iter().filter(|&k| k != ModelKind::Linear) {
        let mut m = tiny(kind, 0);
        let r = train_run(&mut m, &windows, &quick(120, 6), None).unwrap();
        let first: f64 = r.metrics[..10].iter().map(|x| x.elbo_total).sum();
        let last: f64 = r.metrics[r.metrics.len() - 10..].iter().map(|x| x.elbo_total).sum();
        assert!(last > first, "{kind}: objective went from {first} to {last}");
    }
}

#[test]
fn train_writes_log_and_checkpoints_that_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let windows = masked_windows(2, 12, 4, 4, false);
    let mut m = tiny(ModelKind::GraphImputer, 0);
    let cfg = TrainConfig {
        checkpoint_every: 2,
        ..quick(5, 2)
    };
    let run = train_run(&mut m, &windows, &cfg, Some(dir.path())).unwrap();
    let names: Vec<String> = run
        .checkpoints
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["ckpt_000000.bin", "ckpt_000002.bin", "ckpt_000004.bin", FINAL_CHECKPOINT]);
    let log = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(log.lines().count(), 5);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["iteration", "elbo_total", "recon_fwd", "recon_bwd", "kl_fwd", "kl_bwd", "beta"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert_eq!(first["beta"], 0.1);

    let loaded = Model::load(dir.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(loaded.to_bytes().unwrap(), m.to_bytes().unwrap());
    let report = l2_min_eval(&loaded, &windows, &EvalOptions::default()).unwrap();
    assert!(report.l2_min <= report.l2_mean);
    assert!(report.l2_mean.is_finite());
}

#[test]
fn divergence_reports_the_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let windows = masked_windows(2, 12, 4, 4, false);
    let mut m = tiny(ModelKind::Lstm, 0);
    let cfg = TrainConfig {
        learning_rate: 1e300,
        ..quick(5, 2)
    };
    match train_run(&mut m, &windows, &cfg, Some(dir.path())) {
        Err(Error::Diverged { iteration, last_good, .. }) => {
            assert!(iteration >= 1);
            assert!(last_good.ends_with("ckpt_000000.bin"), "{last_good}");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn linear_model_cannot_be_trained() {
    let windows = masked_windows(2, 12, 2, 4, false);
    let mut m = Model::of_kind(ModelKind::Linear).unwrap();
    assert!(matches!(train_run(&mut m, &windows, &quick(1, 1), None), Err(Error::Argument(_))));
}

#[test]
fn single_sample_gives_equal_min_and_mean() {
    let windows = masked_windows(2, 12, 3, 6, false);
    let m = tiny(ModelKind::GraphImputer, 0);
    let opts = EvalOptions {
        n_samples: 1,
        ..Default::default()
    };
    let r = l2_min_eval(&m, &windows, &opts).unwrap();
    assert_eq!(r.l2_min, r.l2_mean);
}

#[test]
fn deterministic_models_warn_and_collapse() {
    let windows = masked_windows(2, 12, 3, 6, false);
    let m = tiny(ModelKind::Lstm, 0);
    let r = l2_min_eval(&m, &windows, &EvalOptions::default()).unwrap();
    assert_eq!(r.warnings.len(), 1);
    assert_eq!(r.l2_min, r.l2_mean);
    for s in &r.sequences {
        assert!(s.l2_samples.iter().all(|&x| x == s.l2_samples[0]));
    }
}

#[test]
fn eval_matches_a_direct_loop() {
    let windows = masked_windows(2, 12, 3, 8, false);
    let m = Model::of_kind(ModelKind::Linear).unwrap();
    let opts = EvalOptions {
        n_samples: 2,
        fusion: FusionMode::Mean,
        seed: 0,
        units: MetricUnits::Meters,
    };
    let r = l2_min_eval(&m, &windows, &opts).unwrap();
    let evaluated: Vec<_> = windows.iter().filter(|w| w.mask.count_unobserved() > 0).collect();
    let direct: f64 = evaluated
        .iter()
        .map(|w| l2_eval(&linear_impute(w).unwrap(), &w.trajectory, &w.mask).unwrap())
        .sum::<f64>()
        / evaluated.len() as f64;
    assert!((r.l2_mean - direct).abs() < 1e-12);
}
