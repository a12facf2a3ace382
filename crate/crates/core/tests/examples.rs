//! Every example runs to completion.

macro_rules! example {
    ($module:ident, $file:literal) => {
        #[allow(dead_code)]
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }
    };
}

example!(synth_and_mask, "synth_and_mask.rs");
example!(camera_view, "camera_view.rs");
example!(fusion, "fusion.rs");
example!(linear_baseline, "linear_baseline.rs");
example!(train_graph_imputer, "train_graph_imputer.rs");
example!(impute_and_plot, "impute_and_plot.rs");
example!(compare_baselines, "compare_baselines.rs");
example!(gradient_check, "gradient_check.rs");
example!(ordering_experiment, "ordering_experiment.rs");

#[test]
fn synth_and_mask_writes_a_loadable_bundle() {
    let dir = synth_and_mask::run_example().unwrap();
    assert_eq!(graph_imputer::tracking::load_windows(dir).unwrap().len(), 5);
}

#[test]
fn camera_view_runs() {
    camera_view::run_example().unwrap();
}

#[test]
fn fusion_runs() {
    fusion::run_example().unwrap();
}

#[test]
fn linear_baseline_runs() {
    linear_baseline::run_example().unwrap();
}

#[test]
fn train_graph_imputer_writes_checkpoints() {
    let dir = train_graph_imputer::run_example().unwrap();
    assert!(dir.join("model.bin").exists());
    assert!(dir.join("ckpt_000010.bin").exists());
}

#[test]
fn impute_and_plot_writes_both_formats() {
    for path in impute_and_plot::run_example().unwrap() {
        assert!(std::fs::metadata(path).unwrap().len() > 0);
    }
}

#[test]
fn compare_baselines_lists_every_model() {
    let table = compare_baselines::run_example().unwrap();
    for kind in graph_imputer::model::ModelKind::ALL {
        assert!(table.contains(kind.as_str()), "{kind} missing from\n{table}");
    }
}

#[test]
fn gradient_check_agrees() {
    assert!(gradient_check::run_example().unwrap() < 1e-5);
}

#[test]
fn ordering_experiment_smoke_scale_runs() {
    ordering_experiment::run_example().unwrap();
}
