// Every model kind trained on the same windows for the same budget, then
// tabulated by L2(Mean) and L2(Min).
//
// cargo run --release --example compare_baselines

use graph_imputer::camera::{make_mask, CameraConfig};
use graph_imputer::imputer::FusionMode;
use graph_imputer::model::{Model, ModelKind, ModelSpec};
use graph_imputer::synth::{generate_sequences, sequence_id, SynthConfig};
use graph_imputer::tracking::{split_train_eval, SequenceWindow};
use graph_imputer::train_eval::{l2_min_eval, results_text, train_run, EvalOptions, TrainConfig};

fn small_config(kind: ModelKind) -> serde_json::Value {
    match kind {
        ModelKind::Linear => serde_json::json!({}),
        ModelKind::GraphImputer | ModelKind::Gvrnn => {
            serde_json::json!({"lstm_hidden": 12, "lstm_layers": 1, "gn_hidden": 12, "z_dim": 3})
        }
        ModelKind::Lstm | ModelKind::BidirLstm => serde_json::json!({"lstm_hidden": 12, "lstm_layers": 1}),
        ModelKind::RoleInvariantRnn | ModelKind::RoleInvariantVrnn => {
            serde_json::json!({"lstm_hidden": 12, "lstm_layers": 1, "mlp_hidden": 12, "context_dim": 6, "z_dim": 3})
        }
    }
}

pub fn run_example() -> graph_imputer::Result<String> {
    let synth = SynthConfig {
        n_players_per_team: 2,
        duration_frames: 20,
        ..SynthConfig::default()
    };
    let cam = CameraConfig::broadcast_preset(&synth.pitch);
    let windows = generate_sequences(&synth, 16, 3)?
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let mask = make_mask(&t, &cam, 2)?;
            SequenceWindow::new(t, mask, sequence_id(i), 2)
        })
        .collect::<graph_imputer::Result<Vec<_>>>()?;
    let (train, eval) = split_train_eval(windows, 0.25, 3)?;
    let cfg = TrainConfig {
        iterations: 20,
        batch_size: 4,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };

    let mut reports = Vec::new();
    for kind in ModelKind::ALL {
        let mut model = Model::new(&ModelSpec {
            kind,
            config: small_config(kind),
        })?;
        if model.is_trainable() {
            train_run(&mut model, &train, &cfg, None)?;
        }
        let opts = EvalOptions {
            fusion: FusionMode::Nearest,
            ..EvalOptions::default()
        };
        let report = l2_min_eval(&model, &eval, &opts)?;
        for w in &report.warnings {
            eprintln!("{kind}: {w}");
        }
        reports.push(report);
    }
    let table = results_text(&reports)?;
    println!("{table}");
    Ok(table)
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}
