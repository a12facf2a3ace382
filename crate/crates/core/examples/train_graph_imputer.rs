// Train a small Graph Imputer with β annealing, keep checkpoints, reload the
// final one and evaluate it against linear interpolation.
//
// cargo run --release --example train_graph_imputer

use std::path::PathBuf;

use graph_imputer::camera::{make_mask, CameraConfig};
use graph_imputer::model::{Model, ModelKind, ModelSpec};
use graph_imputer::synth::{generate_sequences, sequence_id, SynthConfig};
use graph_imputer::tracking::{split_train_eval, SequenceWindow};
use graph_imputer::train_eval::{l2_min_eval, results_text, train_run, EvalOptions, TrainConfig, FINAL_CHECKPOINT};

pub fn run_example() -> graph_imputer::Result<PathBuf> {
    let out = std::env::temp_dir().join("graph-imputer-examples").join("train_graph_imputer");
    let synth = SynthConfig {
        n_players_per_team: 3,
        duration_frames: 24,
        ..SynthConfig::default()
    };
    let cam = CameraConfig::broadcast_preset(&synth.pitch);
    let windows = generate_sequences(&synth, 24, 1)?
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let mask = make_mask(&t, &cam, 3)?;
            SequenceWindow::new(t, mask, sequence_id(i), 3)
        })
        .collect::<graph_imputer::Result<Vec<_>>>()?;
    let (train, eval) = split_train_eval(windows, 0.25, 1)?;

    let spec = ModelSpec {
        kind: ModelKind::GraphImputer,
        config: serde_json::json!({"lstm_hidden": 16, "lstm_layers": 1, "gn_hidden": 16, "z_dim": 4}),
    };
    let mut model = Model::new(&spec)?;
    let cfg = TrainConfig {
        iterations: 30,
        batch_size: 4,
        learning_rate: 3e-3,
        checkpoint_every: 10,
        ..TrainConfig::default()
    };
    let run = train_run(&mut model, &train, &cfg, Some(&out))?;
    for m in run.metrics.iter().step_by(10) {
        println!(
            "iteration {:3}: objective {:9.2} (recon {:8.2} + {:8.2}, KL {:6.2} + {:6.2}, beta {:.3})",
            m.iteration, m.elbo_total, m.recon_fwd, m.recon_bwd, m.kl_fwd, m.kl_bwd, m.beta
        );
    }
    for p in &run.checkpoints {
        println!("checkpoint {}", p.display());
    }

    let reloaded = Model::load(out.join(FINAL_CHECKPOINT))?;
    assert_eq!(reloaded.to_bytes()?, model.to_bytes()?);
    let opts = EvalOptions::default();
    let reports = vec![
        l2_min_eval(&reloaded, &eval, &opts)?,
        l2_min_eval(&Model::of_kind(ModelKind::Linear)?, &eval, &opts)?,
    ];
    println!("{}", results_text(&reports)?);
    Ok(out)
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}
