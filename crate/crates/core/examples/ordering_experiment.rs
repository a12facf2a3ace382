// Bidirectional Graph Imputer against the forward-only GVRNN and linear
// interpolation on camera-masked synthetic matches.
//
// ```text
// cargo run --release --example ordering_experiment            # smoke scale
// cargo run --release --example ordering_experiment -- desk    # reduced models, minutes to hours
// cargo run --release --example ordering_experiment -- full    # 2000 sequences, 5000 iterations, 3 seeds
// ```
//
// Results go to `<tmp>/graph-imputer-examples/ordering/<scale>`.

use std::path::PathBuf;

use graph_imputer::experiments::{ordering_experiment, OrderingConfig, OrderingOutcome};
use graph_imputer::train_eval::TrainConfig;

fn scale_config(scale: &str) -> Option<OrderingConfig> {
    let full = OrderingConfig::default();
    match scale {
        "full" => Some(full),
        "desk" => Some(OrderingConfig {
            n_sequences: 400,
            train: TrainConfig {
                iterations: 400,
                batch_size: 16,
                learning_rate: 3e-3,
                ..full.train.clone()
            },
            model_overrides: serde_json::json!({"lstm_hidden": 32, "lstm_layers": 1, "gn_hidden": 32, "z_dim": 8}),
            ..full
        }),
        "smoke" => Some(OrderingConfig {
            n_sequences: 12,
            frames: 20,
            players_per_team: 3,
            eval_fraction: 0.25,
            warmup_frames: 2,
            seeds: vec![0],
            n_samples: 2,
            train: TrainConfig {
                iterations: 3,
                batch_size: 2,
                ..full.train.clone()
            },
            model_overrides: serde_json::json!({"lstm_hidden": 8, "lstm_layers": 1, "gn_hidden": 8, "z_dim": 2}),
            ..full
        }),
        _ => None,
    }
}

fn out_dir(scale: &str) -> PathBuf {
    std::env::temp_dir().join("graph-imputer-examples").join("ordering").join(scale)
}

fn run(scale: &str) -> graph_imputer::Result<OrderingOutcome> {
    let cfg = scale_config(scale)
        .ok_or_else(|| graph_imputer::Error::Argument(format!("unknown scale {scale:?}; use smoke, desk or full")))?;
    let dir = out_dir(scale);
    std::fs::create_dir_all(&dir).map_err(|e| graph_imputer::Error::io(&dir, e))?;
    let outcome = ordering_experiment(&cfg, Some(&dir), |line| eprintln!("[{scale}] {line}"))?;
    let json = serde_json::to_string_pretty(&outcome)?;
    for (name, text) in [("outcome.json", json.as_str()), ("results.csv", outcome.table_csv.as_str())] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| graph_imputer::Error::io(&path, e))?;
    }
    Ok(outcome)
}

pub fn run_example() -> graph_imputer::Result<()> {
    let outcome = run("smoke")?;
    assert!(outcome.graph_imputer_nearest.is_finite() && outcome.gvrnn.is_finite());
    Ok(())
}

fn main() {
    let scale = std::env::args().nth(1).unwrap_or_else(|| "smoke".into());
    match run(&scale) {
        Ok(o) => {
            println!("{}", o.table_csv);
            println!("graph imputer (nearest) {:.4} m, (mean) {:.4} m", o.graph_imputer_nearest, o.graph_imputer_mean);
            println!("gvrnn {:.4} m, linear {:.4} m", o.gvrnn, o.linear);
            println!("(a) bidirectional < forward-only: {}", o.bidirectional_beats_forward);
            println!("(b) nearest <= mean fusion: {}", o.nearest_not_worse_than_mean);
            println!("(c) graph imputer <= linear: {}", o.beats_linear);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
