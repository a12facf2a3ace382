#![allow(dead_code)]

use graph_imputer::camera::{make_mask, CameraConfig};
use graph_imputer::model::{Model, ModelKind, ModelSpec};
use graph_imputer::synth::{generate_sequences, SynthConfig};
use graph_imputer::tracking::SequenceWindow;

/// Camera-masked synthetic windows.
pub fn masked_windows(players_per_team: usize, frames: usize, count: usize, seed: u64, force_free: bool) -> Vec<SequenceWindow> {
    let mut cfg = SynthConfig {
        n_players_per_team: players_per_team,
        duration_frames: frames,
        ..SynthConfig::default()
    };
    if force_free {
        cfg = cfg.force_free();
    }
    let cam = CameraConfig::broadcast_preset(&cfg.pitch);
    generate_sequences(&cfg, count, seed)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let mask = make_mask(&t, &cam, 2).unwrap();
            SequenceWindow::new(t, mask, format!("{i:05}"), 2).unwrap()
        })
        .collect()
}

/// A model of `kind` small enough for quick tests.
pub fn tiny(kind: ModelKind, seed: u64) -> Model {
    let config = match kind {
        ModelKind::GraphImputer | ModelKind::Gvrnn => serde_json::json!({
            "lstm_hidden": 8, "lstm_layers": 1, "gn_hidden": 8, "z_dim": 2, "init_seed": seed
        }),
        ModelKind::Linear => serde_json::json!({}),
        ModelKind::Lstm | ModelKind::BidirLstm => serde_json::json!({"lstm_hidden": 8, "lstm_layers": 1, "init_seed": seed}),
        ModelKind::RoleInvariantRnn | ModelKind::RoleInvariantVrnn => serde_json::json!({
            "lstm_hidden": 8, "lstm_layers": 1, "mlp_hidden": 8, "context_dim": 4, "z_dim": 2, "init_seed": seed
        }),
    };
    Model::new(&ModelSpec { kind, config }).unwrap()
}
