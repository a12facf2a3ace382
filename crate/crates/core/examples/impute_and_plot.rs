// Draw several imputations of one occluded sequence and plot them over the
// ground truth, as SVG and PNG.
//
// cargo run --release --example impute_and_plot

use std::path::PathBuf;

use graph_imputer::camera::{make_mask, CameraConfig};
use graph_imputer::imputer::FusionMode;
use graph_imputer::model::{Model, ModelKind, ModelSpec};
use graph_imputer::plot::{plot_sequence, PlotStyle};
use graph_imputer::synth::{generate_match, SynthConfig};
use graph_imputer::tracking::SequenceWindow;

pub fn run_example() -> graph_imputer::Result<Vec<PathBuf>> {
    let out = std::env::temp_dir().join("graph-imputer-examples").join("impute_and_plot");
    std::fs::create_dir_all(&out).map_err(|e| graph_imputer::Error::io(&out, e))?;
    let synth = SynthConfig {
        n_players_per_team: 5,
        duration_frames: 30,
        seed: 8,
        ..SynthConfig::default()
    };
    let traj = generate_match(&synth)?;
    let mask = make_mask(&traj, &CameraConfig::broadcast_preset(&synth.pitch), 4)?;
    let window = SequenceWindow::new(traj, mask, "demo", 4)?;

    let model = Model::new(&ModelSpec {
        kind: ModelKind::GraphImputer,
        config: serde_json::json!({"lstm_hidden": 16, "lstm_layers": 1, "gn_hidden": 16, "z_dim": 4, "init_seed": 3}),
    })?;
    let samples = model.impute(&window, 3, FusionMode::Nearest, 21)?;
    println!("{} samples for {} hidden positions", samples.len(), window.mask.count_unobserved());

    let mut written = Vec::new();
    for name in ["demo.svg", "demo.png"] {
        let path = out.join(name);
        plot_sequence(&path, &window, &samples, &PlotStyle::default())?;
        println!("wrote {}", path.display());
        written.push(path);
    }
    Ok(written)
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}
