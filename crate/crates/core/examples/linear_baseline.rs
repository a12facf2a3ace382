// Linear interpolation across occlusions. It is exact on force-free motion
// and only approximate once players steer and the ball is kicked.
//
// cargo run --release --example linear_baseline

use graph_imputer::camera::{make_mask, CameraConfig};
use graph_imputer::experiments::linear_l2;
use graph_imputer::synth::{generate_sequences, SynthConfig};
use graph_imputer::tracking::SequenceWindow;
use graph_imputer::train_eval::MetricUnits;

fn masked(cfg: &SynthConfig) -> graph_imputer::Result<Vec<SequenceWindow>> {
    let cam = CameraConfig::broadcast_preset(&cfg.pitch);
    generate_sequences(cfg, 10, 7)?
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let mask = make_mask(&t, &cam, 3)?;
            SequenceWindow::new(t, mask, format!("{i}"), 3)
        })
        .collect()
}

pub fn run_example() -> graph_imputer::Result<()> {
    let nonlinear = SynthConfig::default();
    let free = nonlinear.force_free();
    for (name, cfg) in [("force-free", free), ("social-force", nonlinear)] {
        let windows = masked(&cfg)?;
        let meters = linear_l2(&windows, MetricUnits::Meters)?;
        let normalized = linear_l2(&windows, MetricUnits::PitchNormalized)?;
        println!("{name:>12}: L2 {meters:.3e} m ({normalized:.3e} pitch-normalised)");
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}
