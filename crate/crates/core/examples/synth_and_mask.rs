// Simulate matches, hide players outside a ball-tracking broadcast camera,
// and write the result as a tracking bundle.
//
// cargo run --release --example synth_and_mask

use std::path::PathBuf;

use graph_imputer::camera::{coverage_stats, make_mask, CameraConfig};
use graph_imputer::synth::{generate_sequences, sequence_id, SynthConfig};
use graph_imputer::tracking::{load_windows, save_bundle, BundleEntry};

pub fn run_example() -> graph_imputer::Result<PathBuf> {
    let out = std::env::temp_dir().join("graph-imputer-examples").join("synth_and_mask");
    let cfg = SynthConfig {
        duration_frames: 40,
        ..SynthConfig::default()
    };
    let cam = CameraConfig::broadcast_preset(&cfg.pitch);
    let warmup = 5;

    let mut entries = Vec::new();
    for (i, traj) in generate_sequences(&cfg, 5, 42)?.into_iter().enumerate() {
        let mask = make_mask(&traj, &cam, warmup)?;
        entries.push(BundleEntry {
            id: sequence_id(i),
            trajectory: traj,
            mask: Some(mask),
        });
    }
    save_bundle(&out, &entries, Some(warmup))?;

    let windows = load_windows(&out)?;
    let masks: Vec<_> = windows.iter().map(|w| &w.mask).collect();
    let ball = windows[0].trajectory.ball_index();
    let stats = coverage_stats(&masks, cfg.frame_rate_hz, ball, warmup)?;
    let agents = windows[0].trajectory.n_agents();
    println!("{} sequences of {agents} agents written to {}", windows.len(), out.display());
    println!(
        "players in frame: {:.1} ± {:.1}, visible runs: {:.1} ± {:.1} s",
        stats.mean_in_frame, stats.std_in_frame, stats.mean_visible_run_s, stats.std_visible_run_s
    );
    for w in &windows {
        let hidden = w.mask.count_unobserved();
        println!("  {}: {hidden} hidden positions", w.source_id);
    }
    Ok(out)
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}
