// Gap-weighted fusion of forward and backward estimates.
//
// Two frames after the last observation and eight before the next one, the
// forward sweep is trusted four times as much as the backward sweep.
//
// cargo run --release --example fusion

use graph_imputer::imputer::{fuse_mean, fuse_nearest, fusion_weights, gap_schedule};
use graph_imputer::tracking::MaskTensor;

pub fn run_example() -> graph_imputer::Result<()> {
    let (wf, wb) = fusion_weights(Some(8), Some(2))?;
    println!("tau forward 8, tau backward 2: x = {wf} * x_fwd + {wb} * x_bwd");

    let fwd = [40.0, 20.0];
    let bwd = [45.0, 22.0];
    println!("mean fusion    {:?}", fuse_mean(&fwd, &bwd));
    println!("nearest fusion {:?}", fuse_nearest(&fwd, &bwd, Some(8), Some(2))?);

    // One agent hidden for frames 1..=8 of a ten-frame window.
    let mask = MaskTensor::from_rows(&[vec![1, 0, 0, 0, 0, 0, 0, 0, 0, 1]])?;
    let gaps = gap_schedule(&mask)?;
    println!("frame  tau_fwd  tau_bwd  w_fwd  w_bwd");
    for t in 1..9 {
        let (f, b) = (gaps.forward(0, t), gaps.backward(0, t));
        let (wf, wb) = fusion_weights(f, b)?;
        println!("{t:5}  {:7}  {:7}  {wf:.3}  {wb:.3}", f.unwrap_or(0), b.unwrap_or(0));
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}
