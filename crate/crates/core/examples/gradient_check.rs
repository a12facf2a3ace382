// Reverse-mode gradients of the ELBO against central differences for a few
// parameter groups of a small Graph Imputer.
//
// cargo run --release --example gradient_check

use graph_imputer::autodiff::Tape;
use graph_imputer::imputer::{elbo_on_tape, seeded_noise, ImputerConfig, ImputerParams, TrainObjectiveConfig, WindowData};
use graph_imputer::synth::{generate_match, SynthConfig};
use graph_imputer::tracking::{MaskTensor, SequenceWindow};

fn objective(params: &ImputerParams, data: &WindowData) -> graph_imputer::Result<f64> {
    let mut tape = Tape::new(&params.store);
    let (_, e) = elbo_on_tape(
        &mut tape,
        params,
        data,
        TrainObjectiveConfig::posterior(0.5),
        &mut seeded_noise(1, 0, 0),
        &mut seeded_noise(1, 0, 1),
    )?;
    Ok(e.total)
}

pub fn run_example() -> graph_imputer::Result<f64> {
    let synth = SynthConfig {
        n_players_per_team: 1,
        duration_frames: 6,
        seed: 4,
        ..SynthConfig::default()
    };
    let traj = generate_match(&synth)?;
    let mask = MaskTensor::from_fn(traj.n_agents(), traj.n_frames(), |i, t| i == 0 || t % 3 == 0 || t == 5);
    let window = SequenceWindow::new(traj, mask, "check", 0)?;
    let params = ImputerParams::new(ImputerConfig {
        lstm_hidden: 6,
        lstm_layers: 1,
        gn_hidden: 6,
        z_dim: 2,
        init_seed: 5,
        ..ImputerConfig::default()
    })?;
    let data = WindowData::new(&window, params.config.position_scale)?;

    let mut tape = Tape::new(&params.store);
    let (total, _) = elbo_on_tape(
        &mut tape,
        &params,
        &data,
        TrainObjectiveConfig::posterior(0.5),
        &mut seeded_noise(1, 0, 0),
        &mut seeded_noise(1, 0, 1),
    )?;
    let grads = tape.backward(total);

    let eps = 1e-5;
    let mut work = params.clone();
    let mut worst = 0.0f64;
    for name in ["fwd.lstm.l0.w_ih", "fwd.dec.edge.l0.w_send", "bwd.enc.node.l2.w", "bwd.prior.node.l2.b"] {
        let id = params.store.id(name).expect("parameter exists");
        let k = params.store.get(id).data().len() / 2;
        let orig = params.store.get(id).data()[k];
        work.store.get_mut(id).data_mut()[k] = orig + eps;
        let up = objective(&work, &data)?;
        work.store.get_mut(id).data_mut()[k] = orig - eps;
        let down = objective(&work, &data)?;
        work.store.get_mut(id).data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads.get(id).data()[k];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        println!("{name:>24}[{k}]: analytic {analytic:+.8e}, numeric {numeric:+.8e}, relative error {rel:.1e}");
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn main() {
    match run_example() {
        Ok(worst) => println!("worst relative error {worst:.1e}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
