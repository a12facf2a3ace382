//! Comparison models: linear interpolation, per-agent autoregressive LSTMs
//! and the football-specific role-invariant recurrent models. The
//! forward-only graph model (GVRNN) is the Graph Imputer with
//! `bidirectional = false`; see [`crate::imputer::ImputerConfig::gvrnn`].

mod lstm;
mod role_invariant;

pub use lstm::{LstmBaseline, LstmBaselineConfig};
pub use role_invariant::{RoleIndex, RoleInvariantConfig, RoleInvariantModel};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::imputer::{Direction, WindowData};
use crate::linalg::Mat;
use crate::tracking::{SequenceWindow, TrajectoryTensor};

/// Fills every hidden stretch by straight-line interpolation between the
/// observations on either side. Stretches touching the start or end of the
/// window hold the nearest observation.
pub fn linear_impute(window: &SequenceWindow) -> Result<TrajectoryTensor> {
    window.mask.validate()?;
    let mut out = window.trajectory.clone();
    let frames = out.n_frames();
    for i in 0..out.n_agents() {
        let observed: Vec<usize> = (0..frames).filter(|&t| window.mask.get(i, t)).collect();
        for t in (0..frames).filter(|&t| !window.mask.get(i, t)) {
            let after = observed.partition_point(|&s| s < t);
            let prev = after.checked_sub(1).map(|k| observed[k]);
            let next = observed.get(after).copied();
            let p = match (prev, next) {
                (Some(a), Some(b)) => {
                    let (pa, pb) = (window.trajectory.pos(i, a), window.trajectory.pos(i, b));
                    let w = (t - a) as f64 / (b - a) as f64;
                    [pa[0] + w * (pb[0] - pa[0]), pa[1] + w * (pb[1] - pa[1])]
                }
                (Some(a), None) => window.trajectory.pos(i, a),
                (None, Some(b)) => window.trajectory.pos(i, b),
                (None, None) => unreachable!("mask validation guarantees an observation"),
            };
            out.set_pos(i, t, p);
        }
    }
    Ok(out)
}

/// Per-step output of a baseline cell.
pub(crate) struct StepOut {
    pub delta: Var,
    /// Log-likelihood (or negative half squared error) of the true step.
    pub recon: Var,
    pub kl: Option<Var>,
}

/// Tape handles of one autoregressive sweep.
pub(crate) struct DirectionalRun {
    pub estimates: Vec<Var>,
    pub recon: Vec<Var>,
    pub kl: Vec<Var>,
}

impl DirectionalRun {
    pub fn estimate_values(&self, tape: &Tape) -> Vec<Mat> {
        self.estimates.iter().map(|&v| tape.value(v).clone()).collect()
    }
}

/// Drives a recurrent cell over the window in `dir`: mixes ground truth
/// with the running estimate, asks the cell for a displacement and adds
/// it to the mixed input.
pub(crate) fn autoregress<S>(
    tape: &mut Tape,
    data: &WindowData,
    dir: Direction,
    stop_grad: bool,
    mut state: S,
    mut cell: impl FnMut(&mut Tape, usize, usize, Var, S) -> Result<(S, StepOut)>,
) -> Result<DirectionalRun> {
    if data.n_frames() < 2 {
        return Err(Error::Argument(format!(
            "window needs at least 2 frames, has {}",
            data.n_frames()
        )));
    }
    let order = data.sweep_order(dir);
    let init = tape.constant(data.initial_estimate(dir));
    let mut estimates = vec![init; data.n_frames()];
    let mut recon = Vec::new();
    let mut kl = Vec::new();
    for w in order.windows(2) {
        let (t, next) = (w[0], w[1]);
        let mixed = data.mix(tape, t, estimates[t], stop_grad);
        let (s, out) = cell(tape, t, next, mixed, state)?;
        state = s;
        if !tape.value(out.recon).item().is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite reconstruction term in the {dir} sweep at timestep {next}"
            )));
        }
        estimates[next] = tape.add(mixed, out.delta);
        recon.push(out.recon);
        kl.extend(out.kl);
    }
    Ok(DirectionalRun {
        estimates,
        recon,
        kl,
    })
}

/// `-0.5 * ||delta - (x_next - mixed)||^2`.
pub(crate) fn squared_error_term(
    tape: &mut Tape,
    data: &WindowData,
    next: usize,
    mixed: Var,
    delta: Var,
) -> Var {
    let truth = tape.constant(data.frames[next].clone());
    let target = tape.sub(truth, mixed);
    let diff = tape.sub(delta, target);
    let sq = tape.mul(diff, diff);
    let s = tape.sum_all(sq);
    tape.scale(s, -0.5)
}

pub(crate) fn hidden_is_finite(tape: &Tape, h: Var, t: usize) -> Result<()> {
    if tape.value(h).all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite hidden state at timestep {t}")))
    }
}

pub(crate) fn sum_all_vars(tape: &mut Tape, vars: &[Var]) -> Var {
    match vars.split_first() {
        None => tape.constant(Mat::scalar(0.0)),
        Some((&first, rest)) => rest.iter().fold(first, |acc, &v| tape.add(acc, v)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::{AgentMeta, MaskTensor, PitchSpec, Team};

    fn window(values: Vec<f64>, mask: Vec<Vec<u8>>) -> SequenceWindow {
        let n = mask.len();
        let frames = mask[0].len();
        let agents = (0..n).map(|i| AgentMeta::new(Team::Home, format!("H{i}"))).collect();
        let t = TrajectoryTensor::new(agents, frames, values, 25.0, PitchSpec::default()).unwrap();
        SequenceWindow::new(t, MaskTensor::from_rows(&mask).unwrap(), "w", 0).unwrap()
    }

    #[test]
    fn midpoint_of_a_gap() {
        let values = vec![0.0, 0.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 4.0, 0.0];
        let w = window(values, vec![vec![1, 0, 0, 0, 1]]);
        let out = linear_impute(&w).unwrap();
        assert_eq!(out.pos(0, 2), [2.0, 0.0]);
        assert_eq!(out.pos(0, 1), [1.0, 0.0]);
        assert_eq!(out.pos(0, 4), [4.0, 0.0]);
    }

    #[test]
    fn boundary_gaps_hold_and_observed_is_identity() {
        let values = vec![5.0, 5.0, 1.0, 2.0, 7.0, 7.0];
        let w = window(values.clone(), vec![vec![0, 1, 0]]);
        let out = linear_impute(&w).unwrap();
        assert_eq!(out.pos(0, 0), [1.0, 2.0]);
        assert_eq!(out.pos(0, 2), [1.0, 2.0]);
        let full = window(values, vec![vec![1, 1, 1]]);
        assert_eq!(linear_impute(&full).unwrap(), full.trajectory);
    }
}
