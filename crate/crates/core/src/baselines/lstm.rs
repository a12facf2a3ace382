//! Autoregressive LSTM run independently per agent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{autoregress, hidden_is_finite, squared_error_term, sum_all_vars, DirectionalRun, StepOut};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::imputer::{assemble_imputation, Direction, ElboBreakdown, FusionMode, WindowData};
use crate::nn::{Linear, Lstm};
use crate::params::ParamStore;
use crate::tracking::{SequenceWindow, TrajectoryTensor, DIMS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmBaselineConfig {
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub bidirectional: bool,
    pub stop_grad_mixing: bool,
    pub position_scale: f64,
    pub init_seed: u64,
}

impl Default for LstmBaselineConfig {
    fn default() -> Self {
        LstmBaselineConfig {
            lstm_hidden: 64,
            lstm_layers: 2,
            bidirectional: false,
            stop_grad_mixing: false,
            position_scale: 10.0,
            init_seed: 0,
        }
    }
}

impl LstmBaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lstm_hidden == 0 || self.lstm_layers == 0 {
            return Err(Error::Config("LSTM sizes must be positive".into()));
        }
        if !(self.position_scale > 0.0 && self.position_scale.is_finite()) {
            return Err(Error::Config("position_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Cell {
    lstm: Lstm,
    head: Linear,
}

/// Shared-parameter LSTM with a linear displacement head. Parameter names
/// are `{fwd,bwd}.lstm.*` and `{fwd,bwd}.head.*`.
#[derive(Debug, Clone)]
pub struct LstmBaseline {
    pub config: LstmBaselineConfig,
    pub store: ParamStore,
    forward: Cell,
    backward: Option<Cell>,
}

impl LstmBaseline {
    pub fn new(config: LstmBaselineConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let mut cell = |store: &mut ParamStore, dir: Direction| {
            let p = dir.prefix();
            Cell {
                lstm: Lstm::new(store, &format!("{p}.lstm"), DIMS, config.lstm_hidden, config.lstm_layers, &mut rng),
                head: Linear::new(store, &format!("{p}.head"), config.lstm_hidden, DIMS, &mut rng),
            }
        };
        let forward = cell(&mut store, Direction::Forward);
        let backward = config.bidirectional.then(|| cell(&mut store, Direction::Backward));
        Ok(LstmBaseline {
            config,
            store,
            forward,
            backward,
        })
    }

    pub fn from_store(config: LstmBaselineConfig, store: ParamStore) -> Result<Self> {
        let mut model = LstmBaseline::new(config)?;
        crate::params::copy_matching(&mut model.store, &store)?;
        Ok(model)
    }

    fn run(&self, tape: &mut Tape, data: &WindowData, dir: Direction) -> Result<DirectionalRun> {
        let cell = match dir {
            Direction::Forward => &self.forward,
            Direction::Backward => self
                .backward
                .as_ref()
                .ok_or_else(|| Error::Config("model has no backward direction".into()))?,
        };
        let state = cell.lstm.zero_state(tape, data.n_agents());
        autoregress(tape, data, dir, self.config.stop_grad_mixing, state, |tape, t, next, mixed, state| {
            let state = cell.lstm.step(tape, mixed, &state);
            let h = state.top();
            hidden_is_finite(tape, h, t)?;
            let delta = cell.head.apply(tape, h);
            let recon = squared_error_term(tape, data, next, mixed, delta);
            Ok((state, StepOut { delta, recon, kl: None }))
        })
    }

    /// Negative half squared error of the predicted steps, summed over both
    /// directions.
    pub fn objective_on_tape(&self, tape: &mut Tape, data: &WindowData) -> Result<(Var, ElboBreakdown)> {
        let f = self.run(tape, data, Direction::Forward)?;
        let rf = sum_all_vars(tape, &f.recon);
        let mut total = rf;
        let mut recon_bwd = 0.0;
        if self.backward.is_some() {
            let b = self.run(tape, data, Direction::Backward)?;
            let rb = sum_all_vars(tape, &b.recon);
            recon_bwd = tape.value(rb).item();
            total = tape.add(rf, rb);
        }
        let breakdown = ElboBreakdown {
            recon_fwd: tape.value(rf).item(),
            recon_bwd,
            kl_fwd: 0.0,
            kl_bwd: 0.0,
            aux: 0.0,
            beta: 0.0,
            total: tape.value(total).item(),
        };
        Ok((total, breakdown))
    }

    pub fn impute(&self, window: &SequenceWindow, fusion: FusionMode) -> Result<TrajectoryTensor> {
        let data = WindowData::new(window, self.config.position_scale)?;
        let mut tape = Tape::new(&self.store);
        let f = self.run(&mut tape, &data, Direction::Forward)?.estimate_values(&tape);
        let b = match self.backward {
            Some(_) => Some(self.run(&mut tape, &data, Direction::Backward)?.estimate_values(&tape)),
            None => None,
        };
        assemble_imputation(window, &f, b.as_deref(), fusion, self.config.position_scale)
    }

    /// Directional estimates in model units, for inspection.
    pub fn directional_estimates(&self, window: &SequenceWindow, dir: Direction) -> Result<Vec<crate::linalg::Mat>> {
        let data = WindowData::new(window, self.config.position_scale)?;
        let mut tape = Tape::new(&self.store);
        Ok(self.run(&mut tape, &data, dir)?.estimate_values(&tape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::{AgentMeta, MaskTensor, PitchSpec, Team};

    fn window() -> SequenceWindow {
        let agents = vec![AgentMeta::new(Team::Home, "H1"), AgentMeta::new(Team::Away, "A1")];
        let values = (0..2 * 6 * 2).map(|k| 20.0 + k as f64 * 0.7).collect();
        let t = TrajectoryTensor::new(agents, 6, values, 25.0, PitchSpec::default()).unwrap();
        let m = MaskTensor::from_rows(&[vec![1, 0, 0, 1, 0, 1], vec![1, 1, 0, 0, 0, 1]]).unwrap();
        SequenceWindow::new(t, m, "w", 0).unwrap()
    }

    #[test]
    fn zero_head_holds_the_last_mixed_input() {
        let mut m = LstmBaseline::new(LstmBaselineConfig {
            lstm_hidden: 4,
            ..Default::default()
        })
        .unwrap();
        for name in ["fwd.head.w", "fwd.head.b"] {
            let id = m.store.id(name).unwrap();
            m.store.get_mut(id).data_mut().fill(0.0);
        }
        let w = window();
        let out = m.impute(&w, FusionMode::Mean).unwrap();
        assert_eq!(out.pos(0, 1), w.trajectory.pos(0, 0));
        assert_eq!(out.pos(0, 2), w.trajectory.pos(0, 0));
        assert_eq!(out.pos(0, 4), w.trajectory.pos(0, 3));
        assert_eq!(out.pos(1, 4), w.trajectory.pos(1, 1));
    }

    #[test]
    fn bidirectional_nearest_matches_forward_where_backward_gap_is_zero() {
        let cfg = LstmBaselineConfig {
            lstm_hidden: 4,
            bidirectional: true,
            ..Default::default()
        };
        let bi = LstmBaseline::new(cfg.clone()).unwrap();
        let uni = LstmBaseline::new(LstmBaselineConfig {
            bidirectional: false,
            ..cfg
        })
        .unwrap();
        let w = window();
        let a = bi.impute(&w, FusionMode::Nearest).unwrap();
        let b = uni.impute(&w, FusionMode::Nearest).unwrap();
        // Parameters of the forward direction are drawn first, so both
        // models share them.
        for i in 0..2 {
            for t in 0..6 {
                if w.mask.get(i, t) {
                    assert_eq!(a.pos(i, t), b.pos(i, t));
                }
            }
        }
        assert_eq!(bi.store.get(bi.store.id("fwd.head.w").unwrap()), uni.store.get(uni.store.id("fwd.head.w").unwrap()));
    }

    #[test]
    fn deterministic_and_objective_is_negative() {
        let m = LstmBaseline::new(LstmBaselineConfig {
            lstm_hidden: 4,
            bidirectional: true,
            ..Default::default()
        })
        .unwrap();
        let w = window();
        assert_eq!(m.impute(&w, FusionMode::Nearest).unwrap(), m.impute(&w, FusionMode::Nearest).unwrap());
        let data = WindowData::new(&w, 10.0).unwrap();
        let mut tape = Tape::new(&m.store);
        let (_, b) = m.objective_on_tape(&mut tape, &data).unwrap();
        assert!(b.total < 0.0 && b.recon_bwd < 0.0);
    }
}
