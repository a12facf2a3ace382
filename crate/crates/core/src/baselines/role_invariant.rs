//! Football-specific recurrent models that pool hidden states per team.
//!
//! One LSTM with shared parameters runs over every entity. Hidden states
//! are summed within each team, and an MLP over `ball ‖ home sum ‖ away
//! sum` gives a game context. Each entity's own state concatenated with the
//! game context feeds either an MLP head or a small VAE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{autoregress, hidden_is_finite, squared_error_term, sum_all_vars, DirectionalRun, StepOut};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::imputer::{
    assemble_imputation, seeded_noise, Direction, ElboBreakdown, FusionMode, NoiseSource, SamplingMode,
    WindowData,
};
use crate::linalg::Mat;
use crate::nn::{Lstm, Mlp};
use crate::params::ParamStore;
use crate::tracking::{AgentMeta, SequenceWindow, Team, TrajectoryTensor, DIMS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoleInvariantConfig {
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub mlp_hidden: usize,
    pub context_dim: usize,
    pub z_dim: usize,
    /// VAE head (`role_invariant_vrnn`) instead of an MLP head.
    pub variational: bool,
    pub skip_connection: bool,
    pub bidirectional: bool,
    pub log_sigma_min: f64,
    pub log_sigma_max: f64,
    pub decoder_mean: bool,
    pub stop_grad_mixing: bool,
    pub position_scale: f64,
    pub init_seed: u64,
}

impl Default for RoleInvariantConfig {
    fn default() -> Self {
        RoleInvariantConfig {
            lstm_hidden: 64,
            lstm_layers: 2,
            mlp_hidden: 64,
            context_dim: 64,
            z_dim: 16,
            variational: true,
            skip_connection: true,
            bidirectional: false,
            log_sigma_min: -7.0,
            log_sigma_max: 2.0,
            decoder_mean: false,
            stop_grad_mixing: false,
            position_scale: 10.0,
            init_seed: 0,
        }
    }
}

impl RoleInvariantConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lstm_hidden", self.lstm_hidden),
            ("lstm_layers", self.lstm_layers),
            ("mlp_hidden", self.mlp_hidden),
            ("context_dim", self.context_dim),
            ("z_dim", self.z_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.log_sigma_min < self.log_sigma_max) {
            return Err(Error::Config("log_sigma_min must be below log_sigma_max".into()));
        }
        if !(self.position_scale > 0.0 && self.position_scale.is_finite()) {
            return Err(Error::Config("position_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Agent indices by role, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleIndex {
    pub ball: usize,
    pub home: Vec<usize>,
    pub away: Vec<usize>,
}

impl RoleIndex {
    pub fn from_agents(agents: &[AgentMeta]) -> Result<Self> {
        let of = |team| -> Vec<usize> {
            agents
                .iter()
                .enumerate()
                .filter(|(_, a)| a.team == team)
                .map(|(i, _)| i)
                .collect()
        };
        let (balls, home, away) = (of(Team::Ball), of(Team::Home), of(Team::Away));
        if balls.len() != 1 || home.is_empty() || away.is_empty() {
            return Err(Error::Config(format!(
                "role-invariant models need one ball and two non-empty teams, found {} balls, {} home, {} away",
                balls.len(),
                home.len(),
                away.len()
            )));
        }
        Ok(RoleIndex {
            ball: balls[0],
            home,
            away,
        })
    }
}

#[derive(Debug, Clone)]
enum Head {
    Mlp(Mlp),
    Vae { prior: Mlp, encoder: Mlp, decoder: Mlp },
}

#[derive(Debug, Clone)]
struct Cell {
    lstm: Lstm,
    context: Mlp,
    head: Head,
}

/// Role-invariant RNN or VRNN, uni- or bidirectional.
#[derive(Debug, Clone)]
pub struct RoleInvariantModel {
    pub config: RoleInvariantConfig,
    pub store: ParamStore,
    forward: Cell,
    backward: Option<Cell>,
}

impl RoleInvariantModel {
    pub fn new(config: RoleInvariantConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let c = &config;
        let (h, m, ctx) = (c.lstm_hidden, c.mlp_hidden, c.context_dim);
        let mut cell = |store: &mut ParamStore, dir: Direction| {
            let p = dir.prefix();
            let lstm = Lstm::new(store, &format!("{p}.lstm"), DIMS, h, c.lstm_layers, &mut rng);
            let context = Mlp::new(store, &format!("{p}.context"), &[3 * h, m, ctx], &mut rng);
            let head = if c.variational {
                let dec_in = c.z_dim + if c.skip_connection { h + ctx } else { 0 };
                Head::Vae {
                    prior: Mlp::new(store, &format!("{p}.prior"), &[h + ctx, m, m, 2 * c.z_dim], &mut rng),
                    encoder: Mlp::new(store, &format!("{p}.enc"), &[DIMS + h + ctx, m, m, 2 * c.z_dim], &mut rng),
                    decoder: Mlp::new(store, &format!("{p}.dec"), &[dec_in, m, m, 2 * DIMS], &mut rng),
                }
            } else {
                Head::Mlp(Mlp::new(store, &format!("{p}.head"), &[h + ctx, m, m, DIMS], &mut rng))
            };
            Cell { lstm, context, head }
        };
        let forward = cell(&mut store, Direction::Forward);
        let backward = config.bidirectional.then(|| cell(&mut store, Direction::Backward));
        Ok(RoleInvariantModel {
            config,
            store,
            forward,
            backward,
        })
    }

    pub fn from_store(config: RoleInvariantConfig, store: ParamStore) -> Result<Self> {
        let mut model = RoleInvariantModel::new(config)?;
        crate::params::copy_matching(&mut model.store, &store)?;
        Ok(model)
    }

    pub fn is_variational(&self) -> bool {
        self.config.variational
    }

    fn head_split(&self, tape: &mut Tape, out: Var, k: usize) -> (Var, Var) {
        let mu = tape.slice_cols(out, 0, k);
        let raw = tape.slice_cols(out, k, k);
        let ls = tape.clamp(raw, self.config.log_sigma_min, self.config.log_sigma_max);
        (mu, ls)
    }

    fn sample(tape: &mut Tape, mu: Var, ls: Var, eps: Mat) -> Var {
        let s = tape.exp(ls);
        let n = tape.mul_const(s, eps);
        tape.add(mu, n)
    }

    fn run(
        &self,
        tape: &mut Tape,
        data: &WindowData,
        roles: &RoleIndex,
        dir: Direction,
        mode: SamplingMode,
        noise: &mut dyn NoiseSource,
    ) -> Result<DirectionalRun> {
        let cell = match dir {
            Direction::Forward => &self.forward,
            Direction::Backward => self
                .backward
                .as_ref()
                .ok_or_else(|| Error::Config("model has no backward direction".into()))?,
        };
        let n = data.n_agents();
        let cfg = &self.config;
        let state = cell.lstm.zero_state(tape, n);
        autoregress(tape, data, dir, cfg.stop_grad_mixing, state, |tape, t, next, mixed, state| {
            let state = cell.lstm.step(tape, mixed, &state);
            let h = state.top();
            hidden_is_finite(tape, h, t)?;
            let ball = tape.select_rows(h, vec![roles.ball]);
            let home = tape.sum_rows_sorted(h, roles.home.clone());
            let away = tape.sum_rows_sorted(h, roles.away.clone());
            let pooled = tape.concat_cols(&[ball, home, away]);
            let game = cell.context.apply(tape, pooled);
            let game_rows = tape.select_rows(game, vec![0; n]);
            let ctx = tape.concat_cols(&[h, game_rows]);
            let out = match &cell.head {
                Head::Mlp(mlp) => {
                    let delta = mlp.apply(tape, ctx);
                    let recon = squared_error_term(tape, data, next, mixed, delta);
                    StepOut { delta, recon, kl: None }
                }
                Head::Vae { prior, encoder, decoder } => {
                    let p_out = prior.apply(tape, ctx);
                    let (mu_p, ls_p) = self.head_split(tape, p_out, cfg.z_dim);
                    let q = match mode {
                        SamplingMode::Posterior => {
                            let target = tape.constant(data.frames[next].clone());
                            let e_in = tape.concat_cols(&[target, ctx]);
                            let e_out = encoder.apply(tape, e_in);
                            Some(self.head_split(tape, e_out, cfg.z_dim))
                        }
                        SamplingMode::Prior => None,
                    };
                    let (mu_z, ls_z) = q.unwrap_or((mu_p, ls_p));
                    let z = Self::sample(tape, mu_z, ls_z, noise.standard_normal(n, cfg.z_dim));
                    let d_in = if cfg.skip_connection { tape.concat_cols(&[z, ctx]) } else { z };
                    let d_out = decoder.apply(tape, d_in);
                    let (mu_d, ls_d) = self.head_split(tape, d_out, DIMS);
                    let eps = noise.standard_normal(n, DIMS);
                    let delta = if mode == SamplingMode::Prior && cfg.decoder_mean {
                        mu_d
                    } else {
                        Self::sample(tape, mu_d, ls_d, eps)
                    };
                    let truth = tape.constant(data.frames[next].clone());
                    let target = tape.sub(truth, mixed);
                    let recon = tape.gauss_log_lik(mu_d, ls_d, target);
                    let kl = q.map(|(mq, lq)| tape.gauss_kl(mq, lq, mu_p, ls_p));
                    StepOut { delta, recon, kl }
                }
            };
            Ok((state, out))
        })
    }

    /// ELBO for the VAE head, negative half squared error for the MLP head.
    pub fn objective_on_tape(
        &self,
        tape: &mut Tape,
        data: &WindowData,
        roles: &RoleIndex,
        beta: f64,
        noise_fwd: &mut dyn NoiseSource,
        noise_bwd: &mut dyn NoiseSource,
    ) -> Result<(Var, ElboBreakdown)> {
        let mode = SamplingMode::Posterior;
        let mut runs = vec![self.run(tape, data, roles, Direction::Forward, mode, noise_fwd)?];
        if self.backward.is_some() {
            runs.push(self.run(tape, data, roles, Direction::Backward, mode, noise_bwd)?);
        }
        let mut recon = [0.0; 2];
        let mut kl = [0.0; 2];
        let mut total: Option<Var> = None;
        for (k, run) in runs.iter().enumerate() {
            let r = sum_all_vars(tape, &run.recon);
            let q = sum_all_vars(tape, &run.kl);
            recon[k] = tape.value(r).item();
            kl[k] = tape.value(q).item();
            let mut term = r;
            if beta != 0.0 && !run.kl.is_empty() {
                let w = tape.scale(q, -beta);
                term = tape.add(r, w);
            }
            total = Some(match total {
                Some(acc) => tape.add(acc, term),
                None => term,
            });
        }
        let total = total.expect("at least one direction");
        let breakdown = ElboBreakdown {
            recon_fwd: recon[0],
            recon_bwd: recon[1],
            kl_fwd: kl[0],
            kl_bwd: kl[1],
            aux: 0.0,
            beta,
            total: tape.value(total).item(),
        };
        if !breakdown.total.is_finite() {
            return Err(Error::Numeric("non-finite objective".into()));
        }
        Ok((total, breakdown))
    }

    pub fn impute_with_noise(
        &self,
        window: &SequenceWindow,
        fusion: FusionMode,
        noise_fwd: &mut dyn NoiseSource,
        noise_bwd: &mut dyn NoiseSource,
    ) -> Result<TrajectoryTensor> {
        let roles = RoleIndex::from_agents(window.trajectory.agents())?;
        let data = WindowData::new(window, self.config.position_scale)?;
        let mut tape = Tape::new(&self.store);
        let f = self
            .run(&mut tape, &data, &roles, Direction::Forward, SamplingMode::Prior, noise_fwd)?
            .estimate_values(&tape);
        let b = match self.backward {
            Some(_) => Some(
                self.run(&mut tape, &data, &roles, Direction::Backward, SamplingMode::Prior, noise_bwd)?
                    .estimate_values(&tape),
            ),
            None => None,
        };
        assemble_imputation(window, &f, b.as_deref(), fusion, self.config.position_scale)
    }

    pub fn impute(
        &self,
        window: &SequenceWindow,
        n_samples: usize,
        fusion: FusionMode,
        seed: u64,
    ) -> Result<Vec<TrajectoryTensor>> {
        if n_samples == 0 {
            return Err(Error::Argument("n_samples must be at least 1".into()));
        }
        (0..n_samples as u64)
            .map(|s| {
                let mut nf = seeded_noise(seed, s, Direction::Forward.stream());
                let mut nb = seeded_noise(seed, s, Direction::Backward.stream());
                self.impute_with_noise(window, fusion, &mut nf, &mut nb)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imputer::{RecordingNoise, ReplayNoise};
    use crate::tracking::{football_roster, MaskTensor, PitchSpec};

    fn small(variational: bool, bidirectional: bool) -> RoleInvariantModel {
        RoleInvariantModel::new(RoleInvariantConfig {
            lstm_hidden: 5,
            mlp_hidden: 6,
            context_dim: 4,
            z_dim: 2,
            variational,
            bidirectional,
            ..Default::default()
        })
        .unwrap()
    }

    fn window() -> SequenceWindow {
        let agents = football_roster(3);
        let n = agents.len();
        let frames = 6;
        let values = (0..n * frames * 2)
            .map(|k| 30.0 + ((k * 37) % 23) as f64 + 0.1 * k as f64)
            .collect();
        let t = TrajectoryTensor::new(agents, frames, values, 25.0, PitchSpec::default()).unwrap();
        let mask = MaskTensor::from_fn(n, frames, |i, f| i == 0 || f == 0 || f == frames - 1 || (i + f) % 3 == 0);
        SequenceWindow::new(t, mask, "w", 1).unwrap()
    }

    fn swap(w: &SequenceWindow, a: usize, b: usize) -> (SequenceWindow, Vec<usize>) {
        let mut perm: Vec<usize> = (0..w.trajectory.n_agents()).collect();
        perm.swap(a, b);
        let mut t = w.trajectory.permute_agents(&perm);
        // Keep labels in place so only positions move.
        t = TrajectoryTensor::new(w.trajectory.agents().to_vec(), t.n_frames(), t.values().to_vec(), 25.0, t.pitch())
            .unwrap();
        (SequenceWindow::new(t, w.mask.permute_agents(&perm), "s", 1).unwrap(), perm)
    }

    #[test]
    fn swapping_teammates_swaps_outputs_exactly() {
        let m = small(false, true);
        let w = window();
        let out = m.impute(&w, 1, FusionMode::Nearest, 0).unwrap().remove(0);
        // Agents 1..=3 are the home team.
        let (sw, perm) = swap(&w, 1, 3);
        let sout = m.impute(&sw, 1, FusionMode::Nearest, 0).unwrap().remove(0);
        for i in 0..w.trajectory.n_agents() {
            for t in 0..6 {
                assert_eq!(sout.pos(i, t), out.pos(perm[i], t), "agent {i} frame {t}");
            }
        }
    }

    #[test]
    fn vae_swap_with_permuted_noise_is_exact() {
        let m = small(true, false);
        let w = window();
        let mut rec = RecordingNoise::new(seeded_noise(4, 0, 0));
        let out = m.impute_with_noise(&w, FusionMode::Mean, &mut rec, &mut seeded_noise(4, 0, 1)).unwrap();
        let (sw, perm) = swap(&w, 4, 6);
        let mut replay = ReplayNoise::new(rec.draws.iter().map(|d| d.select_rows(&perm)).collect());
        let sout = m.impute_with_noise(&sw, FusionMode::Mean, &mut replay, &mut seeded_noise(4, 0, 1)).unwrap();
        for i in 0..w.trajectory.n_agents() {
            for t in 0..6 {
                assert_eq!(sout.pos(i, t), out.pos(perm[i], t));
            }
        }
    }

    #[test]
    fn rnn_is_deterministic() {
        let m = small(false, false);
        let w = window();
        assert_eq!(m.impute(&w, 1, FusionMode::Mean, 0).unwrap(), m.impute(&w, 1, FusionMode::Mean, 9).unwrap());
    }

    #[test]
    fn missing_roles_are_a_config_error() {
        let m = small(false, false);
        let w = window();
        let agents: Vec<AgentMeta> = w.trajectory.agents().iter().map(|a| AgentMeta { team: Team::Home, ..a.clone() }).collect();
        let t = TrajectoryTensor::new_unchecked(agents, 6, w.trajectory.values().to_vec(), 25.0, PitchSpec::default()).unwrap();
        let bad = SequenceWindow::new(t, w.mask.clone(), "bad", 1).unwrap();
        assert!(matches!(m.impute(&bad, 1, FusionMode::Mean, 0), Err(Error::Config(_))));
    }

    #[test]
    fn vae_objective_has_nonnegative_kl() {
        let m = small(true, true);
        let w = window();
        let roles = RoleIndex::from_agents(w.trajectory.agents()).unwrap();
        let data = WindowData::new(&w, 10.0).unwrap();
        let mut tape = Tape::new(&m.store);
        let (_, b) = m
            .objective_on_tape(&mut tape, &data, &roles, 0.5, &mut seeded_noise(1, 0, 0), &mut seeded_noise(1, 0, 1))
            .unwrap();
        assert!(b.kl_fwd >= 0.0 && b.kl_bwd >= 0.0);
        assert!(b.total.is_finite());
    }
}
