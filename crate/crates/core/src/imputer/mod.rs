//! The Graph Imputer: bidirectional autoregressive variational graph
//! networks.
//!
//! Each direction runs an LSTM shared across agents over the mixed input
//! (ground truth where observed, the model's own estimate elsewhere). Graph
//! networks turn the hidden states into a prior over a latent `z`, an
//! encoder posterior (training only) and a Gaussian over the per-step
//! displacement. Sampled displacements are accumulated onto the mixed input
//! to give the next estimate. At unobserved steps the forward and backward
//! estimates are fused.
//!
//! Positions are divided by [`ImputerConfig::position_scale`] before they
//! enter the networks and multiplied back afterwards.

pub mod fusion;
pub mod noise;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph_net::{GnConfig, GraphNet, GraphTopology};
use crate::linalg::Mat;
use crate::nn::{Lstm, LstmState};
use crate::params::ParamStore;
use crate::tracking::{SequenceWindow, TrajectoryTensor, DIMS};

pub use fusion::{
    fuse_mean, fuse_nearest, fusion_weights, gap_schedule, FusionMode, GapSchedule,
};
pub use noise::{seeded_noise, NoiseSource, RecordingNoise, ReplayNoise, RngNoise, ZeroNoise};

/// Hyperparameters and ablation flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputerConfig {
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub gn_hidden: usize,
    pub z_dim: usize,
    /// Feed the LSTM state to the decoder alongside `z`.
    pub skip_connection: bool,
    /// Give the decoder graph one extra sender-only node per agent carrying
    /// the observations of the step being predicted.
    pub next_step_cond_decoder: bool,
    /// Run the backward sweep and fuse. Off gives the forward-only GVRNN.
    pub bidirectional: bool,
    /// Node update sees its own input features as well as the aggregate.
    pub node_uses_input: bool,
    pub log_sigma_min: f64,
    pub log_sigma_max: f64,
    /// Block gradients through the model's own estimates in the mixing step.
    pub stop_grad_mixing: bool,
    /// Add a squared-error term on the fused estimate to the training loss.
    pub fused_aux_loss: bool,
    /// At evaluation time use the decoder mean instead of a draw.
    pub decoder_mean: bool,
    /// Meters per model unit.
    pub position_scale: f64,
    pub init_seed: u64,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        ImputerConfig {
            lstm_hidden: 64,
            lstm_layers: 2,
            gn_hidden: 64,
            z_dim: 16,
            skip_connection: true,
            next_step_cond_decoder: false,
            bidirectional: true,
            node_uses_input: false,
            log_sigma_min: -7.0,
            log_sigma_max: 2.0,
            stop_grad_mixing: false,
            fused_aux_loss: false,
            decoder_mean: false,
            position_scale: 10.0,
            init_seed: 0,
        }
    }
}

impl ImputerConfig {
    /// The forward-only configuration.
    pub fn gvrnn() -> Self {
        ImputerConfig {
            bidirectional: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lstm_hidden", self.lstm_hidden),
            ("lstm_layers", self.lstm_layers),
            ("gn_hidden", self.gn_hidden),
            ("z_dim", self.z_dim),
        ];
        for (name, v) in positive {
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
        if self.fused_aux_loss && !self.bidirectional {
            return Err(Error::Config("fused_aux_loss needs a bidirectional model".into()));
        }
        Ok(())
    }

    fn decoder_in_dim(&self) -> usize {
        let base = self.z_dim + if self.skip_connection { self.lstm_hidden } else { 0 };
        if self.next_step_cond_decoder {
            base + DIMS + 1
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn prefix(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Backward => "bwd",
        }
    }

    pub fn stream(self) -> u64 {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

/// Whether latents come from the encoder (training) or the prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Posterior,
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainObjectiveConfig {
    /// KL weight.
    pub beta: f64,
    pub sampling_mode: SamplingMode,
}

impl TrainObjectiveConfig {
    pub fn posterior(beta: f64) -> Self {
        TrainObjectiveConfig {
            beta,
            sampling_mode: SamplingMode::Posterior,
        }
    }
}

/// Networks of one direction. Parameter names start with `fwd.` or `bwd.`.
#[derive(Debug, Clone)]
pub struct DirectionNets {
    pub lstm: Lstm,
    pub prior: GraphNet,
    pub encoder: GraphNet,
    pub decoder: GraphNet,
}

impl DirectionNets {
    fn new(store: &mut ParamStore, dir: Direction, cfg: &ImputerConfig, rng: &mut ChaCha8Rng) -> Self {
        let p = dir.prefix();
        let gn = |in_dim, out_dim| GnConfig {
            in_dim,
            hidden: cfg.gn_hidden,
            out_dim,
            node_uses_input: cfg.node_uses_input,
        };
        let h = cfg.lstm_hidden;
        let lstm = Lstm::new(store, &format!("{p}.lstm"), DIMS, h, cfg.lstm_layers, rng);
        let prior = GraphNet::new(store, &format!("{p}.prior"), gn(h, 2 * cfg.z_dim), rng);
        let encoder = GraphNet::new(store, &format!("{p}.enc"), gn(DIMS + h, 2 * cfg.z_dim), rng);
        let decoder = GraphNet::new(store, &format!("{p}.dec"), gn(cfg.decoder_in_dim(), 2 * DIMS), rng);
        DirectionNets {
            lstm,
            prior,
            encoder,
            decoder,
        }
    }

    fn from_store(store: &ParamStore, dir: Direction) -> Result<Self> {
        let p = dir.prefix();
        Ok(DirectionNets {
            lstm: Lstm::from_store(store, &format!("{p}.lstm"))
                .ok_or_else(|| Error::Checkpoint(format!("missing {p}.lstm parameters")))?,
            prior: GraphNet::from_store(store, &format!("{p}.prior"))?,
            encoder: GraphNet::from_store(store, &format!("{p}.enc"))?,
            decoder: GraphNet::from_store(store, &format!("{p}.dec"))?,
        })
    }
}

/// All learnable parameters of a Graph Imputer together with its config.
#[derive(Debug, Clone)]
pub struct ImputerParams {
    pub config: ImputerConfig,
    pub store: ParamStore,
    pub forward: DirectionNets,
    pub backward: Option<DirectionNets>,
}

impl ImputerParams {
    /// Fresh parameters initialised from `config.init_seed`.
    pub fn new(config: ImputerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let forward = DirectionNets::new(&mut store, Direction::Forward, &config, &mut rng);
        let backward = config
            .bidirectional
            .then(|| DirectionNets::new(&mut store, Direction::Backward, &config, &mut rng));
        Ok(ImputerParams {
            config,
            store,
            forward,
            backward,
        })
    }

    /// Rebinds networks to an existing store, e.g. one read from disk.
    pub fn from_store(config: ImputerConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let reference = ImputerParams::new(config.clone())?;
        for (_, name, m) in reference.store.iter() {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if store.get(id).shape() != m.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, config implies {:?}",
                    store.get(id).shape(),
                    m.shape()
                )));
            }
        }
        if store.len() != reference.store.len() {
            return Err(Error::Checkpoint(format!(
                "store has {} parameters, config implies {}",
                store.len(),
                reference.store.len()
            )));
        }
        let forward = DirectionNets::from_store(&store, Direction::Forward)?;
        let backward = if config.bidirectional {
            Some(DirectionNets::from_store(&store, Direction::Backward)?)
        } else {
            None
        };
        Ok(ImputerParams {
            config,
            store,
            forward,
            backward,
        })
    }

    pub fn nets(&self, dir: Direction) -> Option<&DirectionNets> {
        match dir {
            Direction::Forward => Some(&self.forward),
            Direction::Backward => self.backward.as_ref(),
        }
    }
}

/// A window converted to model units, one `N x d` matrix per frame.
#[derive(Debug, Clone)]
pub struct WindowData {
    pub frames: Vec<Mat>,
    pub masks: Vec<Vec<bool>>,
}

impl WindowData {
    pub fn new(window: &SequenceWindow, scale: f64) -> Result<Self> {
        window.mask.validate()?;
        let traj = &window.trajectory;
        let frames = (0..traj.n_frames())
            .map(|t| traj.frame(t).map(|v| v / scale))
            .collect();
        let masks = (0..traj.n_frames()).map(|t| window.mask.frame(t)).collect();
        Ok(WindowData { frames, masks })
    }

    pub fn n_agents(&self) -> usize {
        self.masks.first().map_or(0, Vec::len)
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Starting estimate of a sweep: ground truth at the boundary frame, or
    /// each agent's nearest observation in sweep order when it is hidden
    /// there.
    pub fn initial_estimate(&self, dir: Direction) -> Mat {
        let n = self.n_agents();
        let order = self.sweep_order(dir);
        let mut out = Mat::zeros(n, DIMS);
        for i in 0..n {
            if let Some(&t) = order.iter().find(|&&t| self.masks[t][i]) {
                out.row_mut(i).copy_from_slice(self.frames[t].row(i));
            }
        }
        out
    }

    /// Ground truth where frame `t` is observed and `estimate` elsewhere.
    pub fn mix(&self, tape: &mut Tape, t: usize, estimate: Var, stop_grad: bool) -> Var {
        let est = if stop_grad { tape.detach(estimate) } else { estimate };
        let observed = tape.constant(self.observed_part(t));
        let hidden = tape.mul_const(est, self.hidden_indicator(t));
        tape.add(observed, hidden)
    }

    /// Frame order of a sweep in `dir`.
    pub fn sweep_order(&self, dir: Direction) -> Vec<usize> {
        match dir {
            Direction::Forward => (0..self.n_frames()).collect(),
            Direction::Backward => (0..self.n_frames()).rev().collect(),
        }
    }

    /// `x ⊙ m` for frame `t`, as a constant.
    fn observed_part(&self, t: usize) -> Mat {
        let mut m = self.frames[t].clone();
        for (i, &obs) in self.masks[t].iter().enumerate() {
            if !obs {
                m.row_mut(i).fill(0.0);
            }
        }
        m
    }

    fn hidden_indicator(&self, t: usize) -> Mat {
        let n = self.n_agents();
        let mut m = Mat::zeros(n, DIMS);
        for (i, &obs) in self.masks[t].iter().enumerate() {
            if !obs {
                m.row_mut(i).fill(1.0);
            }
        }
        m
    }
}

/// Tape handles of a diagonal Gaussian head.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub mu: Var,
    pub log_sigma: Var,
}

/// Tape handles of one directional update from frame `t` to `next`.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub t: usize,
    pub next: usize,
    pub mixed: Var,
    pub hidden: Var,
    pub z: Var,
    pub prior: HeadVars,
    pub posterior: Option<HeadVars>,
    pub decoder: HeadVars,
    pub delta: Var,
    pub estimate: Var,
    /// Log-density of the true displacement under the decoder.
    pub recon: Var,
    /// KL(posterior || prior), present in posterior mode.
    pub kl: Option<Var>,
}

/// One direction's sweep over a window.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub direction: Direction,
    /// Estimates indexed by frame; the boundary frame holds the start value.
    pub estimates: Vec<Var>,
    pub steps: Vec<StepVars>,
}

/// Values of a diagonal Gaussian head.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mu: Mat,
    pub sigma: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheStep {
    pub t: usize,
    pub next: usize,
    pub mixed: Mat,
    pub hidden: Mat,
    pub z: Mat,
    pub prior: GaussianHead,
    pub posterior: Option<GaussianHead>,
    pub decoder: GaussianHead,
    pub delta: Mat,
    pub estimate: Mat,
}

/// Materialised values of a [`Sweep`], in model units.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalCache {
    pub direction: Direction,
    pub steps: Vec<CacheStep>,
    pub estimates: Vec<Mat>,
}

impl Sweep {
    pub fn cache(&self, tape: &Tape) -> DirectionalCache {
        let head = |h: HeadVars| GaussianHead {
            mu: tape.value(h.mu).clone(),
            sigma: tape.value(h.log_sigma).map(f64::exp),
        };
        DirectionalCache {
            direction: self.direction,
            steps: self
                .steps
                .iter()
                .map(|s| CacheStep {
                    t: s.t,
                    next: s.next,
                    mixed: tape.value(s.mixed).clone(),
                    hidden: tape.value(s.hidden).clone(),
                    z: tape.value(s.z).clone(),
                    prior: head(s.prior),
                    posterior: s.posterior.map(head),
                    decoder: head(s.decoder),
                    delta: tape.value(s.delta).clone(),
                    estimate: tape.value(s.estimate).clone(),
                })
                .collect(),
            estimates: self.estimates.iter().map(|&v| tape.value(v).clone()).collect(),
        }
    }
}

fn gaussian_head(tape: &mut Tape, out: Var, k: usize, cfg: &ImputerConfig) -> HeadVars {
    let mu = tape.slice_cols(out, 0, k);
    let raw = tape.slice_cols(out, k, k);
    let log_sigma = tape.clamp(raw, cfg.log_sigma_min, cfg.log_sigma_max);
    HeadVars { mu, log_sigma }
}

fn reparameterise(tape: &mut Tape, head: HeadVars, eps: Mat) -> Var {
    let sigma = tape.exp(head.log_sigma);
    let noise = tape.mul_const(sigma, eps);
    tape.add(head.mu, noise)
}

/// Inputs of one directional update.
pub struct StepInput<'a> {
    pub t: usize,
    pub next: usize,
    pub data: &'a WindowData,
    /// Current estimate for frame `t`.
    pub estimate: Var,
    pub mode: SamplingMode,
}

/// One step of a directional sweep: mix, advance the LSTM, sample `z`,
/// decode a displacement and accumulate it onto the mixed input.
pub fn directional_update(
    tape: &mut Tape,
    nets: &DirectionNets,
    cfg: &ImputerConfig,
    state: &LstmState,
    input: StepInput<'_>,
    noise: &mut dyn NoiseSource,
) -> Result<(LstmState, StepVars)> {
    let StepInput {
        t,
        next,
        data,
        estimate,
        mode,
    } = input;
    let n = data.n_agents();

    let mixed = data.mix(tape, t, estimate, cfg.stop_grad_mixing);

    let state = nets.lstm.step(tape, mixed, state);
    let h = state.top();
    if !tape.value(h).all_finite() {
        return Err(Error::Numeric(format!("non-finite hidden state at timestep {t}")));
    }

    let topo = GraphTopology::fully_connected(n);
    let prior_out = nets.prior.apply(tape, &topo, h);
    let prior = gaussian_head(tape, prior_out, cfg.z_dim, cfg);
    let posterior = match mode {
        SamplingMode::Posterior => {
            let target = tape.constant(data.frames[next].clone());
            let enc_in = tape.concat_cols(&[target, h]);
            let enc_out = nets.encoder.apply(tape, &topo, enc_in);
            Some(gaussian_head(tape, enc_out, cfg.z_dim, cfg))
        }
        SamplingMode::Prior => None,
    };
    let z_eps = noise.standard_normal(n, cfg.z_dim);
    let z = reparameterise(tape, posterior.unwrap_or(prior), z_eps);

    let base = if cfg.skip_connection {
        tape.concat_cols(&[z, h])
    } else {
        z
    };
    let decoder_out = if cfg.next_step_cond_decoder {
        let width = tape.value(base).cols();
        let pad = tape.constant(Mat::zeros(n, DIMS + 1));
        let regular = tape.concat_cols(&[base, pad]);
        let mut side = Mat::zeros(n, width + DIMS + 1);
        let seen = data.observed_part(next);
        for i in 0..n {
            let row = side.row_mut(i);
            row[width..width + DIMS].copy_from_slice(seen.row(i));
            row[width + DIMS] = if data.masks[next][i] { 1.0 } else { 0.0 };
        }
        let side = tape.constant(side);
        let nodes = tape.concat_rows(&[regular, side]);
        nets.decoder
            .apply(tape, &GraphTopology::with_sender_only(n, n), nodes)
    } else {
        nets.decoder.apply(tape, &topo, base)
    };
    let decoder = gaussian_head(tape, decoder_out, DIMS, cfg);
    let d_eps = noise.standard_normal(n, DIMS);
    let delta = if mode == SamplingMode::Prior && cfg.decoder_mean {
        decoder.mu
    } else {
        reparameterise(tape, decoder, d_eps)
    };
    let estimate = tape.add(mixed, delta);

    let truth = tape.constant(data.frames[next].clone());
    let true_delta = tape.sub(truth, mixed);
    let recon = tape.gauss_log_lik(decoder.mu, decoder.log_sigma, true_delta);
    let kl = posterior.map(|q| tape.gauss_kl(q.mu, q.log_sigma, prior.mu, prior.log_sigma));

    Ok((
        state,
        StepVars {
            t,
            next,
            mixed,
            hidden: h,
            z,
            prior,
            posterior,
            decoder,
            delta,
            estimate,
            recon,
            kl,
        },
    ))
}

/// Runs one direction over the whole window.
pub fn sweep(
    tape: &mut Tape,
    params: &ImputerParams,
    dir: Direction,
    data: &WindowData,
    mode: SamplingMode,
    noise: &mut dyn NoiseSource,
) -> Result<Sweep> {
    let nets = params
        .nets(dir)
        .ok_or_else(|| Error::Config(format!("model has no {dir} direction")))?;
    let frames = data.n_frames();
    let n = data.n_agents();
    if frames < 2 {
        return Err(Error::Argument(format!("window needs at least 2 frames, has {frames}")));
    }
    if n == 0 {
        return Err(Error::Argument("window has no agents".into()));
    }
    let order = data.sweep_order(dir);
    let init = tape.constant(data.initial_estimate(dir));
    let mut estimates = vec![init; frames];
    let mut state = nets.lstm.zero_state(tape, n);
    let mut steps = Vec::with_capacity(frames - 1);
    for w in order.windows(2) {
        let (t, next) = (w[0], w[1]);
        let input = StepInput {
            t,
            next,
            data,
            estimate: estimates[t],
            mode,
        };
        let (s, step) = directional_update(tape, nets, &params.config, &state, input, noise)?;
        state = s;
        estimates[next] = step.estimate;
        steps.push(step);
    }
    Ok(Sweep {
        direction: dir,
        estimates,
        steps,
    })
}

/// Per-term ELBO values. `total = recon_fwd + recon_bwd - beta * (kl_fwd +
/// kl_bwd) + aux`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub recon_fwd: f64,
    pub recon_bwd: f64,
    pub kl_fwd: f64,
    pub kl_bwd: f64,
    pub aux: f64,
    pub beta: f64,
    pub total: f64,
}

fn check_terms(tape: &Tape, sweep: &Sweep) -> Result<()> {
    for s in &sweep.steps {
        if !tape.value(s.recon).item().is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite reconstruction term in the {} sweep at timestep {}",
                sweep.direction, s.next
            )));
        }
        if let Some(kl) = s.kl {
            if !tape.value(kl).item().is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite KL term in the {} sweep at timestep {}",
                    sweep.direction, s.next
                )));
            }
        }
    }
    Ok(())
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Option<Var> {
    let mut it = vars.iter().copied();
    let first = it.next()?;
    Some(it.fold(first, |acc, v| tape.add(acc, v)))
}

/// Builds the ELBO on `tape` and returns its handle with the breakdown.
pub fn elbo_on_tape(
    tape: &mut Tape,
    params: &ImputerParams,
    data: &WindowData,
    objective: TrainObjectiveConfig,
    noise_fwd: &mut dyn NoiseSource,
    noise_bwd: &mut dyn NoiseSource,
) -> Result<(Var, ElboBreakdown)> {
    if objective.sampling_mode != SamplingMode::Posterior {
        return Err(Error::Argument("the ELBO is defined for posterior sampling".into()));
    }
    if !(objective.beta >= 0.0 && objective.beta.is_finite()) {
        return Err(Error::Argument(format!("beta must be non-negative, got {}", objective.beta)));
    }
    let mut sweeps = vec![sweep(tape, params, Direction::Forward, data, SamplingMode::Posterior, noise_fwd)?];
    if params.config.bidirectional {
        sweeps.push(sweep(tape, params, Direction::Backward, data, SamplingMode::Posterior, noise_bwd)?);
    }
    for s in &sweeps {
        check_terms(tape, s)?;
    }

    let mut recon = [0.0; 2];
    let mut kl = [0.0; 2];
    let mut recon_vars = Vec::new();
    let mut kl_vars = Vec::new();
    for (k, s) in sweeps.iter().enumerate() {
        let r: Vec<Var> = s.steps.iter().map(|st| st.recon).collect();
        let q: Vec<Var> = s.steps.iter().filter_map(|st| st.kl).collect();
        let r = sum_vars(tape, &r).expect("at least one step");
        let q = sum_vars(tape, &q).expect("at least one step");
        recon[k] = tape.value(r).item();
        kl[k] = tape.value(q).item();
        recon_vars.push(r);
        kl_vars.push(q);
    }
    let mut total = sum_vars(tape, &recon_vars).expect("one sweep");
    if objective.beta != 0.0 {
        let kl_sum = sum_vars(tape, &kl_vars).expect("one sweep");
        let weighted = tape.scale(kl_sum, -objective.beta);
        total = tape.add(total, weighted);
    }
    let mut aux = 0.0;
    if params.config.fused_aux_loss {
        let a = fused_aux_term(tape, data, &sweeps[0], &sweeps[1])?;
        aux = tape.value(a).item();
        total = tape.add(total, a);
    }
    let breakdown = ElboBreakdown {
        recon_fwd: recon[0],
        recon_bwd: recon[1],
        kl_fwd: kl[0],
        kl_bwd: kl[1],
        aux,
        beta: objective.beta,
        total: tape.value(total).item(),
    };
    if !breakdown.total.is_finite() {
        return Err(Error::Numeric("non-finite ELBO total".into()));
    }
    Ok((total, breakdown))
}

/// `-0.5 * sum ||fused - x||^2` over unobserved entries, with gap-weighted
/// fusion.
fn fused_aux_term(tape: &mut Tape, data: &WindowData, fwd: &Sweep, bwd: &Sweep) -> Result<Var> {
    let n = data.n_agents();
    let mask = mask_from_data(data);
    let gaps = gap_schedule(&mask)?;
    let mut terms = Vec::new();
    for t in 0..data.n_frames() {
        if data.masks[t].iter().all(|&o| o) {
            continue;
        }
        let mut wf = Mat::zeros(n, DIMS);
        let mut wb = Mat::zeros(n, DIMS);
        let mut target = Mat::zeros(n, DIMS);
        for i in 0..n {
            if data.masks[t][i] {
                continue;
            }
            let (a, b) = fusion_weights(gaps.forward(i, t), gaps.backward(i, t))?;
            wf.row_mut(i).fill(a);
            wb.row_mut(i).fill(b);
            target.row_mut(i).copy_from_slice(data.frames[t].row(i));
        }
        let f = tape.mul_const(fwd.estimates[t], wf);
        let b = tape.mul_const(bwd.estimates[t], wb);
        let fused = tape.add(f, b);
        let target = tape.constant(target);
        let diff = tape.sub(fused, target);
        let sq = tape.mul(diff, diff);
        terms.push(tape.sum_all(sq));
    }
    let total = match sum_vars(tape, &terms) {
        Some(v) => v,
        None => tape.constant(Mat::scalar(0.0)),
    };
    Ok(tape.scale(total, -0.5))
}

fn mask_from_data(data: &WindowData) -> crate::tracking::MaskTensor {
    crate::tracking::MaskTensor::from_fn(data.n_agents(), data.n_frames(), |i, t| data.masks[t][i])
}

/// Single-sample ELBO of one window with noise drawn from `seed`.
pub fn elbo(
    params: &ImputerParams,
    window: &SequenceWindow,
    objective: TrainObjectiveConfig,
    seed: u64,
) -> Result<ElboBreakdown> {
    let data = WindowData::new(window, params.config.position_scale)?;
    let mut tape = Tape::new(&params.store);
    let mut nf = seeded_noise(seed, 0, Direction::Forward.stream());
    let mut nb = seeded_noise(seed, 0, Direction::Backward.stream());
    Ok(elbo_on_tape(&mut tape, params, &data, objective, &mut nf, &mut nb)?.1)
}

/// Combines directional estimates into a trajectory.
///
/// `fwd` and `bwd` hold one `N x d` matrix per frame in model units.
/// Observed entries are copied from the window unchanged; the others take
/// the forward estimate alone when `bwd` is `None`, or the fused estimate.
pub fn assemble_imputation(
    window: &SequenceWindow,
    fwd: &[Mat],
    bwd: Option<&[Mat]>,
    fusion: FusionMode,
    scale: f64,
) -> Result<TrajectoryTensor> {
    let gaps = gap_schedule(&window.mask)?;
    let mut out = window.trajectory.clone();
    for t in 0..out.n_frames() {
        for i in 0..out.n_agents() {
            if window.mask.get(i, t) {
                continue;
            }
            let f = fwd[t].row(i);
            let v = match bwd {
                None => f.to_vec(),
                Some(bwd) => {
                    let b = bwd[t].row(i);
                    match fusion {
                        FusionMode::Mean => fuse_mean(f, b),
                        FusionMode::Nearest => {
                            fuse_nearest(f, b, gaps.forward(i, t), gaps.backward(i, t))?
                        }
                    }
                }
            };
            out.set_pos(i, t, [v[0] * scale, v[1] * scale]);
        }
    }
    Ok(out)
}

/// One imputation with explicit noise sources, plus the caches of the
/// sweeps that ran.
pub fn impute_with_noise(
    params: &ImputerParams,
    window: &SequenceWindow,
    fusion: FusionMode,
    noise_fwd: &mut dyn NoiseSource,
    noise_bwd: &mut dyn NoiseSource,
) -> Result<(TrajectoryTensor, Vec<DirectionalCache>)> {
    let data = WindowData::new(window, params.config.position_scale)?;
    let mut tape = Tape::new(&params.store);
    let f = sweep(&mut tape, params, Direction::Forward, &data, SamplingMode::Prior, noise_fwd)?;
    let mut caches = vec![f.cache(&tape)];
    if params.config.bidirectional {
        let b = sweep(&mut tape, params, Direction::Backward, &data, SamplingMode::Prior, noise_bwd)?;
        caches.push(b.cache(&tape));
    }
    let out = assemble_imputation(
        window,
        &caches[0].estimates,
        caches.get(1).map(|c| c.estimates.as_slice()),
        fusion,
        params.config.position_scale,
    )?;
    Ok((out, caches))
}

/// `n_samples` independent imputations drawn with latents from the prior.
pub fn impute(
    params: &ImputerParams,
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
            impute_with_noise(params, window, fusion, &mut nf, &mut nb).map(|r| r.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::{AgentMeta, MaskTensor, PitchSpec, Team};

    fn tiny_config() -> ImputerConfig {
        ImputerConfig {
            lstm_hidden: 8,
            gn_hidden: 8,
            z_dim: 2,
            ..ImputerConfig::default()
        }
    }

    fn window(n: usize, frames: usize, mask: MaskTensor) -> SequenceWindow {
        let agents = (0..n).map(|i| AgentMeta::new(Team::Home, format!("P{i}"))).collect();
        let mut values = Vec::new();
        for i in 0..n {
            for t in 0..frames {
                let (fi, ft) = (i as f64, t as f64);
                values.push(10.0 + 7.0 * fi + 1.3 * ft + 0.2 * ft * ft);
                values.push(20.0 - 3.0 * fi + 0.9 * ft * fi.sin());
            }
        }
        let traj = TrajectoryTensor::new(agents, frames, values, 6.25, PitchSpec::default()).unwrap();
        SequenceWindow::new(traj, mask, "w", 0).unwrap()
    }

    #[test]
    fn observed_entries_are_copied_and_samples_differ() {
        let mask = MaskTensor::from_rows(&[vec![1, 1, 1, 1, 1], vec![1, 0, 0, 0, 1], vec![1, 1, 0, 1, 1]])
            .unwrap();
        let w = window(3, 5, mask.clone());
        let p = ImputerParams::new(tiny_config()).unwrap();
        let samples = impute(&p, &w, 2, FusionMode::Nearest, 4).unwrap();
        for s in &samples {
            for i in 0..3 {
                for t in 0..5 {
                    if mask.get(i, t) {
                        assert_eq!(s.pos(i, t), w.trajectory.pos(i, t));
                    }
                }
            }
        }
        assert_ne!(samples[0].pos(1, 2), samples[1].pos(1, 2));
        assert!(matches!(impute(&p, &w, 0, FusionMode::Mean, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn beta_zero_total_is_recon_sum() {
        let w = window(3, 4, MaskTensor::from_rows(&[vec![1, 0, 1, 1], vec![1, 1, 1, 1], vec![1, 0, 0, 1]]).unwrap());
        let p = ImputerParams::new(tiny_config()).unwrap();
        let e = elbo(&p, &w, TrainObjectiveConfig::posterior(0.0), 9).unwrap();
        assert_eq!(e.total, e.recon_fwd + e.recon_bwd);
        assert!(e.kl_fwd >= 0.0 && e.kl_bwd >= 0.0);
        let e1 = elbo(&p, &w, TrainObjectiveConfig::posterior(1.0), 9).unwrap();
        assert!(e1.total <= e.total);
    }

    #[test]
    fn store_round_trip_rebinds() {
        let p = ImputerParams::new(tiny_config()).unwrap();
        let q = ImputerParams::from_store(p.config.clone(), p.store.clone()).unwrap();
        let w = window(2, 3, MaskTensor::all_observed(2, 3));
        let a = elbo(&p, &w, TrainObjectiveConfig::posterior(0.5), 1).unwrap();
        let b = elbo(&q, &w, TrainObjectiveConfig::posterior(0.5), 1).unwrap();
        assert_eq!(a, b);
        let wrong = ImputerConfig {
            z_dim: 3,
            ..tiny_config()
        };
        assert!(matches!(ImputerParams::from_store(wrong, p.store), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn forward_only_model_has_no_backward_terms() {
        let cfg = ImputerConfig {
            bidirectional: false,
            ..tiny_config()
        };
        let p = ImputerParams::new(cfg).unwrap();
        assert!(p.store.iter().all(|(_, name, _)| name.starts_with("fwd.")));
        let w = window(2, 4, MaskTensor::from_rows(&[vec![1, 0, 0, 1], vec![1, 1, 1, 1]]).unwrap());
        let e = elbo(&p, &w, TrainObjectiveConfig::posterior(1.0), 2).unwrap();
        assert_eq!((e.recon_bwd, e.kl_bwd), (0.0, 0.0));
    }
}
