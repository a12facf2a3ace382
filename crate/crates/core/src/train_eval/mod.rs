//! Training loop with β annealing, and the evaluation metrics.

mod adam;
mod eval;

pub use adam::Adam;
pub use eval::{
    l2_eval, l2_eval_units, l2_min_eval, results_table, results_text, EvalOptions, EvalReport, MetricUnits,
    SequenceRecord,
};

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::imputer::{seeded_noise, Direction, ElboBreakdown};
use crate::model::Model;
use crate::params::Grads;
use crate::tracking::SequenceWindow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_b1: f64,
    pub adam_b2: f64,
    pub adam_eps: f64,
    pub beta_init: f64,
    pub beta_final: f64,
    /// Share of the iterations over which β moves linearly to `beta_final`.
    pub beta_anneal_fraction: f64,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 writes only the
    /// initial and final ones.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 100_000,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_b1: 0.9,
            adam_b2: 0.999,
            adam_eps: 1e-8,
            beta_init: 0.1,
            beta_final: 0.01,
            beta_anneal_fraction: 0.5,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_b1) || !(0.0..1.0).contains(&self.adam_b2) {
            return bad("Adam decay rates must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if !(self.beta_init >= 0.0 && self.beta_final >= 0.0 && self.beta_init.is_finite() && self.beta_final.is_finite()) {
            return bad("beta values must be non-negative");
        }
        if !(self.beta_anneal_fraction > 0.0 && self.beta_anneal_fraction <= 1.0) {
            return bad("beta_anneal_fraction must lie in (0, 1]");
        }
        Ok(())
    }
}

/// KL weight at `iteration`: linear from `beta_init` to `beta_final` over
/// the first `beta_anneal_fraction * iterations` iterations, then constant.
pub fn beta_schedule(cfg: &TrainConfig, iteration: usize) -> f64 {
    let end = cfg.beta_anneal_fraction * cfg.iterations as f64;
    let it = iteration as f64;
    if it >= end {
        cfg.beta_final
    } else {
        cfg.beta_init + (cfg.beta_final - cfg.beta_init) * (it / end)
    }
}

/// One line of the metrics log, averaged over the minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub elbo_total: f64,
    pub recon_fwd: f64,
    pub recon_bwd: f64,
    pub kl_fwd: f64,
    pub kl_bwd: f64,
    pub beta: f64,
}

/// What a training run produced.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub metrics: Vec<MetricsRecord>,
    /// Checkpoints written, in order. The last one holds the final model.
    pub checkpoints: Vec<PathBuf>,
}

pub const METRICS_FILE: &str = "metrics.ndjson";
pub const FINAL_CHECKPOINT: &str = "model.bin";

pub fn checkpoint_name(iteration: usize) -> String {
    format!("ckpt_{iteration:06}.bin")
}

/// Runs `cfg.iterations` Adam steps on minus the batch-averaged objective.
///
/// Minibatches walk through reshuffled passes over `windows`. Every window
/// of a batch gets its own noise seed from the run's generator, gradients
/// are computed in parallel and summed in batch order, so the run is
/// reproducible for a given seed regardless of thread count.
///
/// With `out_dir`, the metrics log goes to `metrics.ndjson`, the initial
/// parameters to `ckpt_000000.bin`, periodic checkpoints next to it and the
/// final parameters to `model.bin`.
pub fn train_run(
    model: &mut Model,
    windows: &[SequenceWindow],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainRun> {
    cfg.validate()?;
    if !model.is_trainable() {
        return Err(Error::Argument(format!("the {} model has no parameters to train", model.kind())));
    }
    if windows.is_empty() {
        return Err(Error::Argument("no training windows".into()));
    }
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_FILE);
            Some((fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };
    let mut checkpoints = Vec::new();
    let save = |model: &Model, name: String, checkpoints: &mut Vec<PathBuf>| -> Result<()> {
        if let Some(dir) = out_dir {
            let path = dir.join(name);
            model.save(&path)?;
            checkpoints.push(path);
        }
        Ok(())
    };
    save(model, checkpoint_name(0), &mut checkpoints)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.store(), cfg.learning_rate, cfg.adam_b1, cfg.adam_b2, cfg.adam_eps);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut cursor = order.len();
    let mut metrics = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let beta = beta_schedule(cfg, iteration);
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push((order[cursor], rng.random::<u64>()));
            cursor += 1;
        }
        let diverged = |msg: String, checkpoints: &[PathBuf]| Error::Diverged {
            iteration,
            msg,
            last_good: checkpoints
                .last()
                .map_or_else(|| "none (no output directory)".to_string(), |p| p.display().to_string()),
        };

        let per_window: Vec<Result<(Grads, ElboBreakdown)>> = {
            let model = &*model;
            batch
                .par_iter()
                .map(|&(w, noise_seed)| {
                    let mut tape = Tape::new(model.store());
                    let mut nf = seeded_noise(noise_seed, 0, Direction::Forward.stream());
                    let mut nb = seeded_noise(noise_seed, 0, Direction::Backward.stream());
                    let (total, breakdown) = model.objective_on_tape(&mut tape, &windows[w], beta, &mut nf, &mut nb)?;
                    Ok((tape.backward(total), breakdown))
                })
                .collect()
        };

        let scale = 1.0 / cfg.batch_size as f64;
        let mut grads = Grads::zeros_like(model.store());
        let mut mean = MetricsRecord {
            iteration,
            elbo_total: 0.0,
            recon_fwd: 0.0,
            recon_bwd: 0.0,
            kl_fwd: 0.0,
            kl_bwd: 0.0,
            beta,
        };
        for r in per_window {
            let (g, b) = match r {
                Ok(x) => x,
                Err(Error::Numeric(msg)) => return Err(diverged(msg, &checkpoints)),
                Err(e) => return Err(e),
            };
            // The loss is minus the objective.
            grads.accumulate(&g, -scale);
            mean.elbo_total += scale * b.total;
            mean.recon_fwd += scale * b.recon_fwd;
            mean.recon_bwd += scale * b.recon_bwd;
            mean.kl_fwd += scale * b.kl_fwd;
            mean.kl_bwd += scale * b.kl_bwd;
        }
        if !mean.elbo_total.is_finite() || !grads.all_finite() {
            return Err(diverged("non-finite loss or gradient".into(), &checkpoints));
        }
        if let Some((file, path)) = log.as_mut() {
            let line = serde_json::to_string(&mean)?;
            writeln!(file, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        metrics.push(mean);

        adam.step(model.store_mut(), &grads);
        if !model.store().all_finite() {
            return Err(diverged("parameters became non-finite".into(), &checkpoints));
        }
        let done = iteration + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.iterations {
            save(model, checkpoint_name(done), &mut checkpoints)?;
        }
    }
    save(model, FINAL_CHECKPOINT.to_string(), &mut checkpoints)?;
    Ok(TrainRun { metrics, checkpoints })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_schedule_endpoints_and_midpoint() {
        let cfg = TrainConfig {
            iterations: 1000,
            beta_final: 1.0,
            ..Default::default()
        };
        assert_eq!(beta_schedule(&cfg, 0), 0.1);
        assert_eq!(beta_schedule(&cfg, 500), 1.0);
        assert_eq!(beta_schedule(&cfg, 1000), 1.0);
        let down = TrainConfig {
            iterations: 1000,
            beta_final: 0.01,
            ..Default::default()
        };
        assert!((beta_schedule(&down, 250) - 0.055).abs() < 1e-15);
    }

    #[test]
    fn beta_schedule_is_monotone_and_continuous() {
        for beta_final in [0.01, 1.0] {
            let cfg = TrainConfig {
                iterations: 400,
                beta_final,
                beta_anneal_fraction: 0.3,
                ..Default::default()
            };
            let lo = cfg.beta_init.min(beta_final);
            let hi = cfg.beta_init.max(beta_final);
            let step = (beta_final - cfg.beta_init).abs() / 120.0;
            let mut prev = beta_schedule(&cfg, 0);
            for it in 1..=400 {
                let b = beta_schedule(&cfg, it);
                assert!((lo..=hi).contains(&b));
                if beta_final > cfg.beta_init {
                    assert!(b >= prev);
                } else {
                    assert!(b <= prev);
                }
                assert!((b - prev).abs() <= step + 1e-15);
                prev = b;
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { beta_anneal_fraction: 0.0, ..Default::default() },
            TrainConfig { adam_b2: 1.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
