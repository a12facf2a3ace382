//! Seeded synthetic football-like trajectories.
//!
//! Players are point masses pulled towards a formation slot that shifts with
//! the ball, pushed apart at short range, and driven by Ornstein–Uhlenbeck
//! random acceleration. The ball travels in straight lines between kicks
//! aimed at player formation slots; kicks arrive as a Poisson process.
//! Integration is explicit Euler at the output frame rate.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracking::{football_roster, save_bundle, BundleEntry, PitchSpec, TrajectoryTensor};

const BALL_PULL: f64 = 0.35;
const REPULSION_RADIUS_M: f64 = 3.0;
const OU_RATE: f64 = 1.0;
const KICK_SPEED_M_S: (f64, f64) = (8.0, 18.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_players_per_team: usize,
    pub duration_frames: usize,
    pub frame_rate_hz: f64,
    pub ball_kick_rate_hz: f64,
    pub attraction_gain: f64,
    pub repulsion_gain: f64,
    /// Stationary standard deviation of the random acceleration, m/s².
    pub noise_scale: f64,
    pub max_speed: f64,
    pub seed: u64,
    #[serde(default)]
    pub pitch: PitchSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_players_per_team: 11,
            duration_frames: 60,
            frame_rate_hz: 6.25,
            ball_kick_rate_hz: 0.4,
            attraction_gain: 0.3,
            repulsion_gain: 4.0,
            noise_scale: 2.5,
            max_speed: 8.0,
            seed: 0,
            pitch: PitchSpec::default(),
        }
    }
}

impl SynthConfig {
    /// No forces and no kicks: every agent moves at constant velocity.
    pub fn force_free(self) -> Self {
        SynthConfig {
            ball_kick_rate_hz: 0.0,
            attraction_gain: 0.0,
            repulsion_gain: 0.0,
            noise_scale: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("ball_kick_rate_hz", self.ball_kick_rate_hz),
            ("attraction_gain", self.attraction_gain),
            ("repulsion_gain", self.repulsion_gain),
            ("noise_scale", self.noise_scale),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.max_speed > 0.0) {
            return Err(Error::Config("max_speed must be positive".into()));
        }
        if !(self.frame_rate_hz > 0.0) {
            return Err(Error::Config("frame_rate_hz must be positive".into()));
        }
        if self.duration_frames < 2 {
            return Err(Error::Config("duration_frames must be at least 2".into()));
        }
        if self.n_players_per_team == 0 {
            return Err(Error::Config("need at least one player per team".into()));
        }
        self.pitch.validate()
    }
}

/// Formation slot for player `k` of a team, attacking towards +x for home.
fn role_anchor(k: usize, n: usize, home: bool, pitch: &PitchSpec) -> [f64; 2] {
    // Goalkeeper first, outfield players on a grid of lines.
    let (fx, fy) = if k == 0 {
        (0.06, 0.5)
    } else {
        let outfield = n.saturating_sub(1).max(1);
        let lines = ((outfield as f64).sqrt().ceil() as usize).max(1);
        let per_line = outfield.div_ceil(lines);
        let idx = k - 1;
        let (line, slot) = (idx / per_line, idx % per_line);
        let in_line = (outfield - line * per_line).min(per_line);
        (
            0.2 + 0.3 * (line as f64 + 0.5) / lines as f64,
            (slot as f64 + 0.5) / in_line as f64,
        )
    };
    let x = if home { fx } else { 1.0 - fx };
    [x * pitch.length_m, fy * pitch.width_m]
}

/// Scales `v` so that `p + v * duration` stays inside the pitch.
fn keep_inside(p: [f64; 2], v: [f64; 2], duration: f64, pitch: &PitchSpec) -> [f64; 2] {
    let mut s: f64 = 1.0;
    let bounds = [pitch.length_m, pitch.width_m];
    for d in 0..2 {
        let end = p[d] + v[d] * duration;
        if end > bounds[d] {
            s = s.min((bounds[d] - p[d]) / (v[d] * duration));
        } else if end < 0.0 {
            s = s.min(-p[d] / (v[d] * duration));
        }
    }
    let s = 0.99 * s.max(0.0);
    if s < 0.99 {
        [v[0] * s, v[1] * s]
    } else {
        v
    }
}

fn clamp_speed(v: &mut [f64; 2], max: f64) {
    let s = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if s > max {
        v[0] *= max / s;
        v[1] *= max / s;
    }
}

fn clamp_position(p: &mut [f64; 2], v: &mut [f64; 2], pitch: &PitchSpec) {
    let bounds = [pitch.length_m, pitch.width_m];
    for d in 0..2 {
        if p[d] < 0.0 {
            p[d] = 0.0;
            v[d] = v[d].max(0.0);
        } else if p[d] > bounds[d] {
            p[d] = bounds[d];
            v[d] = v[d].min(0.0);
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Simulates one sequence. Agent 0 is the ball, then home, then away.
pub fn generate_match(cfg: &SynthConfig) -> Result<TrajectoryTensor> {
    cfg.validate()?;
    let pitch = cfg.pitch;
    let n_team = cfg.n_players_per_team;
    let n = 1 + 2 * n_team;
    let frames = cfg.duration_frames;
    let dt = 1.0 / cfg.frame_rate_hz;
    let duration = (frames - 1) as f64 * dt;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let anchors: Vec<[f64; 2]> = (0..n)
        .map(|i| match i {
            0 => [pitch.length_m / 2.0, pitch.width_m / 2.0],
            i if i <= n_team => role_anchor(i - 1, n_team, true, &pitch),
            i => role_anchor(i - 1 - n_team, n_team, false, &pitch),
        })
        .collect();

    let mut pos = vec![[0.0; 2]; n];
    let mut vel = vec![[0.0; 2]; n];
    for i in 0..n {
        let jitter = if i == 0 { 8.0 } else { 3.0 };
        let p = [
            (anchors[i][0] + jitter * normal(&mut rng)).clamp(1.0, pitch.length_m - 1.0),
            (anchors[i][1] + jitter * normal(&mut rng)).clamp(1.0, pitch.width_m - 1.0),
        ];
        let mut v = [1.5 * normal(&mut rng), 1.5 * normal(&mut rng)];
        clamp_speed(&mut v, cfg.max_speed);
        pos[i] = p;
        vel[i] = keep_inside(p, v, duration, &pitch);
    }
    let mut noise = vec![[0.0; 2]; n];
    let mut ball_target: Option<[f64; 2]> = None;
    let kick_prob = 1.0 - (-cfg.ball_kick_rate_hz * dt).exp();
    let ou_decay = OU_RATE * dt;
    let ou_kick = cfg.noise_scale * (2.0 * OU_RATE * dt).sqrt();
    let damping = 2.0 * cfg.attraction_gain.sqrt();

    let mut values = vec![0.0; n * frames * 2];
    let mut record = |pos: &[[f64; 2]], f: usize| {
        for (i, p) in pos.iter().enumerate() {
            let o = (i * frames + f) * 2;
            values[o] = p[0];
            values[o + 1] = p[1];
        }
    };
    record(&pos, 0);

    for f in 1..frames {
        // Ball: kicks arrive as a Poisson process.
        if kick_prob > 0.0 && rng.random::<f64>() < kick_prob {
            let receiver = rng.random_range(1..n);
            let target = anchors[receiver];
            let speed = rng.random_range(KICK_SPEED_M_S.0..KICK_SPEED_M_S.1);
            let d = [target[0] - pos[0][0], target[1] - pos[0][1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if len > 1e-6 {
                vel[0] = [speed * d[0] / len, speed * d[1] / len];
                ball_target = Some(target);
            }
        }
        let ball = pos[0];
        let mut acc = vec![[0.0; 2]; n];
        for i in 1..n {
            for d in 0..2 {
                let anchor = (1.0 - BALL_PULL) * anchors[i][d] + BALL_PULL * ball[d];
                acc[i][d] = cfg.attraction_gain * (anchor - pos[i][d]) - damping * vel[i][d];
            }
            if cfg.repulsion_gain > 0.0 {
                for j in 1..n {
                    if j == i {
                        continue;
                    }
                    let d = [pos[i][0] - pos[j][0], pos[i][1] - pos[j][1]];
                    let dist = (d[0] * d[0] + d[1] * d[1]).sqrt();
                    if dist > 1e-9 && dist < REPULSION_RADIUS_M {
                        let s = cfg.repulsion_gain * (1.0 - dist / REPULSION_RADIUS_M) / dist;
                        acc[i][0] += s * d[0];
                        acc[i][1] += s * d[1];
                    }
                }
            }
            for d in 0..2 {
                noise[i][d] += -ou_decay * noise[i][d] + ou_kick * normal(&mut rng);
                acc[i][d] += noise[i][d];
            }
        }
        for i in 1..n {
            vel[i][0] += acc[i][0] * dt;
            vel[i][1] += acc[i][1] * dt;
            clamp_speed(&mut vel[i], cfg.max_speed);
        }
        for i in 0..n {
            let mut p = [pos[i][0] + vel[i][0] * dt, pos[i][1] + vel[i][1] * dt];
            if i == 0 {
                if let Some(target) = ball_target {
                    // Stop on arrival at the receiver's slot.
                    let before = [target[0] - pos[0][0], target[1] - pos[0][1]];
                    let after = [target[0] - p[0], target[1] - p[1]];
                    if before[0] * after[0] + before[1] * after[1] <= 0.0 {
                        p = target;
                        vel[0] = [0.0, 0.0];
                        ball_target = None;
                    }
                }
            }
            clamp_position(&mut p, &mut vel[i], &pitch);
            pos[i] = p;
        }
        record(&pos, f);
    }

    TrajectoryTensor::new(football_roster(n_team), frames, values, cfg.frame_rate_hz, pitch)
}

/// Sequence id used in generated bundles.
pub fn sequence_id(index: usize) -> String {
    format!("{index:05}")
}

/// Generates `n_sequences` matches with seeds `seed + i`.
pub fn generate_sequences(cfg: &SynthConfig, n_sequences: usize, seed: u64) -> Result<Vec<TrajectoryTensor>> {
    if n_sequences == 0 {
        return Err(Error::Argument("n_sequences must be at least 1".into()));
    }
    (0..n_sequences)
        .into_par_iter()
        .map(|i| {
            let c = SynthConfig {
                seed: seed.wrapping_add(i as u64),
                ..*cfg
            };
            generate_match(&c)
        })
        .collect()
}

/// Writes a synthetic benchmark bundle to `dir`.
pub fn generate_benchmark(cfg: &SynthConfig, n_sequences: usize, seed: u64, dir: impl AsRef<Path>) -> Result<()> {
    let seqs = generate_sequences(cfg, n_sequences, seed)?;
    let entries: Vec<BundleEntry> = seqs
        .into_iter()
        .enumerate()
        .map(|(i, trajectory)| BundleEntry {
            id: sequence_id(i),
            trajectory,
            mask: None,
        })
        .collect();
    save_bundle(dir, &entries, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn force_free_motion_is_linear() {
        let cfg = SynthConfig {
            seed: 3,
            ..SynthConfig::default()
        }
        .force_free();
        let t = generate_match(&cfg).unwrap();
        for i in 0..t.n_agents() {
            let p0 = t.pos(i, 0);
            let p1 = t.pos(i, 1);
            for f in 2..t.n_frames() {
                let p = t.pos(i, f);
                for d in 0..2 {
                    let expect = p0[d] + f as f64 * (p1[d] - p0[d]);
                    assert!((p[d] - expect).abs() < 1e-9, "agent {i} frame {f}");
                }
            }
        }
    }

    #[test]
    fn same_seed_same_tensor() {
        let cfg = SynthConfig {
            seed: 11,
            ..SynthConfig::default()
        };
        assert_eq!(generate_match(&cfg).unwrap(), generate_match(&cfg).unwrap());
    }

    #[test]
    fn player_steps_respect_speed_limit() {
        let cfg = SynthConfig::default();
        let t = generate_match(&cfg).unwrap();
        let limit = cfg.max_speed / cfg.frame_rate_hz + 1e-9;
        for i in 1..t.n_agents() {
            for f in 1..t.n_frames() {
                let (a, b) = (t.pos(i, f - 1), t.pos(i, f));
                let step = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                assert!(step <= limit, "agent {i} frame {f} step {step}");
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SynthConfig {
            max_speed: 0.0,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_match(&cfg), Err(Error::Config(_))));
        let cfg = SynthConfig {
            duration_frames: 1,
            ..SynthConfig::default()
        };
        assert!(generate_match(&cfg).is_err());
    }
}
