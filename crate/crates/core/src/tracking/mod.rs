//! Multiagent tracking tensors, observability masks and preprocessing.

mod bundle;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub use bundle::{load_tracking_bundle, load_windows, save_bundle, BundleEntry, Manifest};

/// Spatial dimensions of the pitch plane.
pub const DIMS: usize = 2;

/// Positions may exceed the pitch by this much before being rejected.
pub const PITCH_MARGIN_M: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Team {
    Home,
    Away,
    Ball,
}

/// Team that holds the ball for attack-direction realignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Possession {
    Home,
    Away,
}

impl From<Possession> for Team {
    fn from(p: Possession) -> Self {
        match p {
            Possession::Home => Team::Home,
            Possession::Away => Team::Away,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub team: Team,
    pub label: String,
}

impl AgentMeta {
    pub fn new(team: Team, label: impl Into<String>) -> Self {
        AgentMeta {
            team,
            label: label.into(),
        }
    }
}

/// Standard football roster: ball first, then home players, then away.
pub fn football_roster(players_per_team: usize) -> Vec<AgentMeta> {
    let mut agents = vec![AgentMeta::new(Team::Ball, "ball")];
    for k in 0..players_per_team {
        agents.push(AgentMeta::new(Team::Home, format!("H{}", k + 1)));
    }
    for k in 0..players_per_team {
        agents.push(AgentMeta::new(Team::Away, format!("A{}", k + 1)));
    }
    agents
}

/// Pitch rectangle in meters, origin at the bottom-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchSpec {
    pub length_m: f64,
    pub width_m: f64,
}

impl Default for PitchSpec {
    fn default() -> Self {
        PitchSpec {
            length_m: 105.0,
            width_m: 68.0,
        }
    }
}

impl PitchSpec {
    pub fn new(length_m: f64, width_m: f64) -> Result<Self> {
        let p = PitchSpec { length_m, width_m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > self.width_m && self.width_m > 0.0) {
            return Err(Error::Config(format!(
                "pitch must satisfy length > width > 0, got {} x {}",
                self.length_m, self.width_m
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64, margin: f64) -> bool {
        x >= -margin && x <= self.length_m + margin && y >= -margin && y <= self.width_m + margin
    }

    pub fn area(&self) -> f64 {
        self.length_m * self.width_m
    }
}

/// Agent positions over time, `[agent][frame][dim]`, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTensor {
    n_agents: usize,
    n_frames: usize,
    values: Vec<f64>,
    agents: Vec<AgentMeta>,
    frame_rate_hz: f64,
    pitch: PitchSpec,
}

impl TrajectoryTensor {
    /// Builds a tensor from agent-major values, validating every invariant.
    pub fn new(
        agents: Vec<AgentMeta>,
        n_frames: usize,
        values: Vec<f64>,
        frame_rate_hz: f64,
        pitch: PitchSpec,
    ) -> Result<Self> {
        let t = Self::new_unchecked(agents, n_frames, values, frame_rate_hz, pitch)?;
        t.validate()?;
        Ok(t)
    }

    /// Shape checks only; for model outputs that may leave the pitch.
    pub fn new_unchecked(
        agents: Vec<AgentMeta>,
        n_frames: usize,
        values: Vec<f64>,
        frame_rate_hz: f64,
        pitch: PitchSpec,
    ) -> Result<Self> {
        let n_agents = agents.len();
        if values.len() != n_agents * n_frames * DIMS {
            return Err(Error::Argument(format!(
                "expected {} values for {} agents x {} frames, got {}",
                n_agents * n_frames * DIMS,
                n_agents,
                n_frames,
                values.len()
            )));
        }
        if !(frame_rate_hz > 0.0 && frame_rate_hz.is_finite()) {
            return Err(Error::Argument(format!(
                "frame rate must be positive, got {frame_rate_hz}"
            )));
        }
        Ok(TrajectoryTensor {
            n_agents,
            n_frames,
            values,
            agents,
            frame_rate_hz,
            pitch,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.pitch.validate()?;
        if let Some(bad) = self.values.iter().position(|v| !v.is_finite()) {
            let (i, t) = (bad / (self.n_frames * DIMS), (bad / DIMS) % self.n_frames);
            return Err(Error::Invariant(format!(
                "non-finite position for agent {i} at frame {t}"
            )));
        }
        for i in 0..self.n_agents {
            for t in 0..self.n_frames {
                let [x, y] = self.pos(i, t);
                if !self.pitch.contains(x, y, PITCH_MARGIN_M) {
                    return Err(Error::Invariant(format!(
                        "agent {i} at frame {t} is off the pitch: ({x}, {y})"
                    )));
                }
            }
        }
        let balls = self.agents.iter().filter(|a| a.team == Team::Ball).count();
        if balls > 1 {
            return Err(Error::Invariant(format!("{balls} agents are labelled ball")));
        }
        Ok(())
    }

    /// Checks the football layout: exactly one ball and both teams present.
    pub fn validate_football(&self) -> Result<()> {
        let count = |team| self.agents.iter().filter(|a| a.team == team).count();
        if count(Team::Ball) != 1 {
            return Err(Error::Config(format!(
                "football mode needs exactly one ball agent, found {}",
                count(Team::Ball)
            )));
        }
        if count(Team::Home) == 0 || count(Team::Away) == 0 {
            return Err(Error::Config("football mode needs home and away players".into()));
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn agents(&self) -> &[AgentMeta] {
        &self.agents
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn pitch(&self) -> PitchSpec {
        self.pitch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn ball_index(&self) -> Option<usize> {
        self.agents.iter().position(|a| a.team == Team::Ball)
    }

    #[inline]
    fn offset(&self, agent: usize, frame: usize) -> usize {
        (agent * self.n_frames + frame) * DIMS
    }

    #[inline]
    pub fn pos(&self, agent: usize, frame: usize) -> [f64; DIMS] {
        let o = self.offset(agent, frame);
        [self.values[o], self.values[o + 1]]
    }

    #[inline]
    pub fn set_pos(&mut self, agent: usize, frame: usize, p: [f64; DIMS]) {
        let o = self.offset(agent, frame);
        self.values[o] = p[0];
        self.values[o + 1] = p[1];
    }

    /// All agents at one frame as an `N x 2` matrix.
    pub fn frame(&self, t: usize) -> Mat {
        let mut m = Mat::zeros(self.n_agents, DIMS);
        for i in 0..self.n_agents {
            m.row_mut(i).copy_from_slice(&self.pos(i, t));
        }
        m
    }

    pub fn set_frame(&mut self, t: usize, m: &Mat) {
        for i in 0..self.n_agents {
            self.set_pos(i, t, [m.get(i, 0), m.get(i, 1)]);
        }
    }

    /// Reorders agents so that output agent `k` is input agent `perm[k]`.
    pub fn permute_agents(&self, perm: &[usize]) -> TrajectoryTensor {
        let mut out = self.clone();
        out.agents = perm.iter().map(|&p| self.agents[p].clone()).collect();
        for (k, &p) in perm.iter().enumerate() {
            for t in 0..self.n_frames {
                out.set_pos(k, t, self.pos(p, t));
            }
        }
        out
    }

    /// Copy with every coordinate multiplied by `s` (pitch unchanged).
    pub fn scaled(&self, s: f64) -> TrajectoryTensor {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }
}

/// Binary observability per agent and frame; 1 = observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTensor {
    n_agents: usize,
    n_frames: usize,
    m: Vec<bool>,
}

impl MaskTensor {
    pub fn all_observed(n_agents: usize, n_frames: usize) -> Self {
        MaskTensor {
            n_agents,
            n_frames,
            m: vec![true; n_agents * n_frames],
        }
    }

    pub fn from_fn(n_agents: usize, n_frames: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Vec::with_capacity(n_agents * n_frames);
        for i in 0..n_agents {
            for t in 0..n_frames {
                m.push(f(i, t));
            }
        }
        MaskTensor {
            n_agents,
            n_frames,
            m,
        }
    }

    /// Rows are agents, columns are frames, entries 0 or 1.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n_frames = rows.first().map_or(0, Vec::len);
        let mut m = Vec::with_capacity(rows.len() * n_frames);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_frames {
                return Err(Error::Argument(format!("mask row {i} has the wrong length")));
            }
            for &v in r {
                match v {
                    0 => m.push(false),
                    1 => m.push(true),
                    other => {
                        return Err(Error::Argument(format!("mask entry {other} is not binary")))
                    }
                }
            }
        }
        Ok(MaskTensor {
            n_agents: rows.len(),
            n_frames,
            m,
        })
    }

    /// Every agent must be observed at least once.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n_agents {
            if !(0..self.n_frames).any(|t| self.get(i, t)) {
                return Err(Error::Invariant(format!("agent {i} is never observed")));
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    #[inline]
    pub fn get(&self, agent: usize, frame: usize) -> bool {
        self.m[agent * self.n_frames + frame]
    }

    #[inline]
    pub fn set(&mut self, agent: usize, frame: usize, observed: bool) {
        self.m[agent * self.n_frames + frame] = observed;
    }

    /// Observability of every agent at one frame.
    pub fn frame(&self, t: usize) -> Vec<bool> {
        (0..self.n_agents).map(|i| self.get(i, t)).collect()
    }

    /// `N x d` matrix of 0/1 broadcast over the spatial dims.
    pub fn frame_mat(&self, t: usize, dims: usize) -> Mat {
        let mut out = Mat::zeros(self.n_agents, dims);
        for i in 0..self.n_agents {
            if self.get(i, t) {
                out.row_mut(i).fill(1.0);
            }
        }
        out
    }

    pub fn count_unobserved(&self) -> usize {
        self.m.iter().filter(|&&v| !v).count()
    }

    pub fn permute_agents(&self, perm: &[usize]) -> MaskTensor {
        MaskTensor::from_fn(self.n_agents, self.n_frames, |k, t| self.get(perm[k], t))
    }
}

/// One training or evaluation sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceWindow {
    pub trajectory: TrajectoryTensor,
    pub mask: MaskTensor,
    pub source_id: String,
    pub warmup_frames: usize,
}

impl SequenceWindow {
    pub fn new(
        trajectory: TrajectoryTensor,
        mask: MaskTensor,
        source_id: impl Into<String>,
        warmup_frames: usize,
    ) -> Result<Self> {
        if (mask.n_agents(), mask.n_frames()) != (trajectory.n_agents(), trajectory.n_frames()) {
            return Err(Error::Argument(format!(
                "mask shape {}x{} does not match trajectory {}x{}",
                mask.n_agents(),
                mask.n_frames(),
                trajectory.n_agents(),
                trajectory.n_frames()
            )));
        }
        Ok(SequenceWindow {
            trajectory,
            mask,
            source_id: source_id.into(),
            warmup_frames,
        })
    }

    /// Fully observed window.
    pub fn observed(trajectory: TrajectoryTensor, source_id: impl Into<String>) -> Self {
        let mask = MaskTensor::all_observed(trajectory.n_agents(), trajectory.n_frames());
        SequenceWindow {
            trajectory,
            mask,
            source_id: source_id.into(),
            warmup_frames: 0,
        }
    }
}

/// Keeps every `factor`-th frame starting at frame 0.
pub fn downsample(t: &TrajectoryTensor, factor: usize) -> Result<TrajectoryTensor> {
    if factor == 0 {
        return Err(Error::Argument("downsample factor must be at least 1".into()));
    }
    let frames: Vec<usize> = (0..t.n_frames).step_by(factor).collect();
    let mut values = Vec::with_capacity(t.n_agents * frames.len() * DIMS);
    for i in 0..t.n_agents {
        for &f in &frames {
            values.extend_from_slice(&t.pos(i, f));
        }
    }
    TrajectoryTensor::new_unchecked(
        t.agents.clone(),
        frames.len(),
        values,
        t.frame_rate_hz / factor as f64,
        t.pitch,
    )
}

/// Mean x-velocity of one team over the window, in m/s.
pub fn team_mean_x_velocity(t: &TrajectoryTensor, team: Team) -> f64 {
    let members: Vec<usize> = (0..t.n_agents).filter(|&i| t.agents[i].team == team).collect();
    if members.is_empty() || t.n_frames < 2 {
        return 0.0;
    }
    let duration = (t.n_frames - 1) as f64 / t.frame_rate_hz;
    let total: f64 = members
        .iter()
        .map(|&i| t.pos(i, t.n_frames - 1)[0] - t.pos(i, 0)[0])
        .sum();
    total / members.len() as f64 / duration
}

/// Reflects x about the pitch centre when the possessing team moves left,
/// so the team in possession always attacks towards increasing x.
pub fn realign_attack_direction(t: &TrajectoryTensor, possession: Possession) -> TrajectoryTensor {
    if team_mean_x_velocity(t, possession.into()) >= 0.0 {
        return t.clone();
    }
    let mut out = t.clone();
    let length = t.pitch.length_m;
    for i in 0..t.n_agents {
        for f in 0..t.n_frames {
            let [x, y] = t.pos(i, f);
            out.set_pos(i, f, [length - x, y]);
        }
    }
    out
}

/// `gt ⊙ m + est ⊙ (1 - m)` per agent row.
pub fn masked_mix(gt: &Mat, est: &Mat, observed: &[bool]) -> Result<Mat> {
    if gt.shape() != est.shape() || observed.len() != gt.rows() {
        return Err(Error::Argument(format!(
            "masked_mix shape mismatch: gt {:?}, est {:?}, mask {}",
            gt.shape(),
            est.shape(),
            observed.len()
        )));
    }
    let mut out = est.clone();
    for (i, &obs) in observed.iter().enumerate() {
        if obs {
            out.row_mut(i).copy_from_slice(gt.row(i));
        }
    }
    Ok(out)
}

/// Seeded shuffle then split; the eval partition holds
/// `floor(eval_fraction * len)` items.
pub fn split_train_eval<T>(items: Vec<T>, eval_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(Error::Argument("cannot split an empty list".into()));
    }
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "eval fraction must lie in (0, 1), got {eval_fraction}"
        )));
    }
    let n_eval = (eval_fraction * items.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut eval = Vec::with_capacity(n_eval);
    let mut train = Vec::with_capacity(slots.len() - n_eval);
    for (k, idx) in order.into_iter().enumerate() {
        let item = slots[idx].take().expect("each index visited once");
        if k < n_eval {
            eval.push(item);
        } else {
            train.push(item);
        }
    }
    Ok((train, eval))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_tensor(n_frames: usize, vx: f64) -> TrajectoryTensor {
        let agents = football_roster(1);
        let mut values = Vec::new();
        for i in 0..agents.len() {
            for f in 0..n_frames {
                values.push(40.0 + i as f64 + vx * f as f64 / 25.0);
                values.push(30.0 + i as f64);
            }
        }
        TrajectoryTensor::new(agents, n_frames, values, 25.0, PitchSpec::default()).unwrap()
    }

    #[test]
    fn downsample_paper_rate() {
        let t = line_tensor(240, 1.0);
        let d = downsample(&t, 4).unwrap();
        assert_eq!(d.n_frames(), 60);
        assert_eq!(d.frame_rate_hz(), 6.25);
        assert_eq!(downsample(&t, 1).unwrap(), t);
    }

    #[test]
    fn downsample_truncates_and_rejects_zero() {
        let t = line_tensor(7, 1.0);
        let d = downsample(&t, 4).unwrap();
        assert_eq!(d.n_frames(), 2);
        assert_eq!(d.pos(0, 1), t.pos(0, 4));
        assert!(matches!(downsample(&t, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn realign_reflects_leftward_play() {
        let right = line_tensor(10, 1.0);
        assert_eq!(realign_attack_direction(&right, Possession::Home), right);
        let left = line_tensor(10, -1.0);
        let r = realign_attack_direction(&left, Possession::Home);
        for i in 0..3 {
            for f in 0..10 {
                assert_eq!(r.pos(i, f)[0], 105.0 - left.pos(i, f)[0]);
                assert_eq!(r.pos(i, f)[1], left.pos(i, f)[1]);
            }
        }
    }

    #[test]
    fn masked_mix_cases() {
        let gt = Mat::from_vec(1, 2, vec![1.0, 1.0]);
        let est = Mat::from_vec(1, 2, vec![3.0, 5.0]);
        assert_eq!(masked_mix(&gt, &est, &[false]).unwrap(), est);
        assert_eq!(masked_mix(&gt, &est, &[true]).unwrap(), gt);
        assert!(masked_mix(&gt, &est, &[true, false]).is_err());
    }

    #[test]
    fn split_rounding_and_determinism() {
        let (train, eval) = split_train_eval((0..100).collect(), 0.2, 7).unwrap();
        assert_eq!((train.len(), eval.len()), (80, 20));
        let (train2, eval2) = split_train_eval((0..100).collect(), 0.2, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(eval, eval2);
        let (train3, _) = split_train_eval((0..100).collect(), 0.2, 8).unwrap();
        assert_ne!(train, train3);

        let (train, eval) = split_train_eval(vec![(); 34862], 0.1155, 1).unwrap();
        assert_eq!((train.len(), eval.len()), (30836, 4026));
        assert!(split_train_eval(Vec::<u8>::new(), 0.2, 1).is_err());
    }

    #[test]
    fn validation_catches_bad_tensors() {
        let agents = football_roster(1);
        let bad = TrajectoryTensor::new(agents.clone(), 1, vec![0.0, 0.0, 200.0, 0.0, 0.0, 0.0], 25.0, PitchSpec::default());
        assert!(matches!(bad, Err(Error::Invariant(_))));
        let nan = TrajectoryTensor::new(agents, 1, vec![0.0, f64::NAN, 0.0, 0.0, 0.0, 0.0], 25.0, PitchSpec::default());
        assert!(matches!(nan, Err(Error::Invariant(_))));
        assert!(PitchSpec::new(68.0, 105.0).is_err());
    }

    #[test]
    fn mask_requires_an_observation_per_agent() {
        let m = MaskTensor::from_rows(&[vec![1, 0], vec![0, 0]]).unwrap();
        assert!(matches!(m.validate(), Err(Error::Invariant(_))));
        assert!(MaskTensor::from_rows(&[vec![2]]).is_err());
    }
}
