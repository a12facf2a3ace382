//! Gap schedules and forward/backward fusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracking::MaskTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Mean,
    Nearest,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(FusionMode::Mean),
            "nearest" => Ok(FusionMode::Nearest),
            other => Err(Error::Argument(format!("unknown fusion mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Mean => "mean",
            FusionMode::Nearest => "nearest",
        })
    }
}

/// Distance in frames to the nearest observation on each side.
///
/// `forward[i][t]` counts frames until the next observation at or after `t`;
/// `backward[i][t]` counts frames back to the latest observation at or
/// before `t`. `None` means there is no observation on that side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GapSchedule {
    n_frames: usize,
    forward: Vec<Option<usize>>,
    backward: Vec<Option<usize>>,
}

impl GapSchedule {
    pub fn forward(&self, agent: usize, t: usize) -> Option<usize> {
        self.forward[agent * self.n_frames + t]
    }

    pub fn backward(&self, agent: usize, t: usize) -> Option<usize> {
        self.backward[agent * self.n_frames + t]
    }
}

pub fn gap_schedule(mask: &MaskTensor) -> Result<GapSchedule> {
    mask.validate()?;
    let (n, frames) = (mask.n_agents(), mask.n_frames());
    let mut forward = vec![None; n * frames];
    let mut backward = vec![None; n * frames];
    for i in 0..n {
        let mut last: Option<usize> = None;
        for t in 0..frames {
            if mask.get(i, t) {
                last = Some(t);
            }
            backward[i * frames + t] = last.map(|s| t - s);
        }
        let mut next: Option<usize> = None;
        for t in (0..frames).rev() {
            if mask.get(i, t) {
                next = Some(t);
            }
            forward[i * frames + t] = next.map(|s| s - t);
        }
    }
    Ok(GapSchedule {
        n_frames: frames,
        forward,
        backward,
    })
}

/// Weights `(w_forward, w_backward)` of the gap-weighted fusion.
///
/// The forward estimate is weighted by the gap to the next future
/// observation and vice versa, so the direction that saw an observation
/// more recently dominates. A missing observation on one side acts as an
/// infinite gap.
pub fn fusion_weights(tau_fwd: Option<usize>, tau_bwd: Option<usize>) -> Result<(f64, f64)> {
    match (tau_fwd, tau_bwd) {
        (None, None) => Err(Error::Invariant(
            "no observation on either side of the fused step".into(),
        )),
        (None, Some(_)) => Ok((1.0, 0.0)),
        (Some(_), None) => Ok((0.0, 1.0)),
        (Some(0), Some(0)) => Err(Error::UndefinedFusionWeight),
        (Some(f), Some(b)) => {
            let total = (f + b) as f64;
            Ok((f as f64 / total, b as f64 / total))
        }
    }
}

pub fn fuse_mean(fwd: &[f64], bwd: &[f64]) -> Vec<f64> {
    fwd.iter().zip(bwd).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// `(tau_fwd * fwd + tau_bwd * bwd) / (tau_fwd + tau_bwd)`.
pub fn fuse_nearest(fwd: &[f64], bwd: &[f64], tau_fwd: Option<usize>, tau_bwd: Option<usize>) -> Result<Vec<f64>> {
    let (wf, wb) = fusion_weights(tau_fwd, tau_bwd)?;
    Ok(match (tau_fwd, tau_bwd) {
        (Some(f), Some(b)) => {
            let total = (f + b) as f64;
            fwd.iter()
                .zip(bwd)
                .map(|(x, y)| (f as f64 * x + b as f64 * y) / total)
                .collect()
        }
        _ => fwd.iter().zip(bwd).map(|(x, y)| wf * x + wb * y).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_scan_example() {
        let m = MaskTensor::from_rows(&[vec![1, 0, 0, 1]]).unwrap();
        let g = gap_schedule(&m).unwrap();
        let fwd: Vec<_> = (0..4).map(|t| g.forward(0, t).unwrap()).collect();
        let bwd: Vec<_> = (0..4).map(|t| g.backward(0, t).unwrap()).collect();
        assert_eq!(fwd, vec![0, 2, 1, 0]);
        assert_eq!(bwd, vec![0, 1, 2, 0]);
    }

    #[test]
    fn all_observed_has_zero_gaps() {
        let g = gap_schedule(&MaskTensor::all_observed(3, 5)).unwrap();
        for i in 0..3 {
            for t in 0..5 {
                assert_eq!(g.forward(i, t), Some(0));
                assert_eq!(g.backward(i, t), Some(0));
            }
        }
    }

    #[test]
    fn never_observed_agent_is_rejected() {
        let m = MaskTensor::from_rows(&[vec![1, 1], vec![0, 0]]).unwrap();
        assert!(matches!(gap_schedule(&m), Err(Error::Invariant(_))));
    }

    #[test]
    fn fusion_cases() {
        assert_eq!(fuse_mean(&[0.0, 0.0], &[2.0, 4.0]), vec![1.0, 2.0]);
        assert_eq!(fuse_nearest(&[1.0], &[3.0], Some(2), Some(2)).unwrap(), fuse_mean(&[1.0], &[3.0]));
        assert_eq!(fuse_nearest(&[1.0, 2.0], &[9.0, 9.0], Some(4), Some(0)).unwrap(), vec![1.0, 2.0]);
        assert!(matches!(
            fuse_nearest(&[1.0], &[2.0], Some(0), Some(0)),
            Err(Error::UndefinedFusionWeight)
        ));
        assert_eq!(fusion_weights(None, Some(3)).unwrap(), (1.0, 0.0));
    }
}
