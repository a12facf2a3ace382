//! Simulated broadcast camera that tracks the ball and masks every player
//! outside its projected field of view.
//!
//! The view frustum is a rectangular pyramid around the ray from the camera
//! to the ball on the ground. Its four corner rays are intersected with the
//! pitch plane `z = 0` and the resulting quadrilateral is clipped to the
//! pitch rectangle. Corner rays at or above the horizon never reach the
//! ground; they are replaced by ground points [`HORIZON_DISTANCE_M`] away in
//! the ray's horizontal direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracking::{MaskTensor, PitchSpec, TrajectoryTensor};

pub const HORIZON_DISTANCE_M: f64 = 10_000.0;

/// Tolerance used for on-boundary containment tests.
pub const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    #[default]
    TrackBall,
}

/// Camera pose and full field-of-view angles (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub position: [f64; 3],
    pub h_fov: f64,
    pub v_fov: f64,
    #[serde(default)]
    pub target_mode: TargetMode,
}

impl CameraConfig {
    /// Halfway-line broadcast position 25 m behind the touchline, 12 m up.
    pub fn broadcast_preset(pitch: &PitchSpec) -> Self {
        CameraConfig {
            position: [pitch.length_m / 2.0, -25.0, 12.0],
            h_fov: 35f64.to_radians(),
            v_fov: 22.5f64.to_radians(),
            target_mode: TargetMode::TrackBall,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.position[2] > 0.0) || !self.position.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!(
                "camera must sit above the pitch plane, got z = {}",
                self.position[2]
            )));
        }
        for (name, a) in [("h_fov", self.h_fov), ("v_fov", self.v_fov)] {
            if !(a > 0.0 && a < std::f64::consts::PI) {
                return Err(Error::Config(format!("{name} must lie in (0, pi), got {a}")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cam: CameraConfig = serde_json::from_str(&text)?;
        cam.validate()?;
        Ok(cam)
    }
}

type V3 = [f64; 3];

fn sub3(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: V3) -> Option<V3> {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    (n > 1e-15).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

/// Directions of the four frustum corner rays, in order
/// (left-bottom, right-bottom, right-top, left-top) of the image.
pub fn frustum_corner_rays(cam: &CameraConfig, target: [f64; 2]) -> Result<[V3; 4]> {
    cam.validate()?;
    let forward = normalize(sub3([target[0], target[1], 0.0], cam.position))
        .ok_or_else(|| Error::EmptyPolygon("camera coincides with its target".into()))?;
    if forward[2] >= 0.0 {
        return Err(Error::EmptyPolygon(
            "camera normal does not point towards the pitch plane".into(),
        ));
    }
    let right = normalize(cross(forward, [0.0, 0.0, 1.0])).unwrap_or([1.0, 0.0, 0.0]);
    let up = cross(right, forward);
    let th = (cam.h_fov / 2.0).tan();
    let tv = (cam.v_fov / 2.0).tan();
    let corner = |sr: f64, su: f64| -> V3 {
        [
            forward[0] + sr * th * right[0] + su * tv * up[0],
            forward[1] + sr * th * right[1] + su * tv * up[1],
            forward[2] + sr * th * right[2] + su * tv * up[2],
        ]
    };
    Ok([
        corner(-1.0, -1.0),
        corner(1.0, -1.0),
        corner(1.0, 1.0),
        corner(-1.0, 1.0),
    ])
}

/// Ground point hit by a ray from the camera, or the horizon stand-in.
pub fn ray_ground_point(origin: V3, dir: V3) -> Result<[f64; 2]> {
    if dir[2] < 0.0 {
        let s = -origin[2] / dir[2];
        return Ok([origin[0] + s * dir[0], origin[1] + s * dir[1]]);
    }
    let h = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
    if h < 1e-15 {
        return Err(Error::EmptyPolygon("corner ray points straight up".into()));
    }
    Ok([
        origin[0] + HORIZON_DISTANCE_M * dir[0] / h,
        origin[1] + HORIZON_DISTANCE_M * dir[1] / h,
    ])
}

/// Unclipped ground quadrilateral of the frustum.
pub fn frustum_footprint(cam: &CameraConfig, target: [f64; 2]) -> Result<[[f64; 2]; 4]> {
    let rays = frustum_corner_rays(cam, target)?;
    let mut out = [[0.0; 2]; 4];
    for (o, r) in out.iter_mut().zip(rays) {
        *o = ray_ground_point(cam.position, r)?;
    }
    Ok(out)
}

/// Counterclockwise polygon on the pitch plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPolygon {
    vertices: Vec<[f64; 2]>,
}

impl ViewPolygon {
    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    /// Point-in-polygon test; points on the boundary count as inside.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let v = &self.vertices;
        let n = v.len();
        for k in 0..n {
            if point_segment_distance(p, v[k], v[(k + 1) % n]) <= BOUNDARY_EPS {
                return true;
            }
        }
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (v[i], v[j]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }
}

pub fn signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|k| {
            let (a, b) = (v[k], v[(k + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - s * ab[0], ap[1] - s * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Clips `poly` against the half-plane `keep(p) >= 0` where `keep` is affine.
fn clip_half_plane(poly: &[[f64; 2]], keep: impl Fn([f64; 2]) -> f64) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    let n = poly.len();
    for k in 0..n {
        let (cur, next) = (poly[k], poly[(k + 1) % n]);
        let (dc, dn) = (keep(cur), keep(next));
        if dc >= 0.0 {
            out.push(cur);
        }
        if (dc >= 0.0) != (dn >= 0.0) {
            let s = dc / (dc - dn);
            out.push([cur[0] + s * (next[0] - cur[0]), cur[1] + s * (next[1] - cur[1])]);
        }
    }
    out
}

/// Sutherland–Hodgman clip of any polygon to the pitch rectangle.
pub fn clip_to_pitch(poly: &[[f64; 2]], pitch: &PitchSpec) -> Vec<[f64; 2]> {
    let (l, w) = (pitch.length_m, pitch.width_m);
    let mut p = poly.to_vec();
    p = clip_half_plane(&p, |q| q[0]);
    p = clip_half_plane(&p, |q| l - q[0]);
    p = clip_half_plane(&p, |q| q[1]);
    p = clip_half_plane(&p, |q| w - q[1]);
    let mut dedup: Vec<[f64; 2]> = Vec::with_capacity(p.len());
    for q in p {
        if dedup
            .last()
            .is_none_or(|last| (last[0] - q[0]).abs() > 1e-12 || (last[1] - q[1]).abs() > 1e-12)
        {
            dedup.push(q);
        }
    }
    while dedup.len() > 1 {
        let (first, last) = (dedup[0], dedup[dedup.len() - 1]);
        if (first[0] - last[0]).abs() <= 1e-12 && (first[1] - last[1]).abs() <= 1e-12 {
            dedup.pop();
        } else {
            break;
        }
    }
    dedup
}

/// In-frame region of the pitch for a camera aimed at `target`.
pub fn view_polygon(cam: &CameraConfig, target: [f64; 2], pitch: &PitchSpec) -> Result<ViewPolygon> {
    if !pitch.contains(target[0], target[1], 0.0) {
        return Err(Error::Argument(format!(
            "camera target ({}, {}) lies off the pitch",
            target[0], target[1]
        )));
    }
    let quad = frustum_footprint(cam, target)?;
    let mut vertices = clip_to_pitch(&quad, pitch);
    if vertices.len() < 3 {
        return Err(Error::EmptyPolygon(format!(
            "frustum misses the pitch ({} vertices after clipping)",
            vertices.len()
        )));
    }
    if signed_area(&vertices) < 0.0 {
        vertices.reverse();
    }
    Ok(ViewPolygon { vertices })
}

fn clamp_to_pitch(p: [f64; 2], pitch: &PitchSpec) -> [f64; 2] {
    [p[0].clamp(0.0, pitch.length_m), p[1].clamp(0.0, pitch.width_m)]
}

/// Masks every agent outside the ball-tracking camera's view.
///
/// The ball is always observed and the first and last `warmup_frames`
/// frames are forced observed for every agent.
pub fn make_mask(traj: &TrajectoryTensor, cam: &CameraConfig, warmup_frames: usize) -> Result<MaskTensor> {
    let ball = traj
        .ball_index()
        .ok_or_else(|| Error::Config("camera masking needs a ball agent to track".into()))?;
    cam.validate()?;
    let (n, frames) = (traj.n_agents(), traj.n_frames());
    let pitch = traj.pitch();
    let mut mask = MaskTensor::all_observed(n, frames);
    for t in 0..frames {
        if t < warmup_frames || t + warmup_frames >= frames {
            continue;
        }
        let target = clamp_to_pitch(traj.pos(ball, t), &pitch);
        let poly = view_polygon(cam, target, &pitch)?;
        for i in (0..n).filter(|&i| i != ball) {
            mask.set(i, t, poly.contains(traj.pos(i, t)));
        }
    }
    Ok(mask)
}

/// Visibility statistics of one or more masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub mean_in_frame: f64,
    pub std_in_frame: f64,
    pub mean_visible_run_s: f64,
    pub std_visible_run_s: f64,
}

/// Pooled coverage statistics over several masks.
///
/// In-frame counts are taken per frame over every frame; visible runs are
/// maximal stretches of consecutive observed frames per agent, measured only
/// outside the warm-up frames and converted to seconds. `exclude` removes an
/// agent (typically the ball) from both statistics. Standard deviations use
/// the population convention.
pub fn coverage_stats(
    masks: &[&MaskTensor],
    frame_rate_hz: f64,
    exclude: Option<usize>,
    warmup_frames: usize,
) -> Result<CoverageStats> {
    if !(frame_rate_hz > 0.0) {
        return Err(Error::Argument("frame rate must be positive".into()));
    }
    let mut counts = Vec::new();
    let mut runs = Vec::new();
    for mask in masks {
        let (n, frames) = (mask.n_agents(), mask.n_frames());
        let agents: Vec<usize> = (0..n).filter(|&i| Some(i) != exclude).collect();
        for t in 0..frames {
            counts.push(agents.iter().filter(|&&i| mask.get(i, t)).count() as f64);
        }
        let lo = warmup_frames.min(frames);
        let hi = frames.saturating_sub(warmup_frames).max(lo);
        for &i in &agents {
            let mut run = 0usize;
            for t in lo..hi {
                if mask.get(i, t) {
                    run += 1;
                } else if run > 0 {
                    runs.push(run as f64 / frame_rate_hz);
                    run = 0;
                }
            }
            if run > 0 {
                runs.push(run as f64 / frame_rate_hz);
            }
        }
    }
    let (mean_in_frame, std_in_frame) = mean_std(&counts);
    let (mean_visible_run_s, std_visible_run_s) = mean_std(&runs);
    Ok(CoverageStats {
        mean_in_frame,
        std_in_frame,
        mean_visible_run_s,
        std_visible_run_s,
    })
}

/// Mean and population standard deviation; zeros for empty input.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::{football_roster, PitchSpec};

    fn preset() -> (CameraConfig, PitchSpec) {
        let pitch = PitchSpec::default();
        (CameraConfig::broadcast_preset(&pitch), pitch)
    }

    #[test]
    fn target_is_inside_its_view() {
        let (cam, pitch) = preset();
        for target in [[52.5, 34.0], [10.0, 60.0], [100.0, 5.0], [0.0, 0.0]] {
            let poly = view_polygon(&cam, target, &pitch).unwrap();
            assert!(poly.contains(target), "target {target:?} not in view");
            assert!((3..=8).contains(&poly.vertices().len()));
            assert!(signed_area(poly.vertices()) > 0.0);
        }
    }

    #[test]
    fn far_point_behind_camera_is_outside() {
        let (cam, pitch) = preset();
        let poly = view_polygon(&cam, [52.5, 34.0], &pitch).unwrap();
        assert!(!poly.contains([52.5, -25.0 - 10_000.0]));
    }

    #[test]
    fn config_errors() {
        let (mut cam, pitch) = preset();
        cam.position[2] = 0.0;
        assert!(matches!(view_polygon(&cam, [50.0, 30.0], &pitch), Err(Error::Config(_))));
        let (mut cam, _) = preset();
        cam.h_fov = std::f64::consts::PI;
        assert!(cam.validate().is_err());
    }

    #[test]
    fn area_is_bounded_by_pitch() {
        let (cam, pitch) = preset();
        let poly = view_polygon(&cam, [52.5, 34.0], &pitch).unwrap();
        assert!(poly.area() > 0.0 && poly.area() <= pitch.area());
    }

    #[test]
    fn coverage_of_degenerate_masks() {
        let all = MaskTensor::all_observed(23, 60);
        let s = coverage_stats(&[&all], 6.25, Some(0), 0).unwrap();
        assert_eq!(s.mean_in_frame, 22.0);
        assert_eq!(s.std_in_frame, 0.0);
        assert!((s.mean_visible_run_s - 9.6).abs() < 1e-12);
        assert!(s.std_visible_run_s < 1e-12);

        let ball_only = MaskTensor::from_fn(23, 60, |i, _| i == 0);
        let s = coverage_stats(&[&ball_only], 6.25, Some(0), 0).unwrap();
        assert_eq!(s.mean_in_frame, 0.0);
        assert_eq!(s.mean_visible_run_s, 0.0);
    }

    #[test]
    fn mask_needs_ball() {
        let agents: Vec<_> = football_roster(1).into_iter().skip(1).collect();
        let t = TrajectoryTensor::new(agents, 1, vec![1.0, 1.0, 2.0, 2.0], 25.0, PitchSpec::default()).unwrap();
        let (cam, _) = preset();
        assert!(matches!(make_mask(&t, &cam, 0), Err(Error::Config(_))));
    }
}
