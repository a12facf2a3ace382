//! Pitch plots of a window: observed trajectory segments in dark team
//! colours, hidden ones in light team colours, the ball in black and any
//! imputation samples overlaid as dashed light lines.
//!
//! The home team is drawn as the attacking team. SVG output is plain text
//! with fixed number formatting, so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracking::{SequenceWindow, Team, TrajectoryTensor, PITCH_MARGIN_M};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotFormat {
    Svg,
    Png,
}

impl PlotFormat {
    /// Format implied by a file extension, SVG unless it is `.png`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("png") => PlotFormat::Png,
            _ => PlotFormat::Svg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotStyle {
    pub observed_attacker: [u8; 3],
    pub observed_defender: [u8; 3],
    pub unobserved_attacker: [u8; 3],
    pub unobserved_defender: [u8; 3],
    pub ball: [u8; 3],
    pub format: PlotFormat,
    /// Pixels per metre.
    pub dots_per_unit: f64,
}

impl Default for PlotStyle {
    fn default() -> Self {
        PlotStyle {
            observed_attacker: [0x1f, 0x3a, 0x93],
            observed_defender: [0xd6, 0x27, 0x28],
            unobserved_attacker: [0x8e, 0xc5, 0xf0],
            unobserved_defender: [0xf4, 0xa6, 0xc0],
            ball: [0, 0, 0],
            format: PlotFormat::Svg,
            dots_per_unit: 8.0,
        }
    }
}

impl PlotStyle {
    pub fn validate(&self) -> Result<()> {
        let colours = [
            self.observed_attacker,
            self.observed_defender,
            self.unobserved_attacker,
            self.unobserved_defender,
            self.ball,
        ];
        for i in 0..colours.len() {
            for j in i + 1..colours.len() {
                if colours[i] == colours[j] {
                    return Err(Error::Config("plot colours must be distinct".into()));
                }
            }
        }
        if !(self.dots_per_unit > 0.0 && self.dots_per_unit.is_finite()) {
            return Err(Error::Config("dots_per_unit must be positive".into()));
        }
        Ok(())
    }

    fn colour(&self, team: Team, observed: bool) -> [u8; 3] {
        match (team, observed) {
            (Team::Ball, _) => self.ball,
            (Team::Home, true) => self.observed_attacker,
            (Team::Home, false) => self.unobserved_attacker,
            (Team::Away, true) => self.observed_defender,
            (Team::Away, false) => self.unobserved_defender,
        }
    }
}

/// A run of consecutive frames drawn in one colour.
#[derive(Debug, Clone, PartialEq)]
struct Stroke {
    points: Vec<[f64; 2]>,
    colour: [u8; 3],
    dashed: bool,
}

/// Splits each agent's path into runs of observed and hidden segments. A
/// segment is observed when both of its end frames are.
fn strokes(window: &SequenceWindow, predictions: &[TrajectoryTensor], style: &PlotStyle) -> Vec<Stroke> {
    let truth = &window.trajectory;
    let frames = truth.n_frames();
    let mut out = Vec::new();
    let seg_observed = |i: usize, t: usize| window.mask.get(i, t) && window.mask.get(i, t + 1);
    // Hidden truth first, then samples, then observed segments and the ball
    // on top. The ball counts as always observed.
    let layer = |source: &TrajectoryTensor, want_observed: bool, dashed: bool, out: &mut Vec<Stroke>| {
        for (i, agent) in truth.agents().iter().enumerate() {
            let mut current: Option<Stroke> = None;
            for t in 0..frames.saturating_sub(1) {
                let obs = agent.team == Team::Ball || seg_observed(i, t);
                if obs == want_observed {
                    let s = current.get_or_insert_with(|| Stroke {
                        points: vec![source.pos(i, t)],
                        colour: style.colour(agent.team, obs),
                        dashed,
                    });
                    s.points.push(source.pos(i, t + 1));
                } else if let Some(s) = current.take() {
                    out.push(s);
                }
            }
            out.extend(current);
        }
    };
    layer(truth, false, false, &mut out);
    for p in predictions {
        layer(p, false, true, &mut out);
    }
    layer(truth, true, false, &mut out);
    out
}

struct Frame {
    scale: f64,
    width: f64,
    height: f64,
    pitch_len: f64,
    pitch_wid: f64,
}

impl Frame {
    fn new(truth: &TrajectoryTensor, style: &PlotStyle) -> Self {
        let p = truth.pitch();
        let s = style.dots_per_unit;
        Frame {
            scale: s,
            width: (p.length_m + 2.0 * PITCH_MARGIN_M) * s,
            height: (p.width_m + 2.0 * PITCH_MARGIN_M) * s,
            pitch_len: p.length_m,
            pitch_wid: p.width_m,
        }
    }

    /// Pitch metres to pixels, y pointing down.
    fn px(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] + PITCH_MARGIN_M) * self.scale,
            (self.pitch_wid + PITCH_MARGIN_M - p[1]) * self.scale,
        ]
    }
}

fn check_shapes(window: &SequenceWindow, predictions: &[TrajectoryTensor]) -> Result<()> {
    let t = &window.trajectory;
    for (k, p) in predictions.iter().enumerate() {
        if p.n_agents() != t.n_agents() || p.n_frames() != t.n_frames() {
            return Err(Error::Argument(format!(
                "prediction {k} has shape {}x{}, the window {}x{}",
                p.n_agents(),
                p.n_frames(),
                t.n_agents(),
                t.n_frames()
            )));
        }
    }
    Ok(())
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Renders the window as an SVG document.
pub fn render_svg(window: &SequenceWindow, predictions: &[TrajectoryTensor], style: &PlotStyle) -> Result<String> {
    style.validate()?;
    check_shapes(window, predictions)?;
    let f = Frame::new(&window.trajectory, style);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.2}" height="{:.2}" viewBox="0 0 {:.2} {:.2}">"#,
        f.width, f.height, f.width, f.height
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{:.2}" height="{:.2}" fill="#ffffff"/>"##, f.width, f.height);
    let tl = f.px([0.0, f.pitch_wid]);
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#808080" stroke-width="1.5"/>"##,
        tl[0],
        tl[1],
        f.pitch_len * f.scale,
        f.pitch_wid * f.scale
    );
    let top = f.px([f.pitch_len / 2.0, f.pitch_wid]);
    let bottom = f.px([f.pitch_len / 2.0, 0.0]);
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#808080" stroke-width="1"/>"##,
        top[0], top[1], bottom[0], bottom[1]
    );
    for st in strokes(window, predictions, style) {
        let pts: Vec<String> = st
            .points
            .iter()
            .map(|&p| {
                let q = f.px(p);
                format!("{:.2},{:.2}", q[0], q[1])
            })
            .collect();
        let dash = if st.dashed { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"{dash}/>"#,
            pts.join(" "),
            hex(st.colour)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Renders the window as a raster image.
pub fn render_png(window: &SequenceWindow, predictions: &[TrajectoryTensor], style: &PlotStyle) -> Result<RgbImage> {
    style.validate()?;
    check_shapes(window, predictions)?;
    let f = Frame::new(&window.trajectory, style);
    let mut img = RgbImage::from_pixel(f.width.ceil() as u32, f.height.ceil() as u32, Rgb([255, 255, 255]));
    let grey = [128, 128, 128];
    let corners = [[0.0, 0.0], [f.pitch_len, 0.0], [f.pitch_len, f.pitch_wid], [0.0, f.pitch_wid], [0.0, 0.0]];
    for w in corners.windows(2) {
        draw_line(&mut img, f.px(w[0]), f.px(w[1]), grey, false);
    }
    draw_line(&mut img, f.px([f.pitch_len / 2.0, 0.0]), f.px([f.pitch_len / 2.0, f.pitch_wid]), grey, false);
    for st in strokes(window, predictions, style) {
        for w in st.points.windows(2) {
            draw_line(&mut img, f.px(w[0]), f.px(w[1]), st.colour, st.dashed);
        }
    }
    Ok(img)
}

/// Two-pixel line by uniform sampling along its length.
fn draw_line(img: &mut RgbImage, a: [f64; 2], b: [f64; 2], colour: [u8; 3], dashed: bool) {
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    let steps = (len * 2.0).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let u = k as f64 / steps as f64;
        if dashed && ((u * len) as usize / 4) % 2 == 1 {
            continue;
        }
        let x = a[0] + u * (b[0] - a[0]);
        let y = a[1] + u * (b[1] - a[1]);
        for (dx, dy) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
            let (px, py) = ((x + dx - 0.5).floor(), (y + dy - 0.5).floor());
            if px >= 0.0 && py >= 0.0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, Rgb(colour));
            }
        }
    }
}

/// Writes the plot to `path` in `style.format`.
pub fn plot_sequence(
    path: impl AsRef<Path>,
    window: &SequenceWindow,
    predictions: &[TrajectoryTensor],
    style: &PlotStyle,
) -> Result<()> {
    let path = path.as_ref();
    match style.format {
        PlotFormat::Svg => {
            let svg = render_svg(window, predictions, style)?;
            fs::write(path, svg).map_err(|e| Error::io(path, e))
        }
        PlotFormat::Png => {
            let img = render_png(window, predictions, style)?;
            img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Invariant(format!("png encoding failed: {other}")),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::{AgentMeta, MaskTensor, PitchSpec};

    fn toy(mask: MaskTensor) -> SequenceWindow {
        let agents = vec![
            AgentMeta::new(Team::Ball, "ball"),
            AgentMeta::new(Team::Home, "H1"),
            AgentMeta::new(Team::Away, "A1"),
        ];
        let values = (0..3 * 4)
            .flat_map(|k| [10.0 + 3.0 * k as f64, 20.0 + (k % 5) as f64])
            .collect();
        let t = TrajectoryTensor::new(agents, 4, values, 25.0, PitchSpec::default()).unwrap();
        SequenceWindow::new(t, mask, "toy", 0).unwrap()
    }

    #[test]
    fn all_observed_has_no_light_colours() {
        let w = toy(MaskTensor::all_observed(3, 4));
        let style = PlotStyle::default();
        let svg = render_svg(&w, &[], &style).unwrap();
        assert!(!svg.contains(&hex(style.unobserved_attacker)));
        assert!(!svg.contains(&hex(style.unobserved_defender)));
        assert!(svg.contains(&hex(style.observed_attacker)));
        assert!(svg.contains(&hex(style.observed_defender)));
    }

    #[test]
    fn ball_is_black_and_hidden_runs_are_light() {
        let mask = MaskTensor::from_rows(&[vec![1, 1, 1, 1], vec![1, 0, 1, 1], vec![1, 1, 1, 1]]).unwrap();
        let w = toy(mask);
        let style = PlotStyle::default();
        let st = strokes(&w, &[], &style);
        let ball_strokes: Vec<&Stroke> = st.iter().filter(|s| s.colour == style.ball).collect();
        assert_eq!(ball_strokes.len(), 1);
        assert_eq!(ball_strokes[0].points.len(), 4);
        let light: Vec<&Stroke> = st.iter().filter(|s| s.colour == style.unobserved_attacker).collect();
        assert_eq!(light.len(), 1);
        assert_eq!(light[0].points.len(), 3);
    }

    #[test]
    fn svg_is_deterministic_and_rejects_bad_shapes() {
        let w = toy(MaskTensor::all_observed(3, 4));
        let style = PlotStyle::default();
        assert_eq!(render_svg(&w, &[], &style).unwrap(), render_svg(&w, &[], &style).unwrap());
        let other = toy(MaskTensor::all_observed(3, 4)).trajectory.permute_agents(&[0, 1, 2]);
        assert!(render_svg(&w, &[other], &style).is_ok());
        let short = TrajectoryTensor::new(w.trajectory.agents().to_vec(), 1, vec![1.0; 6], 25.0, PitchSpec::default()).unwrap();
        assert!(matches!(render_svg(&w, &[short], &style), Err(Error::Argument(_))));
    }

    #[test]
    fn duplicate_colours_are_rejected() {
        let style = PlotStyle {
            ball: [0x1f, 0x3a, 0x93],
            ..Default::default()
        };
        assert!(style.validate().is_err());
    }
}
