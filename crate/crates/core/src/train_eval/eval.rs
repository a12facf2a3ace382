//! Evaluation loss on unobserved entries, sampled L2(Mean) / L2(Min), and
//! results tables.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::mean_std;
use crate::error::{Error, Result};
use crate::imputer::FusionMode;
use crate::model::{Model, ModelKind};
use crate::tracking::{MaskTensor, SequenceWindow, TrajectoryTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricUnits {
    Meters,
    /// x divided by the pitch length and y by the pitch width.
    PitchNormalized,
}

impl fmt::Display for MetricUnits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricUnits::Meters => "meters",
            MetricUnits::PitchNormalized => "pitch_normalized",
        })
    }
}

impl FromStr for MetricUnits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "meters" => Ok(MetricUnits::Meters),
            "pitch_normalized" => Ok(MetricUnits::PitchNormalized),
            _ => Err(Error::Argument(format!("unknown metric units {s:?}"))),
        }
    }
}

/// Mean Euclidean distance between `pred` and `truth` over the agent-frames
/// that `mask` marks unobserved, in the tensors' own units. Observed entries
/// of `pred` are never read.
pub fn l2_eval(pred: &TrajectoryTensor, truth: &TrajectoryTensor, mask: &MaskTensor) -> Result<f64> {
    l2_eval_scaled(pred, truth, mask, [1.0, 1.0])
}

/// [`l2_eval`] in the requested units. Pitch-normalised distances divide x
/// by the pitch length and y by the pitch width of `truth` first.
pub fn l2_eval_units(
    pred: &TrajectoryTensor,
    truth: &TrajectoryTensor,
    mask: &MaskTensor,
    units: MetricUnits,
) -> Result<f64> {
    let p = truth.pitch();
    let scale = match units {
        MetricUnits::Meters => [1.0, 1.0],
        MetricUnits::PitchNormalized => [1.0 / p.length_m, 1.0 / p.width_m],
    };
    l2_eval_scaled(pred, truth, mask, scale)
}

fn l2_eval_scaled(pred: &TrajectoryTensor, truth: &TrajectoryTensor, mask: &MaskTensor, s: [f64; 2]) -> Result<f64> {
    let shape = |t: &TrajectoryTensor| (t.n_agents(), t.n_frames());
    if shape(pred) != shape(truth) || shape(truth) != (mask.n_agents(), mask.n_frames()) {
        return Err(Error::Argument(format!(
            "shape mismatch: prediction {:?}, ground truth {:?}, mask {:?}",
            shape(pred),
            shape(truth),
            (mask.n_agents(), mask.n_frames())
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..truth.n_agents() {
        for t in 0..truth.n_frames() {
            if mask.get(i, t) {
                continue;
            }
            let (a, b) = (pred.pos(i, t), truth.pos(i, t));
            let dx = (a[0] - b[0]) * s[0];
            let dy = (a[1] - b[1]) * s[1];
            sum += dx.hypot(dy);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NothingToEvaluate);
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub n_samples: usize,
    pub fusion: FusionMode,
    pub seed: u64,
    pub units: MetricUnits,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_samples: 6,
            fusion: FusionMode::Nearest,
            seed: 0,
            units: MetricUnits::Meters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub l2_samples: Vec<f64>,
    pub l2_mean: f64,
    pub l2_min: f64,
}

/// Evaluation of one model with one seed over a window set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub flags: String,
    pub fusion: FusionMode,
    pub seed: u64,
    pub n_samples: usize,
    pub units: MetricUnits,
    pub l2_mean: f64,
    pub l2_min: f64,
    pub sequences: Vec<SequenceRecord>,
    pub warnings: Vec<String>,
}

/// Ablation flags of a model as a short label, `none` when no flag is set.
pub fn flags_label(model: &Model) -> String {
    let spec = model.spec();
    let names: &[&str] = match model.kind() {
        ModelKind::GraphImputer | ModelKind::Gvrnn => &["skip_connection", "next_step_cond_decoder"],
        ModelKind::RoleInvariantVrnn => &["skip_connection"],
        _ => &[],
    };
    let on: Vec<&str> = names
        .iter()
        .copied()
        .filter(|n| spec.config.get(*n).and_then(|v| v.as_bool()) == Some(true))
        .collect();
    if on.is_empty() {
        "none".into()
    } else {
        on.join("+")
    }
}

/// Per-sample losses reduced to (mean, min) with `min <= mean` exactly:
/// the mean is taken as `min + mean(x - min)`, and every `x - min` is
/// non-negative in floating point.
fn mean_and_min(xs: &[f64]) -> (f64, f64) {
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let excess = xs.iter().map(|x| x - min).sum::<f64>() / xs.len() as f64;
    (min + excess, min)
}

fn per_window_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Draws `n_samples` imputations per window and reports L2(Mean), the mean
/// over windows of the per-window sample mean, and L2(Min), the mean over
/// windows of the per-window best sample.
///
/// Windows without unobserved entries are skipped with a warning. Every
/// sample is checked to reproduce the observed entries exactly, and the
/// result satisfies `l2_min <= l2_mean`.
pub fn l2_min_eval(model: &Model, windows: &[SequenceWindow], opts: &EvalOptions) -> Result<EvalReport> {
    if opts.n_samples == 0 {
        return Err(Error::Argument("n_samples must be at least 1".into()));
    }
    let mut warnings = Vec::new();
    if !model.is_stochastic() && opts.n_samples > 1 {
        warnings.push(format!(
            "the {} model is deterministic; its {} samples are identical",
            model.kind(),
            opts.n_samples
        ));
    }
    let results: Vec<Result<Option<SequenceRecord>>> = windows
        .par_iter()
        .enumerate()
        .map(|(k, w)| {
            if w.mask.count_unobserved() == 0 {
                return Ok(None);
            }
            let samples = model.impute(w, opts.n_samples, opts.fusion, per_window_seed(opts.seed, k))?;
            let mut l2 = Vec::with_capacity(samples.len());
            for s in &samples {
                check_boundary(s, w)?;
                l2.push(l2_eval_units(s, &w.trajectory, &w.mask, opts.units)?);
            }
            let (l2_mean, l2_min) = mean_and_min(&l2);
            Ok(Some(SequenceRecord {
                id: w.source_id.clone(),
                l2_samples: l2,
                l2_mean,
                l2_min,
            }))
        })
        .collect();
    let mut sequences = Vec::new();
    for (r, w) in results.into_iter().zip(windows) {
        match r? {
            Some(rec) => sequences.push(rec),
            None => warnings.push(format!("window {} has no unobserved entries and was skipped", w.source_id)),
        }
    }
    if sequences.is_empty() {
        return Err(Error::NothingToEvaluate);
    }
    let n = sequences.len() as f64;
    let l2_mean = sequences.iter().map(|s| s.l2_mean).sum::<f64>() / n;
    let l2_min = sequences.iter().map(|s| s.l2_min).sum::<f64>() / n;
    if !(l2_min <= l2_mean) {
        return Err(Error::Invariant(format!("l2_min {l2_min} exceeds l2_mean {l2_mean}")));
    }
    Ok(EvalReport {
        model: model.kind().to_string(),
        flags: flags_label(model),
        fusion: opts.fusion,
        seed: opts.seed,
        n_samples: opts.n_samples,
        units: opts.units,
        l2_mean,
        l2_min,
        sequences,
        warnings,
    })
}

fn check_boundary(sample: &TrajectoryTensor, w: &SequenceWindow) -> Result<()> {
    for i in 0..w.trajectory.n_agents() {
        for t in 0..w.trajectory.n_frames() {
            if w.mask.get(i, t) && sample.pos(i, t) != w.trajectory.pos(i, t) {
                return Err(Error::Invariant(format!(
                    "imputation changed observed entry of agent {i} at frame {t}"
                )));
            }
        }
    }
    Ok(())
}

struct Row {
    model: String,
    flags: String,
    fusion: FusionMode,
    seeds: usize,
    mean: (f64, f64),
    min: (f64, f64),
}

fn aggregate(reports: &[EvalReport]) -> Result<(Vec<Row>, MetricUnits)> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Argument("no reports to tabulate".into()))?;
    if let Some(r) = reports.iter().find(|r| r.units != first.units) {
        return Err(Error::Argument(format!(
            "reports mix units: {} and {}",
            first.units, r.units
        )));
    }
    let mut keys: Vec<(&str, &str, FusionMode)> = Vec::new();
    for r in reports {
        let k = (r.model.as_str(), r.flags.as_str(), r.fusion);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let rows = keys
        .into_iter()
        .map(|(model, flags, fusion)| {
            let group: Vec<&EvalReport> = reports
                .iter()
                .filter(|r| r.model == model && r.flags == flags && r.fusion == fusion)
                .collect();
            let means: Vec<f64> = group.iter().map(|r| r.l2_mean).collect();
            let mins: Vec<f64> = group.iter().map(|r| r.l2_min).collect();
            Row {
                model: model.to_string(),
                flags: flags.to_string(),
                fusion,
                seeds: group.len(),
                mean: mean_std(&means),
                min: mean_std(&mins),
            }
        })
        .collect();
    Ok((rows, first.units))
}

pub const RESULTS_HEADER_NOTE: &str = "# std is the population standard deviation over seeds (divisor n)";

/// CSV with one row per (model, flags, fusion), mean and population standard
/// deviation over the reports in each group. The first line is a `#`
/// comment stating the std convention.
pub fn results_table(reports: &[EvalReport]) -> Result<String> {
    let (rows, units) = aggregate(reports)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Invariant(format!("csv encoding failed: {e}"));
    w.write_record([
        "model", "flags", "fusion", "seed_count", "l2_mean", "l2_mean_std", "l2_min", "l2_min_std", "units",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.model,
            r.flags,
            r.fusion.to_string(),
            r.seeds.to_string(),
            r.mean.0.to_string(),
            r.mean.1.to_string(),
            r.min.0.to_string(),
            r.min.1.to_string(),
            units.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Invariant(e.to_string()))?)
        .expect("csv output is utf-8");
    Ok(format!("{RESULTS_HEADER_NOTE}\n{body}"))
}

/// The same table aligned for reading, values as `mean ± std`.
pub fn results_text(reports: &[EvalReport]) -> Result<String> {
    let (rows, units) = aggregate(reports)?;
    let mut cells = vec![[
        "model".to_string(),
        "flags".into(),
        "fusion".into(),
        "seeds".into(),
        format!("L2(Mean) [{units}]"),
        format!("L2(Min) [{units}]"),
    ]];
    for r in rows {
        cells.push([
            r.model,
            r.flags,
            r.fusion.to_string(),
            r.seeds.to_string(),
            format!("{:.4} ± {:.4}", r.mean.0, r.mean.1),
            format!("{:.4} ± {:.4}", r.min.0, r.min.1),
        ]);
    }
    let widths: Vec<usize> = (0..6)
        .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out.push_str("std: population standard deviation over seeds\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::{AgentMeta, PitchSpec, Team};

    fn tensor(values: Vec<f64>, n: usize, t: usize) -> TrajectoryTensor {
        let agents = (0..n).map(|i| AgentMeta::new(Team::Home, format!("H{i}"))).collect();
        TrajectoryTensor::new_unchecked(agents, t, values, 25.0, PitchSpec::default()).unwrap()
    }

    #[test]
    fn three_four_five() {
        let truth = tensor(vec![0.0, 0.0, 1.0, 1.0], 1, 2);
        let pred = tensor(vec![3.0, 4.0, 1.0, 1.0], 1, 2);
        let mask = MaskTensor::from_rows(&[vec![0, 1]]).unwrap();
        assert_eq!(l2_eval(&pred, &truth, &mask).unwrap(), 5.0);
        assert_eq!(l2_eval(&truth, &truth, &mask).unwrap(), 0.0);
    }

    #[test]
    fn all_observed_is_an_error_not_zero() {
        let truth = tensor(vec![0.0; 4], 1, 2);
        let mask = MaskTensor::all_observed(1, 2);
        assert!(matches!(l2_eval(&truth, &truth, &mask), Err(Error::NothingToEvaluate)));
    }

    #[test]
    fn observed_predictions_are_never_read() {
        let truth = tensor(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 1, 3);
        let mut pred = truth.clone();
        pred.set_pos(0, 0, [f64::NAN, f64::NAN]);
        pred.set_pos(0, 1, [3.0, 7.0]);
        let mask = MaskTensor::from_rows(&[vec![1, 0, 1]]).unwrap();
        assert_eq!(l2_eval(&pred, &truth, &mask).unwrap(), 3.0);
    }

    #[test]
    fn pitch_normalised_units_divide_each_axis() {
        let truth = tensor(vec![0.0, 0.0], 1, 1);
        let p = truth.pitch();
        let pred = tensor(vec![p.length_m * 0.3, p.width_m * 0.4], 1, 1);
        let mask = MaskTensor::from_rows(&[vec![0]]).unwrap();
        let d = l2_eval_units(&pred, &truth, &mask, MetricUnits::PitchNormalized).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mean_never_falls_below_min() {
        for xs in [vec![0.1; 3], vec![0.1, 0.2, 0.3], vec![1e16, 1.0, 3.0], vec![0.7; 6]] {
            let (mean, min) = mean_and_min(&xs);
            assert!(min <= mean, "{xs:?}");
        }
        assert_eq!(mean_and_min(&[0.25]), (0.25, 0.25));
    }

    fn report(model: &str, seed: u64, mean: f64, min: f64, units: MetricUnits) -> EvalReport {
        EvalReport {
            model: model.into(),
            flags: "none".into(),
            fusion: FusionMode::Nearest,
            seed,
            n_samples: 6,
            units,
            l2_mean: mean,
            l2_min: min,
            sequences: Vec::new(),
            warnings: Vec::new(),
        }
    }

    #[test]
    fn table_rows_and_population_std() {
        let one = results_table(&[report("linear", 0, 2.0, 1.0, MetricUnits::Meters)]).unwrap();
        assert_eq!(one.lines().count(), 3);
        let reports: Vec<EvalReport> = [1.0, 2.0, 3.0, 4.0, 5.0]
            .iter()
            .enumerate()
            .map(|(s, &v)| report("gvrnn", s as u64, v, v - 0.5, MetricUnits::Meters))
            .collect();
        let t = results_table(&reports).unwrap();
        let row: Vec<&str> = t.lines().nth(2).unwrap().split(',').collect();
        assert_eq!(row[3], "5");
        assert_eq!(row[4], "3");
        assert_eq!(row[5], 2f64.sqrt().to_string());
        assert!(t.starts_with("# std is the population"));
        assert!(results_text(&reports).unwrap().contains("3.0000 ± 1.4142"));
    }

    #[test]
    fn mixed_units_are_rejected() {
        let r = [
            report("linear", 0, 2.0, 1.0, MetricUnits::Meters),
            report("linear", 1, 0.2, 0.1, MetricUnits::PitchNormalized),
        ];
        assert!(matches!(results_table(&r), Err(Error::Argument(_))));
    }
}
