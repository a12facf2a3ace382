//! On-disk tracking bundle: `manifest.json`, `seq_<id>.csv` and optional
//! `mask_<id>.csv` files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AgentMeta, MaskTensor, PitchSpec, SequenceWindow, TrajectoryTensor, DIMS};
use crate::error::{Error, Result};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_version")]
    pub format_version: u32,
    #[serde(default = "default_rate")]
    pub frame_rate_hz: f64,
    #[serde(default)]
    pub pitch: PitchSpec,
    #[serde(default)]
    pub agents: Vec<AgentMeta>,
    pub sequences: Vec<String>,
    /// Forced-observed frames at each end of every mask, when masks exist.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_frames: Option<usize>,
}

fn default_version() -> u32 {
    BUNDLE_FORMAT_VERSION
}

fn default_rate() -> f64 {
    25.0
}

/// One sequence to write.
#[derive(Debug, Clone)]
pub struct BundleEntry {
    pub id: String,
    pub trajectory: TrajectoryTensor,
    pub mask: Option<MaskTensor>,
}

fn seq_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("seq_{id}.csv"))
}

fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("mask_{id}.csv"))
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if manifest.format_version != BUNDLE_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported bundle format version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

/// Loads every sequence listed in the manifest.
pub fn load_tracking_bundle(dir: impl AsRef<Path>) -> Result<Vec<TrajectoryTensor>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    manifest
        .sequences
        .iter()
        .map(|id| read_sequence(&seq_path(dir, id), &manifest))
        .collect()
}

/// Loads sequences with their masks; sequences without a mask file are
/// treated as fully observed.
pub fn load_windows(dir: impl AsRef<Path>) -> Result<Vec<SequenceWindow>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let warmup = manifest.warmup_frames.unwrap_or(0);
    manifest
        .sequences
        .iter()
        .map(|id| {
            let trajectory = read_sequence(&seq_path(dir, id), &manifest)?;
            let mpath = mask_path(dir, id);
            let mask = if mpath.exists() {
                read_mask(&mpath, trajectory.n_agents(), trajectory.n_frames())?
            } else {
                MaskTensor::all_observed(trajectory.n_agents(), trajectory.n_frames())
            };
            SequenceWindow::new(trajectory, mask, id.clone(), warmup)
        })
        .collect()
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line: line as usize,
        msg: msg.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(path, 1, format!("{other:?}")),
        })
}

fn read_sequence(path: &Path, manifest: &Manifest) -> Result<TrajectoryTensor> {
    let n = manifest.agents.len();
    let mut rdr = csv_reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let expected_cols = 2 + DIMS * n;
    if header.len() != expected_cols {
        return Err(Error::Schema(format!(
            "{}: manifest lists {} agents ({} columns expected) but header has {} columns",
            path.display(),
            n,
            expected_cols,
            header.len()
        )));
    }
    if &header[0] != "frame" || &header[1] != "time_s" {
        return Err(parse_err(path, 1, "header must start with frame,time_s"));
    }
    for k in 0..n {
        let (hx, hy) = (&header[2 + 2 * k], &header[3 + 2 * k]);
        if hx != format!("agent_{k}_x") || hy != format!("agent_{k}_y") {
            return Err(parse_err(
                path,
                1,
                format!("expected agent_{k}_x,agent_{k}_y, found {hx},{hy}"),
            ));
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != expected_cols {
            return Err(Error::Schema(format!(
                "{}:{line}: expected {expected_cols} fields, found {}",
                path.display(),
                rec.len()
            )));
        }
        let frame: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad frame index {:?}", &rec[0])))?;
        if frame != rows.len() {
            return Err(parse_err(
                path,
                line,
                format!("frame {frame} out of order, expected {}", rows.len()),
            ));
        }
        let mut row = Vec::with_capacity(DIMS * n);
        for (c, field) in rec.iter().enumerate().skip(2) {
            let field = field.trim();
            if field.is_empty() {
                let agent = (c - 2) / DIMS;
                return Err(Error::Schema(format!(
                    "{}:{line}: agent {agent} has a missing coordinate at frame {frame}",
                    path.display()
                )));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad number {field:?}")))?;
            row.push(v);
        }
        rows.push(row);
    }

    let n_frames = rows.len();
    let mut values = vec![0.0; n * n_frames * DIMS];
    for (f, row) in rows.iter().enumerate() {
        for k in 0..n {
            for d in 0..DIMS {
                values[(k * n_frames + f) * DIMS + d] = row[k * DIMS + d];
            }
        }
    }
    TrajectoryTensor::new(
        manifest.agents.clone(),
        n_frames,
        values,
        manifest.frame_rate_hz,
        manifest.pitch,
    )
    .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

fn read_mask(path: &Path, n_agents: usize, n_frames: usize) -> Result<MaskTensor> {
    let mut rdr = csv_reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if header.len() != 1 + n_agents {
        return Err(Error::Schema(format!(
            "{}: mask has {} agent columns, sequence has {n_agents} agents",
            path.display(),
            header.len().saturating_sub(1)
        )));
    }
    let mut rows = vec![Vec::with_capacity(n_frames); n_agents];
    let mut count = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 1 + n_agents {
            return Err(Error::Schema(format!(
                "{}:{line}: wrong field count",
                path.display()
            )));
        }
        for (k, field) in rec.iter().skip(1).enumerate() {
            let v = match field.trim() {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(parse_err(path, line, format!("mask value {other:?} is not 0/1")))
                }
            };
            rows[k].push(v);
        }
        count += 1;
    }
    if count != n_frames {
        return Err(Error::Schema(format!(
            "{}: mask has {count} frames, sequence has {n_frames}",
            path.display()
        )));
    }
    MaskTensor::from_rows(&rows)
}

fn sequence_csv(t: &TrajectoryTensor) -> String {
    let mut s = String::from("frame,time_s");
    for k in 0..t.n_agents() {
        let _ = write!(s, ",agent_{k}_x,agent_{k}_y");
    }
    s.push('\n');
    for f in 0..t.n_frames() {
        let _ = write!(s, "{f},{}", f as f64 / t.frame_rate_hz());
        for k in 0..t.n_agents() {
            let [x, y] = t.pos(k, f);
            let _ = write!(s, ",{x},{y}");
        }
        s.push('\n');
    }
    s
}

fn mask_csv(m: &MaskTensor) -> String {
    let mut s = String::from("frame");
    for k in 0..m.n_agents() {
        let _ = write!(s, ",agent_{k}");
    }
    s.push('\n');
    for f in 0..m.n_frames() {
        let _ = write!(s, "{f}");
        for k in 0..m.n_agents() {
            s.push_str(if m.get(k, f) { ",1" } else { ",0" });
        }
        s.push('\n');
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes a bundle. All sequences must share agents, frame rate and pitch.
pub fn save_bundle(
    dir: impl AsRef<Path>,
    entries: &[BundleEntry],
    warmup_frames: Option<usize>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = entries.first();
    for e in entries {
        let f = &first.expect("non-empty").trajectory;
        if e.trajectory.agents() != f.agents()
            || e.trajectory.frame_rate_hz() != f.frame_rate_hz()
            || e.trajectory.pitch() != f.pitch()
        {
            return Err(Error::Argument(format!(
                "sequence {} differs in agents, frame rate or pitch from the first sequence",
                e.id
            )));
        }
    }
    let manifest = Manifest {
        format_version: BUNDLE_FORMAT_VERSION,
        frame_rate_hz: first.map_or(25.0, |e| e.trajectory.frame_rate_hz()),
        pitch: first.map_or_else(PitchSpec::default, |e| e.trajectory.pitch()),
        agents: first.map_or_else(Vec::new, |e| e.trajectory.agents().to_vec()),
        sequences: entries.iter().map(|e| e.id.clone()).collect(),
        warmup_frames,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_file(&dir.join("manifest.json"), &json)?;
    for e in entries {
        write_file(&seq_path(dir, &e.id), &sequence_csv(&e.trajectory))?;
        if let Some(m) = &e.mask {
            write_file(&mask_path(dir, &e.id), &mask_csv(m))?;
        }
    }
    Ok(())
}
