//! Command-line interface: `synth | mask | train | eval | impute | plot |
//! stats`.
//!
//! Exit codes are 0 on success, 1 on usage or validation errors and 2 on
//! runtime errors. `OT_NUM_THREADS` caps the worker threads.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::camera::{coverage_stats, make_mask, CameraConfig};
use crate::error::{Error, Result};
use crate::imputer::FusionMode;
use crate::model::{Model, ModelKind, ModelSpec};
use crate::plot::{plot_sequence, PlotFormat, PlotStyle};
use crate::synth::{generate_sequences, sequence_id, SynthConfig};
use crate::tracking::{load_windows, save_bundle, BundleEntry, SequenceWindow};
use crate::train_eval::{l2_min_eval, results_table, results_text, train_run, EvalOptions, MetricUnits, TrainConfig};

pub const THREADS_ENV: &str = "OT_NUM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "graph-imputer", version, about = "Impute occluded multiagent trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic football tracking bundle.
    Synth(SynthArgs),
    /// Mask a bundle with the ball-tracking camera.
    Mask(MaskArgs),
    /// Train a model on a masked bundle.
    Train(TrainArgs),
    /// Evaluate one or more models and write a results table.
    Eval(EvalArgs),
    /// Write imputation samples as bundles.
    Impute(ImputeArgs),
    /// Plot one sequence, optionally with imputation samples.
    Plot(PlotArgs),
    /// Camera coverage statistics of a masked bundle.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    sequences: usize,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    /// Players per team.
    #[arg(long, default_value_t = 11)]
    players: usize,
    /// Constant-velocity motion with no forces or kicks.
    #[arg(long)]
    force_free: bool,
    /// JSON simulator config; flags above override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MaskArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// JSON camera config; the broadcast preset when absent.
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Model kind.
    #[arg(long, default_value = "graph_imputer")]
    model: String,
    /// JSON model config, either a config object for `--model` or
    /// `{"kind": ..., "config": {...}}`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta_final: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint path, or a model kind for an untrained model (`linear`).
    /// Repeat to tabulate several models or seeds.
    #[arg(long, required = true)]
    model: Vec<String>,
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value_t = 6)]
    samples: usize,
    #[arg(long, default_value = "nearest")]
    fusion: FusionMode,
    #[arg(long, default_value = "meters", value_parser = parse_units)]
    units: MetricUnits,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Results CSV; per-sequence records go next to it as JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ImputeArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long, default_value = "nearest")]
    fusion: FusionMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; sample k is written as bundle `sample_k`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Sequence id; the first sequence when absent.
    #[arg(long)]
    sequence: Option<String>,
    /// Overlay samples from this checkpoint or model kind.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long, default_value = "nearest")]
    fusion: FusionMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; `.png` selects PNG, anything else SVG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Write the statistics as JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_units(s: &str) -> std::result::Result<MetricUnits, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = configure_threads().and_then(|_| dispatch(cli.command));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

/// Applies `OT_NUM_THREADS` to the global worker pool.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Argument(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A pool that is already built (a second call in one process) keeps
    // its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Mask(a) => mask(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Impute(a) => impute(a),
        Command::Plot(a) => plot(a),
        Command::Stats(a) => stats(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(a: SynthArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    let mut cfg = SynthConfig {
        n_players_per_team: a.players,
        duration_frames: a.frames,
        ..base
    };
    if a.force_free {
        cfg = cfg.force_free();
    }
    cfg.validate()?;
    let seqs = generate_sequences(&cfg, a.sequences, a.seed)?;
    let entries: Vec<BundleEntry> = seqs
        .into_iter()
        .enumerate()
        .map(|(i, trajectory)| BundleEntry {
            id: sequence_id(i),
            trajectory,
            mask: None,
        })
        .collect();
    save_bundle(&a.out, &entries, None)?;
    eprintln!("wrote {} sequences to {}", entries.len(), a.out.display());
    Ok(())
}

fn mask(a: MaskArgs) -> Result<()> {
    let windows = load_windows(&a.bundle)?;
    let pitch = windows
        .first()
        .map(|w| w.trajectory.pitch())
        .ok_or_else(|| Error::Argument("bundle has no sequences".into()))?;
    let cam = match &a.camera {
        Some(p) => CameraConfig::load(p)?,
        None => CameraConfig::broadcast_preset(&pitch),
    };
    let entries = windows
        .into_iter()
        .map(|w| {
            let mask = make_mask(&w.trajectory, &cam, a.warmup)?;
            Ok(BundleEntry {
                id: w.source_id,
                trajectory: w.trajectory,
                mask: Some(mask),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    save_bundle(&a.out, &entries, Some(a.warmup))?;
    eprintln!("masked {} sequences into {}", entries.len(), a.out.display());
    Ok(())
}

fn model_spec(kind: &str, config: Option<&Path>) -> Result<ModelSpec> {
    let kind: ModelKind = kind.parse()?;
    let Some(path) = config else {
        return Ok(ModelSpec::new(kind));
    };
    let value: serde_json::Value = read_json(path)?;
    if value.get("kind").is_some() {
        return serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()));
    }
    Ok(ModelSpec { kind, config: value })
}

fn train(a: TrainArgs) -> Result<()> {
    let spec = model_spec(&a.model, a.config.as_deref())?;
    let mut cfg: TrainConfig = match &a.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = a.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.beta_final {
        cfg.beta_final = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    let mut model = Model::new(&spec)?;
    let windows = load_windows(&a.bundle)?;
    if windows.iter().all(|w| w.mask.count_unobserved() == 0) {
        eprintln!("warning: every training window is fully observed; run `mask` first");
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_text(&a.out.join("train_config.json"), &serde_json::to_string_pretty(&cfg)?)?;
    let run = train_run(&mut model, &windows, &cfg, Some(&a.out))?;
    if let (Some(first), Some(last)) = (run.metrics.first(), run.metrics.last()) {
        eprintln!(
            "trained {} for {} iterations: objective {:.4} -> {:.4}",
            model.kind(),
            cfg.iterations,
            first.elbo_total,
            last.elbo_total
        );
    }
    Ok(())
}

/// A checkpoint path, or a model kind when no such file exists.
fn load_model(arg: &str) -> Result<Model> {
    let path = Path::new(arg);
    if path.exists() {
        return Model::load(path);
    }
    match arg.parse::<ModelKind>() {
        Ok(kind) => Model::of_kind(kind),
        Err(_) => Err(Error::Argument(format!("no checkpoint at {arg} and not a model kind"))),
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    if a.samples == 0 {
        return Err(Error::Argument("--samples must be at least 1".into()));
    }
    let windows = load_windows(&a.bundle)?;
    let opts = EvalOptions {
        n_samples: a.samples,
        fusion: a.fusion,
        seed: a.seed,
        units: a.units,
    };
    let mut reports = Vec::new();
    for m in &a.model {
        let model = load_model(m)?;
        let report = l2_min_eval(&model, &windows, &opts)?;
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        reports.push(report);
    }
    write_text(&a.out, &results_table(&reports)?)?;
    write_text(&a.out.with_extension("json"), &serde_json::to_string_pretty(&reports)?)?;
    print!("{}", results_text(&reports)?);
    Ok(())
}

fn impute(a: ImputeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let windows = load_windows(&a.bundle)?;
    let warmup = windows.first().map_or(0, |w| w.warmup_frames);
    let samples = windows
        .iter()
        .map(|w| model.impute(w, a.samples, a.fusion, a.seed))
        .collect::<Result<Vec<_>>>()?;
    for k in 0..a.samples {
        let entries: Vec<BundleEntry> = windows
            .iter()
            .zip(&samples)
            .map(|(w, s)| BundleEntry {
                id: w.source_id.clone(),
                trajectory: s[k].clone(),
                mask: Some(w.mask.clone()),
            })
            .collect();
        save_bundle(a.out.join(format!("sample_{k}")), &entries, Some(warmup))?;
    }
    eprintln!("wrote {} samples of {} sequences to {}", a.samples, windows.len(), a.out.display());
    Ok(())
}

fn find_window(windows: Vec<SequenceWindow>, id: Option<&str>) -> Result<SequenceWindow> {
    match id {
        None => windows.into_iter().next().ok_or_else(|| Error::Argument("bundle has no sequences".into())),
        Some(id) => windows
            .into_iter()
            .find(|w| w.source_id == id)
            .ok_or_else(|| Error::Argument(format!("no sequence {id} in the bundle"))),
    }
}

fn plot(a: PlotArgs) -> Result<()> {
    let window = find_window(load_windows(&a.bundle)?, a.sequence.as_deref())?;
    let samples = match &a.model {
        Some(m) => load_model(m)?.impute(&window, a.samples, a.fusion, a.seed)?,
        None => Vec::new(),
    };
    let style = PlotStyle {
        format: PlotFormat::from_path(&a.out),
        ..PlotStyle::default()
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    plot_sequence(&a.out, &window, &samples, &style)
}

#[derive(serde::Serialize)]
struct BundleStats {
    sequences: usize,
    agents: usize,
    frames: usize,
    frame_rate_hz: f64,
    warmup_frames: usize,
    unobserved_fraction: f64,
    mean_players_in_frame: f64,
    std_players_in_frame: f64,
    mean_visible_run_s: f64,
    std_visible_run_s: f64,
}

fn stats(a: StatsArgs) -> Result<()> {
    let windows = load_windows(&a.bundle)?;
    let first = windows
        .first()
        .ok_or_else(|| Error::Argument("bundle has no sequences".into()))?;
    let t = &first.trajectory;
    let masks: Vec<_> = windows.iter().map(|w| &w.mask).collect();
    let cov = coverage_stats(&masks, t.frame_rate_hz(), t.ball_index(), first.warmup_frames)?;
    let entries: usize = windows.iter().map(|w| w.mask.n_agents() * w.mask.n_frames()).sum();
    let hidden: usize = windows.iter().map(|w| w.mask.count_unobserved()).sum();
    let s = BundleStats {
        sequences: windows.len(),
        agents: t.n_agents(),
        frames: t.n_frames(),
        frame_rate_hz: t.frame_rate_hz(),
        warmup_frames: first.warmup_frames,
        unobserved_fraction: hidden as f64 / entries as f64,
        mean_players_in_frame: cov.mean_in_frame,
        std_players_in_frame: cov.std_in_frame,
        mean_visible_run_s: cov.mean_visible_run_s,
        std_visible_run_s: cov.std_visible_run_s,
    };
    let json = serde_json::to_string_pretty(&s)? + "\n";
    match &a.out {
        Some(p) => write_text(p, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}
