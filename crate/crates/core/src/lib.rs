//! Imputation of occluded player trajectories with bidirectional
//! variational graph networks.
//!
//! The [`imputer`] runs a graph-structured VRNN forward and backward over a
//! window, feeding ground truth wherever an agent is observed and its own
//! estimate elsewhere, then fuses the two sweeps by gap-weighted averaging.
//! Observed entries are always returned unchanged.
//!
//! Around it sit a seeded match simulator ([`synth`]), a ball-tracking
//! broadcast camera that produces occlusion masks ([`camera`]), the
//! baselines ([`baselines`]), training and L2 evaluation ([`train_eval`]),
//! plots ([`plot`]) and the `graph-imputer` command line ([`cli`]).
//!
//! ```no_run
//! use graph_imputer::imputer::FusionMode;
//! use graph_imputer::model::{Model, ModelKind};
//! use graph_imputer::tracking::load_windows;
//!
//! let windows = load_windows("masked_bundle")?;
//! let model = Model::of_kind(ModelKind::GraphImputer)?;
//! let samples = model.impute(&windows[0], 6, FusionMode::Nearest, 0)?;
//! # Ok::<(), graph_imputer::Error>(())
//! ```

pub mod autodiff;
pub mod baselines;
pub mod camera;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod graph_net;
pub mod imputer;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod params;
pub mod plot;
pub mod synth;
pub mod tracking;
pub mod train_eval;

pub use error::{Error, Result};
