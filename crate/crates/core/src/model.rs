//! A single handle over every model kind, and the checkpoint container they
//! share.
//!
//! A checkpoint is the magic `GIMP`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a JSON header and then every parameter
//! as little-endian `f64` values in store order. The header records the model
//! kind, its full config and each parameter's name, shape and offset (in
//! values, from the start of the data block).

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::baselines::{linear_impute, LstmBaseline, RoleIndex, RoleInvariantModel};
use crate::error::{Error, Result};
use crate::imputer::{
    self, elbo_on_tape, ElboBreakdown, FusionMode, ImputerParams, NoiseSource, TrainObjectiveConfig,
    WindowData,
};
use crate::linalg::Mat;
use crate::params::ParamStore;
use crate::tracking::{SequenceWindow, TrajectoryTensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GIMP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GraphImputer,
    Gvrnn,
    Linear,
    Lstm,
    BidirLstm,
    RoleInvariantRnn,
    RoleInvariantVrnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::GraphImputer,
        ModelKind::Gvrnn,
        ModelKind::Linear,
        ModelKind::Lstm,
        ModelKind::BidirLstm,
        ModelKind::RoleInvariantRnn,
        ModelKind::RoleInvariantVrnn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::GraphImputer => "graph_imputer",
            ModelKind::Gvrnn => "gvrnn",
            ModelKind::Linear => "linear",
            ModelKind::Lstm => "lstm",
            ModelKind::BidirLstm => "bidir_lstm",
            ModelKind::RoleInvariantRnn => "role_invariant_rnn",
            ModelKind::RoleInvariantVrnn => "role_invariant_vrnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown model kind {s:?}")))
    }
}

/// Model description as stored in config files and checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Kind-specific config. Missing fields take their defaults.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            config: serde_json::Value::Object(Default::default()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

fn parse_config<T: serde::de::DeserializeOwned>(kind: ModelKind, value: &serde_json::Value) -> Result<T> {
    let value = if value.is_null() {
        serde_json::Value::Object(Default::default())
    } else {
        value.clone()
    };
    serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid {kind} config: {e}")))
}

fn require(kind: ModelKind, field: &str, actual: bool, wanted: bool) -> Result<()> {
    if actual != wanted {
        return Err(Error::Config(format!("{kind} requires {field} = {wanted}")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum Inner {
    Imputer(ImputerParams),
    Linear,
    Lstm(LstmBaseline),
    RoleInvariant(RoleInvariantModel),
}

/// Any trainable or fixed imputation model.
#[derive(Debug, Clone)]
pub struct Model {
    kind: ModelKind,
    inner: Inner,
    empty: ParamStore,
}

impl Model {
    /// Fresh model of `spec.kind`. Flags implied by the kind
    /// (directionality, variational head) are filled in when absent and
    /// rejected when contradicted.
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let kind = spec.kind;
        let mut cfg = match &spec.config {
            serde_json::Value::Null => serde_json::Map::new(),
            serde_json::Value::Object(m) => m.clone(),
            other => return Err(Error::Config(format!("model config must be an object, got {other}"))),
        };
        let mut imply = |field: &str, value: bool| -> Result<()> {
            match cfg.get(field) {
                None => {
                    cfg.insert(field.into(), value.into());
                    Ok(())
                }
                Some(v) => require(kind, field, v.as_bool().unwrap_or(!value), value),
            }
        };
        match kind {
            ModelKind::GraphImputer | ModelKind::BidirLstm => imply("bidirectional", true)?,
            ModelKind::Gvrnn | ModelKind::Lstm => imply("bidirectional", false)?,
            ModelKind::RoleInvariantRnn => imply("variational", false)?,
            ModelKind::RoleInvariantVrnn => imply("variational", true)?,
            ModelKind::Linear => {}
        }
        let cfg = serde_json::Value::Object(cfg);
        let inner = match kind {
            ModelKind::GraphImputer | ModelKind::Gvrnn => Inner::Imputer(ImputerParams::new(parse_config(kind, &cfg)?)?),
            ModelKind::Linear => {
                if cfg.as_object().is_some_and(|m| !m.is_empty()) {
                    return Err(Error::Config("the linear model takes no config".into()));
                }
                Inner::Linear
            }
            ModelKind::Lstm | ModelKind::BidirLstm => Inner::Lstm(LstmBaseline::new(parse_config(kind, &cfg)?)?),
            ModelKind::RoleInvariantRnn | ModelKind::RoleInvariantVrnn => {
                Inner::RoleInvariant(RoleInvariantModel::new(parse_config(kind, &cfg)?)?)
            }
        };
        Ok(Model {
            kind,
            inner,
            empty: ParamStore::new(),
        })
    }

    pub fn of_kind(kind: ModelKind) -> Result<Self> {
        Model::new(&ModelSpec::new(kind))
    }

    pub fn from_imputer(params: ImputerParams) -> Self {
        let kind = if params.config.bidirectional {
            ModelKind::GraphImputer
        } else {
            ModelKind::Gvrnn
        };
        Model {
            kind,
            inner: Inner::Imputer(params),
            empty: ParamStore::new(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Full config, with every default filled in.
    pub fn spec(&self) -> ModelSpec {
        let config = match &self.inner {
            Inner::Imputer(p) => serde_json::to_value(&p.config),
            Inner::Linear => Ok(serde_json::Value::Object(Default::default())),
            Inner::Lstm(m) => serde_json::to_value(&m.config),
            Inner::RoleInvariant(m) => serde_json::to_value(&m.config),
        }
        .expect("configs serialise");
        ModelSpec { kind: self.kind, config }
    }

    /// Whether repeated imputations with different seeds can differ.
    pub fn is_stochastic(&self) -> bool {
        match &self.inner {
            Inner::Imputer(_) => true,
            Inner::RoleInvariant(m) => m.is_variational(),
            Inner::Linear | Inner::Lstm(_) => false,
        }
    }

    pub fn is_trainable(&self) -> bool {
        !matches!(self.inner, Inner::Linear)
    }

    pub fn imputer(&self) -> Option<&ImputerParams> {
        match &self.inner {
            Inner::Imputer(p) => Some(p),
            _ => None,
        }
    }

    pub fn store(&self) -> &ParamStore {
        match &self.inner {
            Inner::Imputer(p) => &p.store,
            Inner::Linear => &self.empty,
            Inner::Lstm(m) => &m.store,
            Inner::RoleInvariant(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match &mut self.inner {
            Inner::Imputer(p) => &mut p.store,
            Inner::Linear => &mut self.empty,
            Inner::Lstm(m) => &mut m.store,
            Inner::RoleInvariant(m) => &mut m.store,
        }
    }

    pub fn position_scale(&self) -> f64 {
        match &self.inner {
            Inner::Imputer(p) => p.config.position_scale,
            Inner::Linear => 1.0,
            Inner::Lstm(m) => m.config.position_scale,
            Inner::RoleInvariant(m) => m.config.position_scale,
        }
    }

    /// Training objective of one window, to be maximised: the ELBO for the
    /// variational kinds and the negative half squared step error for the
    /// deterministic recurrent kinds.
    pub fn objective_on_tape(
        &self,
        tape: &mut Tape,
        window: &SequenceWindow,
        beta: f64,
        noise_fwd: &mut dyn NoiseSource,
        noise_bwd: &mut dyn NoiseSource,
    ) -> Result<(Var, ElboBreakdown)> {
        let data = WindowData::new(window, self.position_scale())?;
        match &self.inner {
            Inner::Imputer(p) => elbo_on_tape(tape, p, &data, TrainObjectiveConfig::posterior(beta), noise_fwd, noise_bwd),
            Inner::Linear => Err(Error::Argument("the linear model has no training objective".into())),
            Inner::Lstm(m) => m.objective_on_tape(tape, &data),
            Inner::RoleInvariant(m) => {
                let roles = RoleIndex::from_agents(window.trajectory.agents())?;
                m.objective_on_tape(tape, &data, &roles, beta, noise_fwd, noise_bwd)
            }
        }
    }

    /// `n_samples` imputations. Sample `s` uses noise streams derived from
    /// `(seed, s)`; deterministic kinds return identical copies.
    pub fn impute(
        &self,
        window: &SequenceWindow,
        n_samples: usize,
        fusion: FusionMode,
        seed: u64,
    ) -> Result<Vec<TrajectoryTensor>> {
        if n_samples == 0 {
            return Err(Error::Argument("n_samples must be at least 1".into()));
        }
        let one = match &self.inner {
            Inner::Imputer(p) => return imputer::impute(p, window, n_samples, fusion, seed),
            Inner::RoleInvariant(m) if m.is_variational() => return m.impute(window, n_samples, fusion, seed),
            Inner::RoleInvariant(m) => m.impute(window, 1, fusion, seed)?.remove(0),
            Inner::Linear => linear_impute(window)?,
            Inner::Lstm(m) => m.impute(window, fusion)?,
        };
        Ok(vec![one; n_samples])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for (_, name, m) in self.store().iter() {
            entries.push(ParamEntry {
                name: name.to_string(),
                shape: [m.rows(), m.cols()],
                offset,
            });
            offset += m.data().len();
        }
        let spec = self.spec();
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            kind: spec.kind,
            config: spec.config,
            params: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, m) in self.store().iter() {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(16))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated checkpoint header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::Checkpoint(format!("invalid checkpoint header: {e}")))?;
        if header.format_version != version {
            return Err(bad("header and preamble disagree on the format version"));
        }
        let data = &bytes[header_end..];
        if data.len() % 8 != 0 {
            return Err(bad("parameter block is not a whole number of f64 values"));
        }
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut store = ParamStore::new();
        let mut expected = 0;
        for p in &header.params {
            let len = p.shape[0] * p.shape[1];
            if p.offset != expected || p.offset + len > values.len() {
                return Err(Error::Checkpoint(format!("parameter {} lies outside the data block", p.name)));
            }
            if store.id(&p.name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {}", p.name)));
            }
            store.add(p.name.clone(), Mat::from_vec(p.shape[0], p.shape[1], values[p.offset..p.offset + len].to_vec()));
            expected += len;
        }
        if expected != values.len() {
            return Err(bad("trailing data after the last parameter"));
        }
        let spec = ModelSpec {
            kind: header.kind,
            config: header.config,
        };
        let mut model = Model::new(&spec)?;
        match &mut model.inner {
            Inner::Imputer(p) => *p = ImputerParams::from_store(p.config.clone(), store)?,
            Inner::Linear => {
                if !store.is_empty() {
                    return Err(bad("the linear model has no parameters"));
                }
            }
            Inner::Lstm(m) => *m = LstmBaseline::from_store(m.config.clone(), store)?,
            Inner::RoleInvariant(m) => *m = RoleInvariantModel::from_store(m.config.clone(), store)?,
        }
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    kind: ModelKind,
    config: serde_json::Value,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ModelKind) -> ModelSpec {
        let config = match kind {
            ModelKind::GraphImputer | ModelKind::Gvrnn => {
                serde_json::json!({"lstm_hidden": 4, "lstm_layers": 1, "gn_hidden": 4, "z_dim": 2})
            }
            ModelKind::Linear => serde_json::json!({}),
            ModelKind::Lstm | ModelKind::BidirLstm => serde_json::json!({"lstm_hidden": 4}),
            _ => serde_json::json!({"lstm_hidden": 4, "mlp_hidden": 4, "context_dim": 3, "z_dim": 2}),
        };
        ModelSpec { kind, config }
    }

    #[test]
    fn every_kind_round_trips_through_bytes() {
        for kind in ModelKind::ALL {
            let m = Model::new(&small(kind)).unwrap();
            let bytes = m.to_bytes().unwrap();
            let back = Model::from_bytes(&bytes).unwrap();
            assert_eq!(back.kind(), kind);
            assert_eq!(back.spec(), m.spec());
            assert_eq!(back.to_bytes().unwrap(), bytes, "{kind}");
        }
    }

    #[test]
    fn kinds_parse_and_print() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.as_str().parse::<ModelKind>().unwrap(), kind);
            assert_eq!(serde_json::to_string(&kind).unwrap(), format!("\"{kind}\""));
        }
        assert!("social_lstm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn contradicting_the_kind_is_a_config_error() {
        let spec = ModelSpec {
            kind: ModelKind::Gvrnn,
            config: serde_json::json!({"bidirectional": true}),
        };
        assert!(matches!(Model::new(&spec), Err(Error::Config(_))));
        let spec = ModelSpec {
            kind: ModelKind::GraphImputer,
            config: serde_json::json!({"no_such_flag": 1}),
        };
        assert!(matches!(Model::new(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let m = Model::new(&small(ModelKind::Lstm)).unwrap();
        let bytes = m.to_bytes().unwrap();
        assert!(matches!(Model::from_bytes(&bytes[..bytes.len() - 8]), Err(Error::Checkpoint(_))));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(Model::from_bytes(&wrong), Err(Error::Checkpoint(_))));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(Model::from_bytes(&version), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn stochasticity_by_kind() {
        let s: Vec<bool> = ModelKind::ALL
            .iter()
            .map(|&k| Model::new(&small(k)).unwrap().is_stochastic())
            .collect();
        assert_eq!(s, [true, true, false, false, false, false, true]);
    }
}
