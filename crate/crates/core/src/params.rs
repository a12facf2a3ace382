//! Named learnable parameter arrays.

use std::collections::HashMap;

use rand::Rng;

use crate::linalg::Mat;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter matrices.
///
/// Insertion order is stable and defines the checkpoint layout and the
/// gradient reduction order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialised weight.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(name, Mat::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Mat::all_finite)
    }
}

/// Overwrites every parameter of `dst` with the same-named one in `src`.
/// Both stores must hold exactly the same names and shapes.
pub fn copy_matching(dst: &mut ParamStore, src: &ParamStore) -> crate::Result<()> {
    use crate::Error;
    if src.len() != dst.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, found {}",
            dst.len(),
            src.len()
        )));
    }
    for i in 0..dst.len() {
        let name = dst.names[i].as_str();
        let id = src
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        let value = src.get(id);
        if value.shape() != dst.values[i].shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                value.shape(),
                dst.values[i].shape()
            )));
        }
        dst.values[i] = value.clone();
    }
    Ok(())
}

/// Gradients aligned with a [`ParamStore`]; parameters untouched by the
/// computation have zero gradient.
#[derive(Debug, Clone)]
pub struct Grads {
    values: Vec<Mat>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            values: store
                .values
                .iter()
                .map(|m| Mat::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub(crate) fn from_values(values: Vec<Mat>) -> Self {
        Grads { values }
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Accumulates `scale * other` into `self` in parameter order.
    pub fn accumulate(&mut self, other: &Grads, scale: f64) {
        assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += scale * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Mat::all_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.values.iter().enumerate().map(|(i, m)| (ParamId(i), m))
    }
}
