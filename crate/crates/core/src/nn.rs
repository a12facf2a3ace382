//! Dense layers, MLPs and stacked LSTMs expressed on the autodiff tape.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::linalg::Mat;
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.w"), in_dim, out_dim, in_dim, rng);
        let bias = store.add(format!("{name}.b"), Mat::zeros(1, out_dim));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Option<Self> {
        let weight = store.id(&format!("{name}.w"))?;
        let bias = store.id(&format!("{name}.b"))?;
        let (in_dim, out_dim) = store.get(weight).shape();
        Some(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

/// Multilayer perceptron with ReLU between layers and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` lists every width, input first: `[in, hidden.., out]`.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut R) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.l{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Option<Self> {
        let mut layers = Vec::new();
        while let Some(l) = Linear::from_store(store, &format!("{name}.l{}", layers.len())) {
            layers.push(l);
        }
        (!layers.is_empty()).then_some(Mlp { layers })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn apply(&self, tape: &mut Tape, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.apply(tape, x);
            if i < last {
                x = tape.relu(x);
            }
        }
        x
    }
}

#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

/// Stacked LSTM shared across every row (agent) of its input.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
    pub hidden: usize,
    pub input: usize,
}

/// Per-layer `(h, c)` state of a stacked LSTM.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

impl LstmState {
    pub fn top(&self) -> Var {
        *self.h.last().expect("lstm has at least one layer")
    }
}

impl Lstm {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        n_layers: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|l| {
                let in_dim = if l == 0 { input } else { hidden };
                let w_ih =
                    store.add_uniform(format!("{name}.l{l}.w_ih"), in_dim, 4 * hidden, hidden, rng);
                let w_hh =
                    store.add_uniform(format!("{name}.l{l}.w_hh"), hidden, 4 * hidden, hidden, rng);
                // Forget gate bias starts at one.
                let mut b = Mat::zeros(1, 4 * hidden);
                for k in hidden..2 * hidden {
                    b.data_mut()[k] = 1.0;
                }
                let bias = store.add(format!("{name}.l{l}.b"), b);
                LstmLayer { w_ih, w_hh, bias }
            })
            .collect();
        Lstm {
            layers,
            hidden,
            input,
        }
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Option<Self> {
        let mut layers = Vec::new();
        loop {
            let l = layers.len();
            let (Some(w_ih), Some(w_hh), Some(bias)) = (
                store.id(&format!("{name}.l{l}.w_ih")),
                store.id(&format!("{name}.l{l}.w_hh")),
                store.id(&format!("{name}.l{l}.b")),
            ) else {
                break;
            };
            layers.push(LstmLayer { w_ih, w_hh, bias });
        }
        let first = layers.first()?;
        let input = store.get(first.w_ih).rows();
        let hidden = store.get(first.w_hh).rows();
        Some(Lstm {
            layers,
            hidden,
            input,
        })
    }

    pub fn zero_state(&self, tape: &mut Tape, rows: usize) -> LstmState {
        let z = tape.constant(Mat::zeros(rows, self.hidden));
        LstmState {
            h: vec![z; self.layers.len()],
            c: vec![z; self.layers.len()],
        }
    }

    pub fn step(&self, tape: &mut Tape, x: Var, state: &LstmState) -> LstmState {
        let mut input = x;
        let mut next = LstmState {
            h: Vec::with_capacity(self.layers.len()),
            c: Vec::with_capacity(self.layers.len()),
        };
        for (l, layer) in self.layers.iter().enumerate() {
            let w_ih = tape.param(layer.w_ih);
            let w_hh = tape.param(layer.w_hh);
            let b = tape.param(layer.bias);
            let a = tape.matmul(input, w_ih);
            let r = tape.matmul(state.h[l], w_hh);
            let s = tape.add(a, r);
            let gates = tape.add_row(s, b);
            let hc = tape.lstm_cell(gates, state.c[l]);
            let h = tape.slice_cols(hc, 0, self.hidden);
            let c = tape.slice_cols(hc, self.hidden, self.hidden);
            next.h.push(h);
            next.c.push(c);
            input = h;
        }
        next
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lstm_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "lstm", 2, 3, 1, &mut rng);
        let x = Mat::from_vec(1, 2, vec![0.4, -1.2]);

        let mut tape = Tape::new(&store);
        let xv = tape.constant(x.clone());
        let s0 = lstm.zero_state(&mut tape, 1);
        let s1 = lstm.step(&mut tape, xv, &s0);
        let h = tape.value(s1.top()).clone();

        let w_ih = store.get(lstm.layers[0].w_ih);
        let b = store.get(lstm.layers[0].bias);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for k in 0..3 {
            let gate = |g: usize| {
                let col = g * 3 + k;
                x.get(0, 0) * w_ih.get(0, col) + x.get(0, 1) * w_ih.get(1, col) + b.get(0, col)
            };
            let c = sig(gate(0)) * gate(2).tanh();
            let expect = sig(gate(3)) * c.tanh();
            assert!((h.get(0, k) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn mlp_round_trips_through_store_names() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "head", &[4, 8, 8, 2], &mut rng);
        let again = Mlp::from_store(&store, "head").unwrap();
        assert_eq!(again.layers.len(), 3);
        assert_eq!(again.out_dim(), 2);
        assert_eq!(mlp.layers[2].weight, again.layers[2].weight);
    }
}
