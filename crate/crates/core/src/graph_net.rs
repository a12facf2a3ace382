//! One round of graph-network message passing.
//!
//! Edges carry `f_e(v_sender, v_receiver)`, incoming edges are summed per
//! receiver, and each receiver is updated with `f_v(aggregate)`. Both update
//! functions are MLPs with two hidden ReLU layers.
//!
//! The first edge layer acts on `sender ‖ receiver`, which splits into a
//! per-sender and a per-receiver projection; the last edge layer is linear,
//! so it commutes with the sum and is applied after aggregation. Both
//! rewrites are exact and keep the per-edge cost to one hidden layer.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{EdgeList, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::Mlp;
use crate::params::{ParamId, ParamStore};

/// Shape hyperparameters of a [`GraphNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// Feed `aggregate ‖ own features` to the node update instead of the
    /// aggregate alone.
    #[serde(default)]
    pub node_uses_input: bool,
}

/// Which nodes exist and which of them may receive messages.
///
/// Edges are every ordered pair `(i, j)` with `i != j` where `j` is not
/// sender-only. There are no self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphTopology {
    n_nodes: usize,
    sender_only: Vec<bool>,
}

impl GraphTopology {
    pub fn fully_connected(n_nodes: usize) -> Self {
        GraphTopology {
            n_nodes,
            sender_only: vec![false; n_nodes],
        }
    }

    /// `n_regular` receiving nodes followed by `n_sender_only` nodes that
    /// only send.
    pub fn with_sender_only(n_regular: usize, n_sender_only: usize) -> Self {
        let mut sender_only = vec![false; n_regular];
        sender_only.extend(std::iter::repeat_n(true, n_sender_only));
        GraphTopology {
            n_nodes: n_regular + n_sender_only,
            sender_only,
        }
    }

    pub fn from_flags(sender_only: Vec<bool>) -> Self {
        GraphTopology {
            n_nodes: sender_only.len(),
            sender_only,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn is_sender_only(&self, node: usize) -> bool {
        self.sender_only[node]
    }

    /// Receiving nodes in ascending order.
    pub fn receivers(&self) -> Vec<usize> {
        (0..self.n_nodes).filter(|&j| !self.sender_only[j]).collect()
    }

    pub fn edges(&self) -> EdgeList {
        let mut senders = Vec::new();
        let mut receivers = Vec::new();
        for j in self.receivers() {
            for i in 0..self.n_nodes {
                if i != j {
                    senders.push(i);
                    receivers.push(j);
                }
            }
        }
        EdgeList { senders, receivers }
    }

    /// In-degree of every node.
    pub fn in_degrees(&self) -> Vec<usize> {
        let n_senders = self.n_nodes.saturating_sub(1);
        (0..self.n_nodes)
            .map(|j| if self.sender_only[j] { 0 } else { n_senders })
            .collect()
    }
}

/// Parameters of one graph network (`f_e` and `f_v`).
#[derive(Debug, Clone)]
pub struct GraphNet {
    pub config: GnConfig,
    edge_send: ParamId,
    edge_recv: ParamId,
    edge_b1: ParamId,
    edge_w2: ParamId,
    edge_b2: ParamId,
    edge_w3: ParamId,
    edge_b3: ParamId,
    node: Mlp,
}

impl GraphNet {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, config: GnConfig, rng: &mut R) -> Self {
        let (f, h) = (config.in_dim, config.hidden);
        let fan_in = 2 * f;
        let edge_send = store.add_uniform(format!("{name}.edge.l0.w_send"), f, h, fan_in, rng);
        let edge_recv = store.add_uniform(format!("{name}.edge.l0.w_recv"), f, h, fan_in, rng);
        let edge_b1 = store.add(format!("{name}.edge.l0.b"), Mat::zeros(1, h));
        let edge_w2 = store.add_uniform(format!("{name}.edge.l1.w"), h, h, h, rng);
        let edge_b2 = store.add(format!("{name}.edge.l1.b"), Mat::zeros(1, h));
        let edge_w3 = store.add_uniform(format!("{name}.edge.l2.w"), h, h, h, rng);
        let edge_b3 = store.add(format!("{name}.edge.l2.b"), Mat::zeros(1, h));
        let node_in = if config.node_uses_input { h + f } else { h };
        let node = Mlp::new(
            store,
            &format!("{name}.node"),
            &[node_in, h, h, config.out_dim],
            rng,
        );
        GraphNet {
            config,
            edge_send,
            edge_recv,
            edge_b1,
            edge_w2,
            edge_b2,
            edge_w3,
            edge_b3,
            node,
        }
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Result<Self> {
        let get = |suffix: &str| {
            store
                .id(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}.{suffix}")))
        };
        let edge_send = get("edge.l0.w_send")?;
        let edge_w3 = get("edge.l2.w")?;
        let node = Mlp::from_store(store, &format!("{name}.node"))
            .ok_or_else(|| Error::Checkpoint(format!("missing node mlp for {name}")))?;
        let (in_dim, hidden) = store.get(edge_send).shape();
        let node_in = node.layers[0].in_dim;
        let config = GnConfig {
            in_dim,
            hidden,
            out_dim: node.out_dim(),
            node_uses_input: node_in == hidden + in_dim,
        };
        debug_assert_eq!(store.get(edge_w3).cols(), hidden);
        Ok(GraphNet {
            config,
            edge_send,
            edge_recv: get("edge.l0.w_recv")?,
            edge_b1: get("edge.l0.b")?,
            edge_w2: get("edge.l1.w")?,
            edge_b2: get("edge.l1.b")?,
            edge_w3,
            edge_b3: get("edge.l2.b")?,
            node,
        })
    }

    /// Applies the network on a tape. Returns one row per receiving node, in
    /// node order.
    pub fn apply(&self, tape: &mut Tape, topo: &GraphTopology, nodes: Var) -> Var {
        let n = topo.n_nodes();
        debug_assert_eq!(tape.value(nodes).rows(), n);
        let w_send = tape.param(self.edge_send);
        let w_recv = tape.param(self.edge_recv);
        let b1 = tape.param(self.edge_b1);
        let w2 = tape.param(self.edge_w2);
        let b2 = tape.param(self.edge_b2);
        let w3 = tape.param(self.edge_w3);
        let b3 = tape.param(self.edge_b3);

        let send = tape.matmul(nodes, w_send);
        let recv0 = tape.matmul(nodes, w_recv);
        let recv = tape.add_row(recv0, b1);
        let agg_hidden = tape.edge_aggregate(send, recv, w2, b2, Rc::new(topo.edges()));
        let agg_w = tape.matmul(agg_hidden, w3);
        let degrees = Mat::from_vec(
            n,
            1,
            topo.in_degrees().into_iter().map(|d| d as f64).collect(),
        );
        let deg = tape.constant(degrees);
        let deg_bias = tape.matmul(deg, b3);
        let mut messages = tape.add(agg_w, deg_bias);

        let receivers = topo.receivers();
        let mut own = nodes;
        if receivers.len() != n {
            messages = tape.select_rows(messages, receivers.clone());
            own = tape.select_rows(nodes, receivers);
        }
        let node_in = if self.config.node_uses_input {
            tape.concat_cols(&[messages, own])
        } else {
            messages
        };
        self.node.apply(tape, node_in)
    }

    /// Tape-free application with input validation.
    pub fn forward(
        &self,
        store: &ParamStore,
        topo: &GraphTopology,
        node_features: &Mat,
    ) -> Result<Mat> {
        if node_features.rows() != topo.n_nodes() {
            return Err(Error::Argument(format!(
                "graph has {} nodes but features have {} rows",
                topo.n_nodes(),
                node_features.rows()
            )));
        }
        if node_features.cols() != self.config.in_dim {
            return Err(Error::Argument(format!(
                "node features have width {} but the edge network expects {}",
                node_features.cols(),
                self.config.in_dim
            )));
        }
        if !node_features.all_finite() {
            return Err(Error::Numeric("non-finite node features".into()));
        }
        let mut tape = Tape::new(store);
        let v = tape.constant(node_features.clone());
        let out = self.apply(&mut tape, topo, v);
        Ok(tape.value(out).clone())
    }

    /// `f_v` alone, useful for checking the empty-aggregate case.
    pub fn node_update(&self, store: &ParamStore, aggregate: &Mat) -> Mat {
        let mut tape = Tape::new(store);
        let v = tape.constant(aggregate.clone());
        let out = self.node.apply(&mut tape, v);
        tape.value(out).clone()
    }

    /// `f_e(sender, receiver)` for single feature rows, evaluated literally
    /// on the concatenated input.
    pub fn edge_message(&self, store: &ParamStore, sender: &[f64], receiver: &[f64]) -> Vec<f64> {
        let h = self.config.hidden;
        let ws = store.get(self.edge_send);
        let wr = store.get(self.edge_recv);
        let mut hidden1 = store.get(self.edge_b1).data().to_vec();
        for (k, hv) in hidden1.iter_mut().enumerate() {
            for (f, (&s, &r)) in sender.iter().zip(receiver).enumerate() {
                *hv += s * ws.get(f, k) + r * wr.get(f, k);
            }
            *hv = hv.max(0.0);
        }
        let layer = |x: &[f64], w: &Mat, b: &Mat, relu: bool| -> Vec<f64> {
            (0..w.cols())
                .map(|k| {
                    let v = b.get(0, k) + x.iter().enumerate().map(|(i, xi)| xi * w.get(i, k)).sum::<f64>();
                    if relu {
                        v.max(0.0)
                    } else {
                        v
                    }
                })
                .collect()
        };
        let hidden2 = layer(&hidden1, store.get(self.edge_w2), store.get(self.edge_b2), true);
        let out = layer(&hidden2, store.get(self.edge_w3), store.get(self.edge_b3), false);
        debug_assert_eq!(out.len(), h);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(in_dim: usize, out_dim: usize, seed: u64) -> (ParamStore, GraphNet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = GnConfig {
            in_dim,
            hidden: 16,
            out_dim,
            node_uses_input: false,
        };
        let gn = GraphNet::new(&mut store, "gn", cfg, &mut rng);
        (store, gn)
    }

    #[test]
    fn single_node_sees_empty_aggregate() {
        let (store, gn) = net(3, 4, 1);
        let out = gn
            .forward(&store, &GraphTopology::fully_connected(1), &Mat::from_vec(1, 3, vec![1.0, 2.0, 3.0]))
            .unwrap();
        let expect = gn.node_update(&store, &Mat::zeros(1, 16));
        assert_eq!(out, expect);
    }

    #[test]
    fn identical_nodes_get_identical_outputs() {
        let (store, gn) = net(2, 3, 2);
        let v = Mat::from_vec(2, 2, vec![0.5, -0.5, 0.5, -0.5]);
        let out = gn.forward(&store, &GraphTopology::fully_connected(2), &v).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn factorised_edges_match_literal_mlp() {
        let (store, gn) = net(3, 2, 3);
        let v = Mat::from_vec(3, 3, vec![0.1, 0.2, -0.3, 1.0, -1.0, 0.5, 0.0, 0.7, 0.9]);
        let out = gn.forward(&store, &GraphTopology::fully_connected(3), &v).unwrap();
        for j in 0..3 {
            let mut agg = vec![0.0; 16];
            for i in (0..3).filter(|&i| i != j) {
                for (a, m) in agg.iter_mut().zip(gn.edge_message(&store, v.row(i), v.row(j))) {
                    *a += m;
                }
            }
            let expect = gn.node_update(&store, &Mat::from_vec(1, 16, agg));
            for k in 0..2 {
                assert!((out.get(j, k) - expect.get(0, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sender_only_nodes_do_not_receive() {
        let topo = GraphTopology::with_sender_only(2, 1);
        let edges = topo.edges();
        assert!(!edges.receivers.contains(&2));
        assert_eq!(edges.senders.len(), 4);
        assert_eq!(topo.receivers(), vec![0, 1]);
        let (store, gn) = net(2, 3, 4);
        let out = gn
            .forward(&store, &topo, &Mat::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]))
            .unwrap();
        assert_eq!(out.rows(), 2);
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let (store, gn) = net(2, 3, 5);
        let topo = GraphTopology::fully_connected(2);
        assert!(matches!(
            gn.forward(&store, &topo, &Mat::zeros(3, 2)),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            gn.forward(&store, &topo, &Mat::zeros(2, 5)),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            gn.forward(&store, &topo, &Mat::from_vec(2, 2, vec![0.0, f64::NAN, 0.0, 0.0])),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn reloads_from_store_names() {
        let (store, gn) = net(5, 7, 6);
        let again = GraphNet::from_store(&store, "gn").unwrap();
        assert_eq!(again.config, gn.config);
    }
}
