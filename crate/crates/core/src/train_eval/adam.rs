//! Adam with bias correction.

use crate::linalg::Mat;
use crate::params::{Grads, ParamStore};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, b1: f64, b2: f64, eps: f64) -> Self {
        let zeros = || store.iter().map(|(_, _, p)| Mat::zeros(p.rows(), p.cols())).collect();
        Adam {
            lr,
            b1,
            b2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One descent step along `grads`, the gradient of the loss.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let c1 = 1.0 - self.b1.powi(self.step as i32);
        let c2 = 1.0 - self.b2.powi(self.step as i32);
        for (id, g) in grads.iter() {
            let k = id.index();
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = self.b1 * m[j] + (1.0 - self.b1) * gj;
                v[j] = self.b2 * v[j] + (1.0 - self.b2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_each_weight_by_lr_against_the_gradient_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", Mat::from_vec(1, 3, vec![1.0, 2.0, 3.0]));
        let mut grads = Grads::zeros_like(&store);
        grads.get_mut(id).data_mut().copy_from_slice(&[0.5, -4.0, 0.0]);
        let mut adam = Adam::new(&store, 0.1, 0.9, 0.999, 1e-8);
        adam.step(&mut store, &grads);
        let w = store.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] - 2.1).abs() < 1e-6);
        assert_eq!(w[2], 3.0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Mat::from_vec(1, 2, vec![3.0, -2.0]));
        let mut adam = Adam::new(&store, 0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let mut grads = Grads::zeros_like(&store);
            let x = store.get(id).clone();
            // loss = (x0 - 1)^2 + 2 (x1 + 0.5)^2
            grads.get_mut(id).data_mut().copy_from_slice(&[2.0 * (x.data()[0] - 1.0), 4.0 * (x.data()[1] + 0.5)]);
            adam.step(&mut store, &grads);
        }
        let x = store.get(id).data();
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] + 0.5).abs() < 1e-3, "{x:?}");
    }
}
