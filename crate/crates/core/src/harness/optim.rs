//! Adam with decoupled weight decay.

use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter from its gradient, in matching order.
    /// Decay is applied to the weights directly, not through the gradient.
    pub fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut Tensor>, grads: &[Tensor]) {
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for (i, (p, g)) in params.zip(grads).enumerate() {
            if self.m.len() <= i {
                self.m.push(vec![0.0; g.len()]);
                self.v.push(vec![0.0; g.len()]);
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *w *= 1.0 - self.lr * self.weight_decay;
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + EPS);
            }
        }
    }
}
