use serde::{Deserialize, Serialize};

use super::mlp::MlpNet;
use super::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one [`MlpNet`].
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    step: u64,
    first: Vec<Tensor2>,
    second: Vec<Tensor2>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, net: &MlpNet) -> Self {
        let mut first = Vec::new();
        for l in net.layers() {
            first.push(Tensor2::zeros(l.weight.rows(), l.weight.cols()));
            first.push(Tensor2::zeros(1, l.bias.cols()));
        }
        let second = first.clone();
        Self {
            cfg,
            step: 0,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// One bias-corrected Adam update from the gradients held in `net`.
    /// Gradients are left in place; the caller zeroes them.
    pub fn apply(&mut self, net: &mut MlpNet) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut slot = 0;
        let (first, second) = (&mut self.first, &mut self.second);
        net.for_each_param_mut(|param, grad| {
            let m = first[slot].data_mut();
            let v = second[slot].data_mut();
            for (((p, &g), mi), vi) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            slot += 1;
        });
    }
}
