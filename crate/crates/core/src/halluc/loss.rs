//! Scalar GAN objectives and their gradients with respect to network outputs.
//!
//! Discriminator outputs are probabilities; they are clamped to
//! `[ε, 1−ε]` inside every log, and the gradient is zero where the clamp is
//! active.

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor2;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionNorm {
    /// Mean squared error.
    #[default]
    SquaredL2,
    /// Mean absolute error.
    L1,
}

#[inline]
fn clamp(p: f64) -> (f64, bool) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, false)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, false)
    } else {
        (p, true)
    }
}

/// `−mean log D(real) − mean log(1 − D(fake))` and its gradients with
/// respect to both output columns.
pub fn discriminator_bce(d_real: &Tensor2, d_fake: &Tensor2) -> (f64, Tensor2, Tensor2) {
    let nr = d_real.rows().max(1) as f64;
    let nf = d_fake.rows().max(1) as f64;
    let mut loss = 0.0;
    let mut g_real = Tensor2::zeros(d_real.rows(), d_real.cols());
    for (g, &p) in g_real.data_mut().iter_mut().zip(d_real.data()) {
        let (c, live) = clamp(p);
        loss -= c.ln() / nr;
        if live {
            *g = -1.0 / (nr * c);
        }
    }
    let mut g_fake = Tensor2::zeros(d_fake.rows(), d_fake.cols());
    for (g, &p) in g_fake.data_mut().iter_mut().zip(d_fake.data()) {
        let (c, live) = clamp(p);
        loss -= (1.0 - c).ln() / nf;
        if live {
            *g = 1.0 / (nf * (1.0 - c));
        }
    }
    (loss, g_real, g_fake)
}

/// Generator adversarial term on `D(fake)`.
///
/// Non-saturating: `−mean log D(fake)`. Saturating: `mean log(1 − D(fake))`,
/// the literal minimax form.
pub fn generator_adversarial(d_fake: &Tensor2, saturating: bool) -> (f64, Tensor2) {
    let n = d_fake.rows().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor2::zeros(d_fake.rows(), d_fake.cols());
    for (g, &p) in grad.data_mut().iter_mut().zip(d_fake.data()) {
        let (c, live) = clamp(p);
        if saturating {
            loss += (1.0 - c).ln() / n;
            if live {
                *g = -1.0 / (n * (1.0 - c));
            }
        } else {
            loss -= c.ln() / n;
            if live {
                *g = -1.0 / (n * c);
            }
        }
    }
    (loss, grad)
}

/// Mean over the batch of the per-row mean error; gradient w.r.t. `pred`.
pub fn reconstruction(pred: &Tensor2, target: &Tensor2, norm: ReconstructionNorm) -> (f64, Tensor2) {
    debug_assert_eq!(pred.shape(), target.shape());
    let n = pred.data().len().max(1) as f64;
    let mut grad = Tensor2::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        match norm {
            ReconstructionNorm::SquaredL2 => {
                loss += d * d / n;
                *g = 2.0 * d / n;
            }
            ReconstructionNorm::L1 => {
                loss += d.abs() / n;
                *g = d.signum() / n * if d == 0.0 { 0.0 } else { 1.0 };
            }
        }
    }
    (loss, grad)
}
