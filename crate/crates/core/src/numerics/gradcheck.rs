//! Central finite differences for checking analytic gradients.
//!
//! These helpers only ever evaluate the loss; they never touch a tape, so
//! they stay independent of the backward code they check.

use super::mlp::{LayerGrads, MlpNet};
use super::tensor::Tensor2;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(tensor index, element index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradReport {
    fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            checked: 0,
            worst: None,
        }
    }

    fn record(&mut self, tensor: usize, elem: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(e);
            self.worst = Some((tensor, elem, analytic, numeric));
        }
    }

    pub fn merge(mut self, other: GradReport) -> GradReport {
        self.checked += other.checked;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn probe_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|i| i * len / max).collect()
    }
}

/// Compares `analytic` against central differences of `loss` over the
/// parameters of `net`, probing at most `max_per_tensor` entries per tensor.
pub fn check_params(
    net: &mut MlpNet,
    analytic: &[LayerGrads],
    h: f64,
    max_per_tensor: usize,
    mut loss: impl FnMut(&MlpNet) -> f64,
) -> GradReport {
    let mut report = GradReport::empty();
    for li in 0..net.layers().len() {
        for (ti, is_bias) in [(2 * li, false), (2 * li + 1, true)] {
            let len = if is_bias {
                net.layers()[li].bias.data().len()
            } else {
                net.layers()[li].weight.data().len()
            };
            for idx in probe_indices(len, max_per_tensor) {
                let a = if is_bias {
                    analytic[li].bias.data()[idx]
                } else {
                    analytic[li].weight.data()[idx]
                };
                let x0 = param(net, li, is_bias, idx);
                let mut eval = |x: f64| {
                    set_param(net, li, is_bias, idx, x);
                    loss(net)
                };
                let n = central_difference(&mut eval, x0, h);
                set_param(net, li, is_bias, idx, x0);
                report.record(ti, idx, a, n);
            }
        }
    }
    report
}

/// Compares `analytic` against central differences of `loss` over the entries of `x`.
pub fn check_input(
    x: &Tensor2,
    analytic: &Tensor2,
    h: f64,
    max_entries: usize,
    mut loss: impl FnMut(&Tensor2) -> f64,
) -> GradReport {
    let mut report = GradReport::empty();
    let mut probe = x.clone();
    for idx in probe_indices(x.data().len(), max_entries) {
        let x0 = x.data()[idx];
        let n = central_difference(
            |v| {
                probe.data_mut()[idx] = v;
                loss(&probe)
            },
            x0,
            h,
        );
        probe.data_mut()[idx] = x0;
        report.record(0, idx, analytic.data()[idx], n);
    }
    report
}

fn param(net: &MlpNet, li: usize, bias: bool, idx: usize) -> f64 {
    let l = &net.layers()[li];
    if bias {
        l.bias.data()[idx]
    } else {
        l.weight.data()[idx]
    }
}

fn set_param(net: &mut MlpNet, li: usize, bias: bool, idx: usize, v: f64) {
    let l = &mut net.layers_mut()[li];
    if bias {
        l.bias.data_mut()[idx] = v;
    } else {
        l.weight.data_mut()[idx] = v;
    }
}
