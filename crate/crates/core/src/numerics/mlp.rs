//! Feed-forward networks with a per-call tape for reverse-mode gradients.
//!
//! Batches are row-major: one sample per row. A layer computes
//! `act(x · W + b)` with `W` stored as `in × out`. When the net's dropout
//! rate is non-zero, inverted dropout follows every layer except the last.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor2,
    pub bias: Tensor2,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Tensor2, bias: Tensor2, activation: Activation) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::dims("layer bias", weight.shape(), bias.shape()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    shapes: Vec<(usize, usize)>,
    /// Input fed to each layer (after the previous layer's dropout).
    inputs: Vec<Tensor2>,
    /// Activation output of each layer, before dropout.
    outputs: Vec<Tensor2>,
    /// Scaled keep-masks, present only where dropout ran.
    masks: Vec<Option<Tensor2>>,
}

impl Tape {
    pub fn masks(&self) -> &[Option<Tensor2>] {
        &self.masks
    }

    pub fn input(&self) -> &Tensor2 {
        &self.inputs[0]
    }
}

/// Equality compares parameters and dropout rate; accumulated gradients are
/// scratch state and ignored.
#[derive(Debug, Clone)]
pub struct MlpNet {
    layers: Vec<Layer>,
    dropout_rate: f64,
    grads: Vec<LayerGrads>,
}

enum Dropout<'a, R: Rng + ?Sized> {
    Off,
    Sample(&'a mut R),
    Fixed(&'a [Option<Tensor2>]),
}

impl PartialEq for MlpNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.dropout_rate == other.dropout_rate
    }
}

impl MlpNet {
    pub fn from_layers(layers: Vec<Layer>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::State("network needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::config(
                "dropout_rate",
                format!("must be in [0, 1), got {dropout_rate}"),
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dims(
                    "layer chain",
                    pair[0].weight.shape(),
                    pair[1].weight.shape(),
                ));
            }
        }
        let grads = layers
            .iter()
            .map(|l| LayerGrads {
                weight: Tensor2::zeros(l.in_dim(), l.out_dim()),
                bias: Tensor2::zeros(1, l.out_dim()),
            })
            .collect();
        Ok(Self {
            layers,
            dropout_rate,
            grads,
        })
    }

    /// Randomly initialised net with layer widths `sizes[0] → … → sizes[n]`.
    ///
    /// Hidden layers use `hidden` and He-uniform init when that is relu,
    /// Xavier-uniform otherwise; the last layer uses `output`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::config(
                "layer_sizes",
                format!("need at least two non-zero widths, got {sizes:?}"),
            ));
        }
        let n = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
            let act = if i + 1 == n { output } else { hidden };
            let limit = match act {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            layers.push(Layer::new(
                Tensor2::from_vec(fan_in, fan_out, data)?,
                Tensor2::zeros(1, fan_out),
                act,
            )?);
        }
        Self::from_layers(layers, dropout_rate)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn grads(&self) -> &[LayerGrads] {
        &self.grads
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, p: f64) -> Result<()> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config("dropout_rate", format!("must be in [0, 1), got {p}")));
        }
        self.dropout_rate = p;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.weight.fill(0.0);
            g.bias.fill(0.0);
        }
    }

    /// Visits `(parameter, gradient)` pairs in a fixed order: per layer, weight then bias.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut Tensor2, &Tensor2)) {
        for (l, g) in self.layers.iter_mut().zip(&self.grads) {
            f(&mut l.weight, &g.weight);
            f(&mut l.bias, &g.bias);
        }
    }

    /// Forward pass. In train mode dropout masks are drawn from `rng`;
    /// in eval mode `rng` is untouched.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &Tensor2,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor2, Tape)> {
        match mode {
            Mode::Train if self.dropout_rate > 0.0 => self.run(input, Dropout::Sample(rng)),
            _ => self.run::<R>(input, Dropout::Off),
        }
    }

    /// Deterministic eval-mode pass, with a tape for backward.
    pub fn forward_eval(&self, input: &Tensor2) -> Result<(Tensor2, Tape)> {
        self.run::<rand_chacha::ChaCha8Rng>(input, Dropout::Off)
    }

    /// Eval-mode output only.
    pub fn predict(&self, input: &Tensor2) -> Result<Tensor2> {
        Ok(self.forward_eval(input)?.0)
    }

    /// Train-mode pass replaying the masks of an earlier tape.
    pub fn forward_with_masks(
        &self,
        input: &Tensor2,
        masks: &[Option<Tensor2>],
    ) -> Result<(Tensor2, Tape)> {
        if masks.len() != self.layers.len() {
            return Err(Error::State(format!(
                "mask count {} does not match {} layers",
                masks.len(),
                self.layers.len()
            )));
        }
        self.run::<rand_chacha::ChaCha8Rng>(input, Dropout::Fixed(masks))
    }

    fn run<R: Rng + ?Sized>(&self, input: &Tensor2, mut dropout: Dropout<'_, R>) -> Result<(Tensor2, Tape)> {
        if input.cols() != self.input_dim() {
            return Err(Error::dims(
                "forward",
                input.shape(),
                self.layers[0].weight.shape(),
            ));
        }
        let n = self.layers.len();
        let mut tape = Tape {
            shapes: self.layers.iter().map(|l| l.weight.shape()).collect(),
            inputs: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = x.matmul(&layer.weight)?;
            let bias = layer.bias.data();
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(bias) {
                    *v = layer.activation.apply(*v + b);
                }
            }
            let mask = if i + 1 < n {
                match &mut dropout {
                    Dropout::Off => None,
                    Dropout::Sample(rng) => Some(self.sample_mask(z.rows(), z.cols(), &mut **rng)),
                    Dropout::Fixed(masks) => masks[i].clone(),
                }
            } else {
                None
            };
            let next = match &mask {
                Some(m) => {
                    if m.shape() != z.shape() {
                        return Err(Error::dims("dropout mask", z.shape(), m.shape()));
                    }
                    let mut d = z.clone();
                    d.data_mut()
                        .iter_mut()
                        .zip(m.data())
                        .for_each(|(v, k)| *v *= k);
                    d
                }
                None => z.clone(),
            };
            tape.inputs.push(x);
            tape.outputs.push(z);
            tape.masks.push(mask);
            x = next;
        }
        Ok((x, tape))
    }

    fn sample_mask<R: Rng + ?Sized>(&self, rows: usize, cols: usize, rng: &mut R) -> Tensor2 {
        let keep = 1.0 - self.dropout_rate;
        let scale = 1.0 / keep;
        let data = (0..rows * cols)
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        Tensor2::from_vec(rows, cols, data).expect("mask shape")
    }

    fn check_tape(&self, tape: &Tape, output_grad: &Tensor2) -> Result<()> {
        let same = tape.shapes.len() == self.layers.len()
            && tape
                .shapes
                .iter()
                .zip(&self.layers)
                .all(|(s, l)| *s == l.weight.shape());
        if !same {
            return Err(Error::State(format!(
                "tape recorded layers {:?}, net has {:?}",
                tape.shapes,
                self.layers.iter().map(|l| l.weight.shape()).collect::<Vec<_>>()
            )));
        }
        let out = &tape.outputs[tape.outputs.len() - 1];
        if out.shape() != output_grad.shape() {
            return Err(Error::dims("backward", out.shape(), output_grad.shape()));
        }
        Ok(())
    }

    /// Reverse pass: accumulates parameter gradients and returns `∂loss/∂input`.
    pub fn backward(&mut self, tape: &Tape, output_grad: &Tensor2) -> Result<Tensor2> {
        self.check_tape(tape, output_grad)?;
        let mut grads = std::mem::take(&mut self.grads);
        let result = self.reverse(tape, output_grad, Some(&mut grads));
        self.grads = grads;
        result
    }

    /// Reverse pass that leaves parameter gradients untouched; only `∂loss/∂input`.
    pub fn backward_input(&self, tape: &Tape, output_grad: &Tensor2) -> Result<Tensor2> {
        self.check_tape(tape, output_grad)?;
        self.reverse(tape, output_grad, None)
    }

    fn reverse(
        &self,
        tape: &Tape,
        output_grad: &Tensor2,
        mut acc: Option<&mut Vec<LayerGrads>>,
    ) -> Result<Tensor2> {
        let mut g = output_grad.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if let Some(m) = &tape.masks[i] {
                g.data_mut()
                    .iter_mut()
                    .zip(m.data())
                    .for_each(|(v, k)| *v *= k);
            }
            let y = &tape.outputs[i];
            g.data_mut()
                .iter_mut()
                .zip(y.data())
                .for_each(|(v, &yv)| *v *= layer.activation.grad_from_output(yv));
            if let Some(acc) = acc.as_deref_mut() {
                let lg = &mut acc[i];
                tape.inputs[i].t_matmul_acc(&g, &mut lg.weight)?;
                let b = lg.bias.data_mut();
                for r in 0..g.rows() {
                    for (bv, gv) in b.iter_mut().zip(g.row(r)) {
                        *bv += gv;
                    }
                }
            }
            g = g.matmul_t(&layer.weight)?;
        }
        Ok(g)
    }
}
