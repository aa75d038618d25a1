use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::Tensor2D;
use crate::error::{Error, Result};

/// Fully connected layer. Weights are stored row-major as `(out_width, in_width)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_width: usize,
    pub out_width: usize,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Dense {
    pub fn zeros(in_width: usize, out_width: usize, has_bias: bool) -> Self {
        Self {
            in_width,
            out_width,
            weight: vec![0.0; in_width * out_width],
            bias: has_bias.then(|| vec![0.0; out_width]),
        }
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    pub fn init<R: Rng + ?Sized>(
        in_width: usize,
        out_width: usize,
        has_bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_width as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        let weight = (0..in_width * out_width).map(|_| draw()).collect();
        let bias = has_bias.then(|| (0..out_width).map(|_| draw()).collect());
        Self {
            in_width,
            out_width,
            weight,
            bias,
        }
    }

    pub fn identity(width: usize) -> Self {
        let mut d = Self::zeros(width, width, true);
        for i in 0..width {
            d.weight[i * width + i] = 1.0;
        }
        d
    }

    fn check(&self) -> Result<()> {
        if self.weight.len() != self.in_width * self.out_width {
            return Err(Error::Shape(format!(
                "dense {}x{} holds {} weights",
                self.out_width,
                self.in_width,
                self.weight.len()
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_width {
                return Err(Error::Shape(format!(
                    "dense bias of length {} for width {}",
                    b.len(),
                    self.out_width
                )));
            }
        }
        Ok(())
    }

    fn forward(&self, x: &Tensor2D) -> Tensor2D {
        let mut out = Tensor2D::zeros(x.rows(), self.out_width);
        for i in 0..x.rows() {
            let xi = x.row(i);
            let oi = out.row_mut(i);
            for (j, o) in oi.iter_mut().enumerate() {
                let w = &self.weight[j * self.in_width..(j + 1) * self.in_width];
                let mut acc = match &self.bias {
                    Some(b) => b[j],
                    None => 0.0,
                };
                for (xk, wk) in xi.iter().zip(w) {
                    acc += xk * wk;
                }
                *o = acc;
            }
        }
        out
    }

    fn backward(&self, x: &Tensor2D, upstream: &Tensor2D) -> (DenseGrad, Tensor2D) {
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = self.bias.as_ref().map(|b| vec![0.0; b.len()]);
        let mut gx = Tensor2D::zeros(x.rows(), self.in_width);
        for i in 0..x.rows() {
            let xi = x.row(i);
            let gi = upstream.row(i);
            for (j, &g) in gi.iter().enumerate() {
                let row = &mut gw[j * self.in_width..(j + 1) * self.in_width];
                for (w, xk) in row.iter_mut().zip(xi) {
                    *w += g * xk;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[j] += g;
                }
            }
            let gxi = gx.row_mut(i);
            for (k, out) in gxi.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, &g) in gi.iter().enumerate() {
                    acc += g * self.weight[j * self.in_width + k];
                }
                *out = acc;
            }
        }
        (
            DenseGrad {
                weight: gw,
                bias: gb,
            },
            gx,
        )
    }
}

/// One layer of a [`LayerStack`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Dense(Dense),
    Relu { width: usize },
}

impl Layer {
    pub fn in_width(&self) -> usize {
        match self {
            Layer::Dense(d) => d.in_width,
            Layer::Relu { width } => *width,
        }
    }

    pub fn out_width(&self) -> usize {
        match self {
            Layer::Dense(d) => d.out_width,
            Layer::Relu { width } => *width,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weight.len() + d.bias.as_ref().map_or(0, Vec::len),
            Layer::Relu { .. } => 0,
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        let (w, b): (&[f64], &[f64]) = match self {
            Layer::Dense(d) => (&d.weight, d.bias.as_deref().unwrap_or(&[])),
            Layer::Relu { .. } => (&[], &[]),
        };
        w.iter().chain(b)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        let (w, b): (&mut [f64], &mut [f64]) = match self {
            Layer::Dense(d) => (&mut d.weight, d.bias.as_deref_mut().unwrap_or(&mut [])),
            Layer::Relu { .. } => (&mut [], &mut []),
        };
        w.iter_mut().chain(b.iter_mut())
    }
}

/// Gradient of one dense layer, same shapes as its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

/// Parameter gradients for a contiguous range of a stack. Entry `i` belongs to
/// layer `from + i`; parameterless layers hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackGrads {
    pub from: usize,
    pub layers: Vec<Option<DenseGrad>>,
}

impl StackGrads {
    pub fn to(&self) -> usize {
        self.from + self.layers.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.layers.iter().flatten() {
            out.extend_from_slice(&g.weight);
            if let Some(b) = &g.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }

    /// Splits into the gradients of layers before `at` and from `at` on.
    pub fn split_at(mut self, at: usize) -> (StackGrads, StackGrads) {
        let k = at.clamp(self.from, self.to()) - self.from;
        let tail = self.layers.split_off(k);
        let from = self.from;
        (
            StackGrads {
                from,
                layers: self.layers,
            },
            StackGrads {
                from: from + k,
                layers: tail,
            },
        )
    }

    pub fn is_zero(&self) -> bool {
        self.flat().iter().all(|v| *v == 0.0)
    }
}

/// Intermediates cached by a forward pass over `[from, to)`: the input of each layer.
#[derive(Debug, Clone)]
pub struct Tape {
    from: usize,
    to: usize,
    inputs: Vec<Tensor2D>,
}

impl Tape {
    pub fn range(&self) -> Range<usize> {
        self.from..self.to
    }
}

/// An ordered list of layers: the full model, or one part of a split model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Layer>", into = "Vec<Layer>")]
pub struct LayerStack {
    layers: Vec<Layer>,
}

impl TryFrom<Vec<Layer>> for LayerStack {
    type Error = Error;

    fn try_from(layers: Vec<Layer>) -> Result<Self> {
        Self::new(layers)
    }
}

impl From<LayerStack> for Vec<Layer> {
    fn from(s: LayerStack) -> Self {
        s.layers
    }
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for layer in &layers {
            if let Layer::Dense(d) = layer {
                d.check()?;
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_width() != pair[1].in_width() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_width(),
                    i + 1,
                    pair[1].in_width()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Dense/ReLU alternation ending in a dense logits layer.
    pub fn mlp<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 || output == 0 || hidden.contains(&0) {
            return Err(Error::InvalidParam("layer widths must be positive".into()));
        }
        let mut layers = Vec::new();
        let mut width = input;
        for &h in hidden {
            layers.push(Layer::Dense(Dense::init(width, h, true, rng)));
            layers.push(Layer::Relu { width: h });
            width = h;
        }
        layers.push(Layer::Dense(Dense::init(width, output, true, rng)));
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_width(&self) -> Option<usize> {
        self.layers.first().map(Layer::in_width)
    }

    pub fn output_width(&self) -> Option<usize> {
        self.layers.last().map(Layer::out_width)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Copy of the layers in `range` as a standalone stack.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.layers.len() {
            return Err(Error::InvalidSplit(format!(
                "range {range:?} outside a {}-layer stack",
                self.layers.len()
            )));
        }
        Ok(Self {
            layers: self.layers[range].to_vec(),
        })
    }

    pub fn concat(parts: &[&LayerStack]) -> Result<Self> {
        Self::new(parts.iter().flat_map(|p| p.layers.iter().cloned()).collect())
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(Layer::params).copied().collect()
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut it = values.iter();
        for p in self.layers.iter_mut().flat_map(Layer::params_mut) {
            *p = *it.next().expect("length checked");
        }
        Ok(())
    }

    /// SHA-256 over the bit patterns of every parameter, in layer order.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for layer in &self.layers {
            h.update((layer.in_width() as u64).to_le_bytes());
            h.update((layer.out_width() as u64).to_le_bytes());
            for p in layer.params() {
                h.update(p.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn forward(&self, input: &Tensor2D) -> Result<(Tensor2D, Tape)> {
        self.forward_range(input, 0, self.layers.len())
    }

    /// Runs layers `[from, to)`. An empty range returns the input unchanged.
    pub fn forward_range(
        &self,
        input: &Tensor2D,
        from: usize,
        to: usize,
    ) -> Result<(Tensor2D, Tape)> {
        if from > to || to > self.layers.len() {
            return Err(Error::Shape(format!(
                "range {from}..{to} outside a {}-layer stack",
                self.layers.len()
            )));
        }
        if from < to && input.cols() != self.layers[from].in_width() {
            return Err(Error::Shape(format!(
                "input width {} but layer {from} expects {}",
                input.cols(),
                self.layers[from].in_width()
            )));
        }
        let mut inputs = Vec::with_capacity(to - from);
        let mut x = input.clone();
        for (offset, layer) in self.layers[from..to].iter().enumerate() {
            let y = match layer {
                Layer::Dense(d) => d.forward(&x),
                Layer::Relu { .. } => {
                    let mut y = x.clone();
                    for v in y.data_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    y
                }
            };
            y.ensure_finite(&format!("forward of layer {}", from + offset))?;
            inputs.push(x);
            x = y;
        }
        Ok((x, Tape { from, to, inputs }))
    }

    pub fn backward(&self, tape: &Tape, upstream: &Tensor2D) -> Result<(StackGrads, Tensor2D)> {
        self.backward_range(tape, upstream, tape.from, tape.to)
    }

    /// Backpropagates `upstream` (gradient w.r.t. the output of layer `to - 1`)
    /// through `[from, to)`, returning parameter gradients and the gradient
    /// w.r.t. the range input.
    pub fn backward_range(
        &self,
        tape: &Tape,
        upstream: &Tensor2D,
        from: usize,
        to: usize,
    ) -> Result<(StackGrads, Tensor2D)> {
        if tape.from != from || tape.to != to || to > self.layers.len() {
            return Err(Error::TapeMismatch(format!(
                "tape covers {}..{}, backward requested {from}..{to}",
                tape.from, tape.to
            )));
        }
        if let Some(last) = to.checked_sub(1).filter(|&l| l >= from) {
            let expected = self.layers[last].out_width();
            let rows = tape.inputs[0].rows();
            if upstream.cols() != expected || upstream.rows() != rows {
                return Err(Error::Shape(format!(
                    "upstream gradient {}x{} for output {rows}x{expected}",
                    upstream.rows(),
                    upstream.cols()
                )));
            }
        }
        let mut grads: Vec<Option<DenseGrad>> = vec![None; to - from];
        let mut g = upstream.clone();
        for idx in (from..to).rev() {
            let x = &tape.inputs[idx - from];
            if x.cols() != self.layers[idx].in_width() {
                return Err(Error::TapeMismatch(format!(
                    "cached input of layer {idx} has width {}",
                    x.cols()
                )));
            }
            g = match &self.layers[idx] {
                Layer::Dense(d) => {
                    let (pg, gx) = d.backward(x, &g);
                    grads[idx - from] = Some(pg);
                    gx
                }
                Layer::Relu { .. } => {
                    for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
                        if *xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    g
                }
            };
            g.ensure_finite(&format!("backward of layer {idx}"))?;
        }
        Ok((
            StackGrads {
                from,
                layers: grads,
            },
            g,
        ))
    }

    /// Forward over the whole stack without keeping a tape.
    pub fn predict(&self, input: &Tensor2D) -> Result<Tensor2D> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Dense(d) => d.forward(&x),
                Layer::Relu { .. } => {
                    for v in x.data_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    x
                }
            };
        }
        x.ensure_finite("prediction")?;
        Ok(x)
    }
}
