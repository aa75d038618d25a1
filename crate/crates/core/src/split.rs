//! Cutting a layer stack into client/server parts, the packets exchanged
//! across the cut, and weighted averaging of part replicas.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, LayerStack, Tensor2D};

/// Cut positions. `cut1` is the number of layers in part-1; when present,
/// `cut2` is the index where part-2b (the replicated head) starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub cut1: usize,
    #[serde(default)]
    pub cut2: Option<usize>,
}

impl SplitSpec {
    pub fn new(cut1: usize, cut2: Option<usize>) -> Self {
        Self { cut1, cut2 }
    }

    /// Shallow cut scaled from 4 of 26 layers.
    pub fn shallow(layer_count: usize) -> Self {
        Self::new((layer_count * 4).div_ceil(26), None)
    }

    pub fn validate(&self, layer_count: usize) -> Result<()> {
        if self.cut1 == 0 || self.cut1 >= layer_count {
            return Err(Error::InvalidSplit(format!(
                "cut1={} must lie in 1..{layer_count}",
                self.cut1
            )));
        }
        if let Some(cut2) = self.cut2 {
            if cut2 <= self.cut1 || cut2 >= layer_count {
                return Err(Error::InvalidSplit(format!(
                    "cut2={cut2} must lie in {}..{layer_count}",
                    self.cut1 + 1
                )));
            }
        }
        Ok(())
    }

    /// `(part1, part2a, part2b)` as layer ranges; part-2b is empty without `cut2`.
    pub fn ranges(&self, layer_count: usize) -> Result<[Range<usize>; 3]> {
        self.validate(layer_count)?;
        let cut2 = self.cut2.unwrap_or(layer_count);
        Ok([0..self.cut1, self.cut1..cut2, cut2..layer_count])
    }
}

/// The three consecutive parts of a split stack.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitParts {
    pub part1: LayerStack,
    pub part2a: LayerStack,
    pub part2b: LayerStack,
}

impl SplitParts {
    /// Server-side part-2 (`part2a` followed by `part2b`).
    pub fn part2(&self) -> Result<LayerStack> {
        LayerStack::concat(&[&self.part2a, &self.part2b])
    }

    pub fn join(&self) -> Result<LayerStack> {
        LayerStack::concat(&[&self.part1, &self.part2a, &self.part2b])
    }
}

pub fn split(stack: &LayerStack, spec: SplitSpec) -> Result<SplitParts> {
    let [p1, p2a, p2b] = spec.ranges(stack.len())?;
    Ok(SplitParts {
        part1: stack.slice(p1)?,
        part2a: stack.slice(p2a)?,
        part2b: stack.slice(p2b)?,
    })
}

/// Client → server: cut-layer activations with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPacket {
    pub client_id: usize,
    pub batch_index: usize,
    pub activations: Tensor2D,
    pub labels: Vec<usize>,
}

impl ActivationPacket {
    pub fn new(
        client_id: usize,
        batch_index: usize,
        activations: Tensor2D,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if labels.len() != activations.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} activation rows",
                labels.len(),
                activations.rows()
            )));
        }
        Ok(Self {
            client_id,
            batch_index,
            activations,
            labels,
        })
    }
}

/// Server → client: gradient of the loss w.r.t. the cut-layer activations.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPacket {
    pub client_id: usize,
    pub batch_index: usize,
    pub gradients: Tensor2D,
}

impl GradientPacket {
    /// Builds the reply for `request`, checking that shapes line up.
    pub fn reply_to(request: &ActivationPacket, gradients: Tensor2D) -> Result<Self> {
        if gradients.rows() != request.activations.rows()
            || gradients.cols() != request.activations.cols()
        {
            return Err(Error::Shape(format!(
                "gradient {}x{} for activations {}x{}",
                gradients.rows(),
                gradients.cols(),
                request.activations.rows(),
                request.activations.cols()
            )));
        }
        Ok(Self {
            client_id: request.client_id,
            batch_index: request.batch_index,
            gradients,
        })
    }
}

/// One replica taking part in an average.
#[derive(Debug, Clone, Copy)]
pub struct Replica<'a> {
    pub id: usize,
    pub stack: &'a LayerStack,
    pub weight: f64,
}

impl<'a> Replica<'a> {
    pub fn new(id: usize, stack: &'a LayerStack, weight: f64) -> Self {
        Self { id, stack, weight }
    }
}

/// Weighted elementwise mean of shape-identical stacks, weights normalised to
/// sum to one. Terms are summed in ascending `id` order; zero-weight replicas
/// are skipped entirely.
pub fn fedavg(replicas: &[Replica<'_>]) -> Result<LayerStack> {
    let first = replicas
        .first()
        .ok_or_else(|| Error::InvalidWeights("no replicas to average".into()))?;
    for r in replicas {
        if !(r.weight >= 0.0 && r.weight.is_finite()) {
            return Err(Error::InvalidWeights(format!(
                "replica {} has weight {}",
                r.id, r.weight
            )));
        }
        if !same_shape(first.stack, r.stack) {
            return Err(Error::Shape(format!(
                "replica {} differs in shape from replica {}",
                r.id, first.id
            )));
        }
    }
    let mut ordered: Vec<&Replica<'_>> = replicas.iter().collect();
    ordered.sort_by_key(|r| r.id);
    if ordered.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::InvalidWeights("duplicate replica ids".into()));
    }
    let total: f64 = ordered.iter().map(|r| r.weight).sum();
    if total <= 0.0 {
        return Err(Error::InvalidWeights("weights sum to zero".into()));
    }
    let active: Vec<&Replica<'_>> = ordered.into_iter().filter(|r| r.weight > 0.0).collect();
    let columns: Vec<Vec<f64>> = active.iter().map(|r| r.stack.params_flat()).collect();
    let weights: Vec<f64> = active.iter().map(|r| r.weight / total).collect();
    // Entries on which every replica agrees bit-for-bit are copied through, so
    // averaging equal values is exact and the result does not depend on how
    // the model is cut into parts.
    let averaged: Vec<f64> = (0..columns[0].len())
        .map(|k| {
            let v0 = columns[0][k];
            if columns[1..].iter().all(|c| c[k].to_bits() == v0.to_bits()) {
                return v0;
            }
            let mut acc = weights[0] * v0;
            for (c, w) in columns[1..].iter().zip(&weights[1..]) {
                acc += w * c[k];
            }
            acc
        })
        .collect();
    let mut out = first.stack.clone();
    out.set_params_flat(&averaged)?;
    Ok(out)
}

fn same_shape(a: &LayerStack, b: &LayerStack) -> bool {
    a.len() == b.len()
        && a.layers().iter().zip(b.layers()).all(|(x, y)| match (x, y) {
            (Layer::Dense(x), Layer::Dense(y)) => {
                x.in_width == y.in_width
                    && x.out_width == y.out_width
                    && x.bias.is_some() == y.bias.is_some()
            }
            (Layer::Relu { width: x }, Layer::Relu { width: y }) => x == y,
            _ => false,
        })
}
