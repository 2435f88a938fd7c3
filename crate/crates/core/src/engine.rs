//! Dense forward/backward engine for ReLU multilayer perceptrons with a
//! (possibly masked) softmax cross-entropy loss.
//!
//! Weights of the whole network live in one flat `f64` vector. For each layer
//! the weight matrix comes first, stored row-major as `[fan_in × fan_out]`,
//! followed by the bias vector of length `fan_out`. [`Layout`] maps flat
//! indices to `(layer, row, col)` slots and back.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub num_heads: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, num_heads: usize) -> Result<Self> {
        let spec = NetworkSpec {
            input_dim,
            hidden_widths,
            num_heads,
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_heads == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Config(format!(
                "network dimensions must be positive: input {}, hidden {:?}, heads {}",
                self.input_dim, self.hidden_widths, self.num_heads
            )));
        }
        Ok(())
    }

    /// Widths of every layer boundary, input first and heads last.
    pub fn widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.hidden_widths.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_widths);
        widths.push(self.num_heads);
        widths
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.widths())
    }

    pub fn num_params(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Flat index of the first weight of this layer.
    pub offset: usize,
}

impl LayerShape {
    pub fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    fn len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Weight {
        layer: usize,
        row: usize,
        col: usize,
    },
    Bias {
        layer: usize,
        index: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    layers: Vec<LayerShape>,
    len: usize,
}

impl Layout {
    fn new(widths: &[usize]) -> Self {
        let mut offset = 0;
        let layers = widths
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset += shape.len();
                shape
            })
            .collect();
        Layout {
            layers,
            len: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn locate(&self, index: usize) -> Option<Slot> {
        let layer = self
            .layers
            .iter()
            .position(|l| index >= l.offset && index < l.offset + l.len())?;
        let shape = &self.layers[layer];
        let local = index - shape.offset;
        let n_weights = shape.fan_in * shape.fan_out;
        Some(if local < n_weights {
            Slot::Weight {
                layer,
                row: local / shape.fan_out,
                col: local % shape.fan_out,
            }
        } else {
            Slot::Bias {
                layer,
                index: local - n_weights,
            }
        })
    }

    pub fn index_of(&self, slot: Slot) -> Option<usize> {
        match slot {
            Slot::Weight { layer, row, col } => {
                let shape = self.layers.get(layer)?;
                (row < shape.fan_in && col < shape.fan_out)
                    .then(|| shape.offset + row * shape.fan_out + col)
            }
            Slot::Bias { layer, index } => {
                let shape = self.layers.get(layer)?;
                (index < shape.fan_out).then(|| shape.biases().start + index)
            }
        }
    }
}

/// A flat parameter (or gradient) vector laid out per [`Layout`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlatWeights(pub Vec<f64>);

impl FlatWeights {
    pub fn zeros(len: usize) -> Self {
        FlatWeights(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FlatWeights {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for FlatWeights {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for FlatWeights {
    fn from(values: Vec<f64>) -> Self {
        FlatWeights(values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Row-major `[len × input_dim]`.
    pub inputs: Vec<f64>,
    pub input_dim: usize,
    pub labels: Vec<usize>,
    pub task_tags: Option<Vec<usize>>,
}

impl Batch {
    pub fn new(
        inputs: Vec<f64>,
        input_dim: usize,
        labels: Vec<usize>,
        task_tags: Option<Vec<usize>>,
    ) -> Result<Self> {
        if input_dim == 0 || inputs.len() != labels.len() * input_dim {
            return Err(Error::Shape(format!(
                "{} input values for {} labels of dimension {}",
                inputs.len(),
                labels.len(),
                input_dim
            )));
        }
        if let Some(tags) = &task_tags {
            if tags.len() != labels.len() {
                return Err(Error::Shape(format!(
                    "{} task tags for {} labels",
                    tags.len(),
                    labels.len()
                )));
            }
        }
        Ok(Batch {
            inputs,
            input_dim,
            labels,
            task_tags,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }
}

/// Output heads that take part in the softmax partition function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadMask {
    allowed: Vec<usize>,
}

impl HeadMask {
    pub fn new(allowed: impl IntoIterator<Item = usize>, num_heads: usize) -> Result<Self> {
        let mut allowed: Vec<usize> = allowed.into_iter().collect();
        allowed.sort_unstable();
        allowed.dedup();
        if allowed.is_empty() {
            return Err(Error::Config("head mask must not be empty".into()));
        }
        if let Some(&h) = allowed.iter().find(|&&h| h >= num_heads) {
            return Err(Error::Config(format!("head {h} outside [0, {num_heads})")));
        }
        Ok(HeadMask { allowed })
    }

    pub fn full(num_heads: usize) -> Self {
        HeadMask {
            allowed: (0..num_heads).collect(),
        }
    }

    /// Sorted ascending, no duplicates.
    pub fn allowed(&self) -> &[usize] {
        &self.allowed
    }

    pub fn contains(&self, head: usize) -> bool {
        self.allowed.binary_search(&head).is_ok()
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }
}

/// Everything `backward` needs from a `forward` call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    weights: FlatWeights,
    /// Post-activation outputs of each hidden layer, row-major `[batch × width]`.
    hidden: Vec<Vec<f64>>,
    /// Masked softmax probabilities, `[batch × mask.len()]`.
    probs: Vec<f64>,
    /// Position of each label inside the mask.
    label_slots: Vec<usize>,
    labels: Vec<usize>,
    mask: HeadMask,
}

fn check_shapes(spec: &NetworkSpec, w: &[f64], batch: &Batch, mask: &HeadMask) -> Result<()> {
    let expected = spec.num_params();
    if w.len() != expected {
        return Err(Error::Shape(format!(
            "{} weights for a network with {expected} parameters",
            w.len()
        )));
    }
    if batch.input_dim != spec.input_dim {
        return Err(Error::Shape(format!(
            "batch input dimension {} but network expects {}",
            batch.input_dim, spec.input_dim
        )));
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if mask.is_empty() {
        return Err(Error::Config("head mask must not be empty".into()));
    }
    if let Some(&h) = mask.allowed().last() {
        if h >= spec.num_heads {
            return Err(Error::Shape(format!(
                "mask head {h} but network has {} heads",
                spec.num_heads
            )));
        }
    }
    Ok(())
}

/// `out[b, j] = bias[j] + Σ_i input[b, i] · w[i, j]`
fn affine(input: &[f64], rows: usize, shape: &LayerShape, w: &[f64]) -> Vec<f64> {
    let (fan_in, fan_out) = (shape.fan_in, shape.fan_out);
    let weights = &w[shape.weights()];
    let bias = &w[shape.biases()];
    let mut out = Vec::with_capacity(rows * fan_out);
    for b in 0..rows {
        out.extend_from_slice(bias);
        let out_row = &mut out[b * fan_out..(b + 1) * fan_out];
        for (i, &x) in input[b * fan_in..(b + 1) * fan_in].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let w_row = &weights[i * fan_out..(i + 1) * fan_out];
            for (o, &wij) in out_row.iter_mut().zip(w_row) {
                *o += x * wij;
            }
        }
    }
    out
}

fn relu_in_place(values: &mut [f64]) {
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Raw output-layer logits `[rows × num_heads]`, without any loss.
pub fn logits(spec: &NetworkSpec, w: &[f64], inputs: &[f64], rows: usize) -> Result<Vec<f64>> {
    if w.len() != spec.num_params() || inputs.len() != rows * spec.input_dim {
        return Err(Error::Shape(format!(
            "{} weights / {} inputs for {rows} rows of network {:?}",
            w.len(),
            inputs.len(),
            spec.widths()
        )));
    }
    let layout = spec.layout();
    let layers = layout.layers();
    let mut h = affine(inputs, rows, &layers[0], w);
    for shape in &layers[1..] {
        relu_in_place(&mut h);
        h = affine(&h, rows, shape, w);
    }
    Ok(h)
}

/// Row-wise softmax over all heads.
pub fn softmax_rows(logits: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut sum = 0.0;
        for &z in row {
            let e = (z - max).exp();
            sum += e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p /= sum;
        }
    }
    out
}

/// Mean masked softmax cross-entropy over the batch.
///
/// Heads outside `mask` are excluded from the partition function entirely;
/// every label must lie inside the mask.
pub fn forward(
    spec: &NetworkSpec,
    w: &[f64],
    batch: &Batch,
    mask: &HeadMask,
) -> Result<(f64, ForwardCache)> {
    check_shapes(spec, w, batch, mask)?;
    let label_slots = batch
        .labels
        .iter()
        .enumerate()
        .map(|(example, &label)| {
            mask.allowed()
                .binary_search(&label)
                .map_err(|_| Error::MaskedLabel { example, label })
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = batch.len();
    let layout = spec.layout();
    let layers = layout.layers();
    let mut hidden = Vec::with_capacity(layers.len() - 1);
    let mut h = affine(&batch.inputs, rows, &layers[0], w);
    for shape in &layers[1..] {
        relu_in_place(&mut h);
        let next = affine(&h, rows, shape, w);
        hidden.push(h);
        h = next;
    }
    let logits = h;

    let heads = spec.num_heads;
    let m = mask.len();
    let mut probs = Vec::with_capacity(rows * m);
    let mut total = 0.0;
    for (b, &slot) in label_slots.iter().enumerate() {
        let row = &logits[b * heads..(b + 1) * heads];
        let max = mask
            .allowed()
            .iter()
            .map(|&j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let start = probs.len();
        let mut sum = 0.0;
        for &j in mask.allowed() {
            let e = (row[j] - max).exp();
            sum += e;
            probs.push(e);
        }
        for p in &mut probs[start..] {
            *p /= sum;
        }
        let log_partition = max + sum.ln();
        total += log_partition - row[mask.allowed()[slot]];
    }
    let loss = total / rows as f64;

    Ok((
        loss,
        ForwardCache {
            weights: FlatWeights(w.to_vec()),
            hidden,
            probs,
            label_slots,
            labels: batch.labels.clone(),
            mask: mask.clone(),
        },
    ))
}

/// Exact gradient of the loss computed by the `forward` call that produced `cache`.
pub fn backward(
    spec: &NetworkSpec,
    cache: &ForwardCache,
    batch: &Batch,
    mask: &HeadMask,
) -> Result<FlatWeights> {
    let layout = spec.layout();
    if cache.weights.len() != layout.len() || cache.hidden.len() != layout.layers().len() - 1 {
        return Err(Error::StaleCache(format!(
            "cache built for {} parameters, network has {}",
            cache.weights.len(),
            layout.len()
        )));
    }
    if cache.labels != batch.labels || batch.input_dim != spec.input_dim {
        return Err(Error::StaleCache(
            "batch differs from the forward pass".into(),
        ));
    }
    if &cache.mask != mask {
        return Err(Error::StaleCache(
            "head mask differs from the forward pass".into(),
        ));
    }

    let rows = batch.len();
    let w = &cache.weights;
    let heads = spec.num_heads;
    let m = mask.len();
    let scale = 1.0 / rows as f64;

    // d loss / d logits
    let mut delta = vec![0.0; rows * heads];
    for b in 0..rows {
        let probs = &cache.probs[b * m..(b + 1) * m];
        let row = &mut delta[b * heads..(b + 1) * heads];
        for (slot, (&j, &p)) in mask.allowed().iter().zip(probs).enumerate() {
            let target = if slot == cache.label_slots[b] {
                1.0
            } else {
                0.0
            };
            row[j] = (p - target) * scale;
        }
    }

    let mut grad = FlatWeights::zeros(layout.len());
    for (l, shape) in layout.layers().iter().enumerate().rev() {
        let input: &[f64] = if l == 0 {
            &batch.inputs
        } else {
            &cache.hidden[l - 1]
        };
        let (fan_in, fan_out) = (shape.fan_in, shape.fan_out);

        let bias_range = shape.biases();
        for b in 0..rows {
            let d = &delta[b * fan_out..(b + 1) * fan_out];
            for (g, &dj) in grad[bias_range.clone()].iter_mut().zip(d) {
                *g += dj;
            }
        }
        let weight_range = shape.weights();
        {
            let gw = &mut grad[weight_range.clone()];
            for b in 0..rows {
                let d = &delta[b * fan_out..(b + 1) * fan_out];
                for (i, &x) in input[b * fan_in..(b + 1) * fan_in].iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    for (g, &dj) in gw[i * fan_out..(i + 1) * fan_out].iter_mut().zip(d) {
                        *g += x * dj;
                    }
                }
            }
        }

        if l == 0 {
            break;
        }
        let weights = &w[weight_range];
        let mut prev = vec![0.0; rows * fan_in];
        for b in 0..rows {
            let d = &delta[b * fan_out..(b + 1) * fan_out];
            let a = &input[b * fan_in..(b + 1) * fan_in];
            let out = &mut prev[b * fan_in..(b + 1) * fan_in];
            for i in 0..fan_in {
                // ReLU derivative: post-activation > 0 iff pre-activation > 0
                if a[i] <= 0.0 {
                    continue;
                }
                let w_row = &weights[i * fan_out..(i + 1) * fan_out];
                out[i] = w_row.iter().zip(d).map(|(wij, dj)| wij * dj).sum();
            }
        }
        delta = prev;
    }
    Ok(grad)
}

pub fn loss(spec: &NetworkSpec, w: &[f64], batch: &Batch, mask: &HeadMask) -> Result<f64> {
    forward(spec, w, batch, mask).map(|(loss, _)| loss)
}

pub fn loss_and_gradient(
    spec: &NetworkSpec,
    w: &[f64],
    batch: &Batch,
    mask: &HeadMask,
) -> Result<(f64, FlatWeights)> {
    let (loss, cache) = forward(spec, w, batch, mask)?;
    let grad = backward(spec, &cache, batch, mask)?;
    Ok((loss, grad))
}

/// Central-difference gradient, one coordinate at a time.
pub fn finite_diff_gradient(
    spec: &NetworkSpec,
    w: &[f64],
    batch: &Batch,
    mask: &HeadMask,
    h: f64,
) -> Result<FlatWeights> {
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    check_shapes(spec, w, batch, mask)?;
    let mut probe = w.to_vec();
    let mut grad = FlatWeights::zeros(w.len());
    for i in 0..w.len() {
        probe[i] = w[i] + h;
        let up = loss(spec, &probe, batch, mask)?;
        probe[i] = w[i] - h;
        let down = loss(spec, &probe, batch, mask)?;
        probe[i] = w[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}
