//! Reverse-mode differentiation for small multilayer perceptrons.
//!
//! The network code is written once, generic over [`Scalar`]. Plain `f64`
//! gives losses and gradients; [`Dual`] parameters seeded with a tangent `v`
//! give exact Hessian-vector products (Pearlmutter's forward-over-reverse
//! trick) without ever forming the Hessian.

mod scalar;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use scalar::{Dual, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => {
                if z.re() > 0.0 {
                    z
                } else {
                    T::constant(0.0)
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Activation::Tanh => T::constant(1.0) - a * a,
            Activation::Relu => T::constant(if z.re() > 0.0 { 1.0 } else { 0.0 }),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::arg(format!("unknown activation `{other}`"))),
        }
    }
}

/// Architecture of a fully connected classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

/// Shape of one dense layer: `out × in` weights (row-major) followed by `out` biases.
#[derive(Debug, Clone, Copy)]
struct DenseShape {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl DenseShape {
    fn len(&self) -> usize {
        self.fan_out * (self.fan_in + 1)
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.fan_out * self.fan_in
    }
}

impl ModelSpec {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        num_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = ModelSpec {
            input_dim,
            hidden_widths,
            num_classes,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::arg("input_dim must be positive"));
        }
        if self.hidden_widths.is_empty() {
            return Err(Error::arg("at least one hidden layer is required"));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::arg("hidden widths must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::arg("num_classes must be at least 2"));
        }
        Ok(())
    }

    fn shapes(&self) -> Vec<DenseShape> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_widths);
        dims.push(self.num_classes);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let s = DenseShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset += s.len();
                s
            })
            .collect()
    }

    /// Named segmentation of the flat parameter vector, input side first.
    pub fn layout(&self) -> Vec<LayerSlot> {
        let shapes = self.shapes();
        let last = shapes.len() - 1;
        shapes
            .iter()
            .enumerate()
            .map(|(i, s)| LayerSlot {
                name: if i == last {
                    "output".to_string()
                } else {
                    format!("hidden_{i}")
                },
                offset: s.offset,
                len: s.len(),
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.shapes().iter().map(DenseShape::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl LayerSlot {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Flat parameter vector plus its named-layer segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayerSlot>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<LayerSlot>) -> Result<Self> {
        let mut expected = 0;
        for (i, slot) in layout.iter().enumerate() {
            if slot.offset != expected {
                return Err(Error::shape(format!(
                    "layer `{}` starts at {} but previous layers end at {expected}",
                    slot.name, slot.offset
                )));
            }
            if layout[..i].iter().any(|s| s.name == slot.name) {
                return Err(Error::shape(format!(
                    "duplicate layer name `{}`",
                    slot.name
                )));
            }
            expected += slot.len;
        }
        if expected != values.len() {
            return Err(Error::shape(format!(
                "layout covers {expected} values but vector has {}",
                values.len()
            )));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[LayerSlot] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values, self.layout.clone())
    }

    fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        if self.layout != spec.layout() {
            return Err(Error::shape(
                "parameter layout does not match the model spec".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSelector {
    First,
    Last,
    All,
}

impl fmt::Display for MaskSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskSelector::First => "first",
            MaskSelector::Last => "last",
            MaskSelector::All => "all",
        })
    }
}

impl FromStr for MaskSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(MaskSelector::First),
            "last" => Ok(MaskSelector::Last),
            "all" => Ok(MaskSelector::All),
            other => Err(Error::arg(format!("unknown layer mask `{other}`"))),
        }
    }
}

/// A selector resolved against a concrete layout.
///
/// `first` is the first hidden layer (weights and bias), `last` is the output
/// layer, `all` is every layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMask {
    selector: MaskSelector,
    layers: Vec<String>,
    ranges: Vec<Range<usize>>,
    full_len: usize,
}

impl LayerMask {
    pub fn resolve(selector: MaskSelector, layout: &[LayerSlot]) -> Result<Self> {
        if layout.is_empty() {
            return Err(Error::arg("cannot resolve a mask against an empty layout"));
        }
        let chosen: Vec<&LayerSlot> = match selector {
            MaskSelector::First => vec![&layout[0]],
            MaskSelector::Last => vec![&layout[layout.len() - 1]],
            MaskSelector::All => layout.iter().collect(),
        };
        let full_len = layout.iter().map(|s| s.len).sum();
        Ok(LayerMask {
            selector,
            layers: chosen.iter().map(|s| s.name.clone()).collect(),
            ranges: chosen.iter().map(|s| s.range()).collect(),
            full_len,
        })
    }

    pub fn for_spec(selector: MaskSelector, spec: &ModelSpec) -> Result<Self> {
        Self::resolve(selector, &spec.layout())
    }

    pub fn selector(&self) -> MaskSelector {
        self.selector
    }

    pub fn layers(&self) -> &[String] {
        &self.layers
    }

    pub fn full_len(&self) -> usize {
        self.full_len
    }

    pub fn masked_dim(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).sum()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.ranges.iter().any(|r| r.contains(&index))
    }

    /// Zero every coordinate outside the mask.
    pub fn apply(&self, v: &mut [f64]) {
        let mut start = 0;
        for r in &self.ranges {
            v[start..r.start].fill(0.0);
            start = r.end;
        }
        v[start..].fill(0.0);
    }

    /// Masked coordinates of a full-length vector, in layout order.
    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.ranges
            .iter()
            .flat_map(|r| full[r.clone()].iter().copied())
            .collect()
    }

    /// Inverse of [`gather`](Self::gather): embeds into a zero full-length vector.
    pub fn scatter(&self, masked: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.full_len];
        let mut pos = 0;
        for r in &self.ranges {
            full[r.clone()].copy_from_slice(&masked[pos..pos + r.len()]);
            pos += r.len();
        }
        full
    }
}

/// Row-major feature matrix with ids and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    ids: Vec<u64>,
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(ids: Vec<u64>, features: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::arg("batch must contain at least one example"));
        }
        if ids.len() != n || features.len() != n * dim {
            return Err(Error::shape(format!(
                "batch of {n} labels has {} ids and {} feature values (dim {dim})",
                ids.len(),
                features.len()
            )));
        }
        Ok(Batch {
            ids,
            features,
            dim,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn single(&self, i: usize) -> Batch {
        Batch {
            ids: vec![self.ids[i]],
            features: self.row(i).to_vec(),
            dim: self.dim,
            labels: vec![self.labels[i]],
        }
    }

    fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        if self.dim != spec.input_dim {
            return Err(Error::shape(format!(
                "batch features have dim {} but model expects {}",
                self.dim, spec.input_dim
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= spec.num_classes) {
            return Err(Error::shape(format!(
                "label {bad} out of range for {} classes",
                spec.num_classes
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases; a pure function of `(spec, seed)`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; spec.num_params()];
    for s in spec.shapes() {
        let bound = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
        for w in &mut values[s.offset..s.bias_offset()] {
            *w = rng.random_range(-bound..bound);
        }
    }
    ParamVector::new(values, spec.layout())
}

/// Mean softmax cross-entropy and the logits of every example.
pub fn forward_loss(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, Vec<Vec<f64>>)> {
    params.check_spec(spec)?;
    batch.check_spec(spec)?;
    let shapes = spec.shapes();
    let mut total = 0.0;
    let mut all_logits = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let trace = forward_one(spec, &shapes, params.values(), batch.row(i));
        let logits = trace.logits();
        total += cross_entropy(logits, batch.labels[i]).0;
        all_logits.push(logits.to_vec());
    }
    Ok((total / batch.len() as f64, all_logits))
}

/// Per-example losses, in batch order.
pub fn example_losses(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<Vec<f64>> {
    params.check_spec(spec)?;
    batch.check_spec(spec)?;
    let shapes = spec.shapes();
    Ok((0..batch.len())
        .map(|i| {
            let trace = forward_one(spec, &shapes, params.values(), batch.row(i));
            cross_entropy(trace.logits(), batch.labels[i]).0
        })
        .collect())
}

/// Gradient of the mean loss; coordinates outside `mask` are exactly zero.
pub fn grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
    mask: &LayerMask,
) -> Result<Vec<f64>> {
    params.check_spec(spec)?;
    batch.check_spec(spec)?;
    check_mask(params, mask)?;
    let mut g = vec![0.0; params.len()];
    accumulate_batch(spec, params.values(), batch, &mut g);
    mask.apply(&mut g);
    Ok(g)
}

/// Mean loss and its full (unmasked) gradient from a single pass.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, Vec<f64>)> {
    params.check_spec(spec)?;
    batch.check_spec(spec)?;
    let mut g = vec![0.0; params.len()];
    let loss = accumulate_batch(spec, params.values(), batch, &mut g);
    Ok((loss, g))
}

/// Hessian of the mean loss restricted to `mask`, applied to `v`.
///
/// Components of `v` outside the mask are ignored, and the result is zero
/// outside the mask, so this is `P H P v` for the coordinate projector `P`.
pub fn hvp(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
    v: &[f64],
    mask: &LayerMask,
) -> Result<Vec<f64>> {
    params.check_spec(spec)?;
    batch.check_spec(spec)?;
    check_mask(params, mask)?;
    if v.len() != params.len() {
        return Err(Error::shape(format!(
            "direction has length {} but model has {} parameters",
            v.len(),
            params.len()
        )));
    }
    let mut direction = v.to_vec();
    mask.apply(&mut direction);
    let lifted: Vec<Dual> = params
        .values()
        .iter()
        .zip(&direction)
        .map(|(&p, &t)| Dual::new(p, t))
        .collect();
    let mut g = vec![Dual::default(); params.len()];
    accumulate_batch(spec, &lifted, batch, &mut g);
    let mut out: Vec<f64> = g.iter().map(|d| d.eps).collect();
    mask.apply(&mut out);
    Ok(out)
}

/// Gradient of each example's own loss, each masked.
pub fn per_example_grads(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
    mask: &LayerMask,
) -> Result<Vec<Vec<f64>>> {
    params.check_spec(spec)?;
    batch.check_spec(spec)?;
    check_mask(params, mask)?;
    let shapes = spec.shapes();
    Ok((0..batch.len())
        .map(|i| {
            let mut g = vec![0.0; params.len()];
            backprop_one(
                spec,
                &shapes,
                params.values(),
                batch.row(i),
                batch.labels[i],
                1.0,
                &mut g,
            );
            mask.apply(&mut g);
            g
        })
        .collect())
}

/// Argmax class of every row.
pub fn predict(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<Vec<usize>> {
    let (_, logits) = forward_loss(spec, params, batch)?;
    Ok(logits.iter().map(|l| argmax(l)).collect())
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn check_mask(params: &ParamVector, mask: &LayerMask) -> Result<()> {
    if mask.full_len() != params.len() {
        return Err(Error::shape(format!(
            "mask spans {} parameters but model has {}",
            mask.full_len(),
            params.len()
        )));
    }
    Ok(())
}

struct Trace<T> {
    /// `pre[l]` is the pre-activation of layer `l`; the last entry is the logits.
    pre: Vec<Vec<T>>,
    /// `post[0]` is the input, `post[l + 1]` the activation of hidden layer `l`.
    post: Vec<Vec<T>>,
}

impl<T> Trace<T> {
    fn logits(&self) -> &[T] {
        self.pre.last().expect("at least one layer")
    }
}

fn forward_one<T: Scalar>(
    spec: &ModelSpec,
    shapes: &[DenseShape],
    params: &[T],
    x: &[f64],
) -> Trace<T> {
    let last = shapes.len() - 1;
    let mut pre = Vec::with_capacity(shapes.len());
    let mut post = Vec::with_capacity(shapes.len());
    post.push(x.iter().map(|&v| T::constant(v)).collect::<Vec<T>>());
    for (l, s) in shapes.iter().enumerate() {
        let input = &post[l];
        let w = &params[s.offset..s.bias_offset()];
        let b = &params[s.bias_offset()..s.offset + s.len()];
        let z: Vec<T> = (0..s.fan_out)
            .map(|j| {
                let row = &w[j * s.fan_in..(j + 1) * s.fan_in];
                let mut acc = b[j];
                for (&wji, &ai) in row.iter().zip(input) {
                    acc += wji * ai;
                }
                acc
            })
            .collect();
        if l < last {
            post.push(z.iter().map(|&zj| spec.activation.apply(zj)).collect());
        }
        pre.push(z);
    }
    Trace { pre, post }
}

/// Log-sum-exp stabilised cross-entropy; also returns softmax probabilities.
fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let m = logits
        .iter()
        .map(|z| z.re())
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<T> = logits.iter().map(|&z| (z - T::constant(m)).exp()).collect();
    let mut sum = T::constant(0.0);
    for &e in &shifted {
        sum += e;
    }
    let lse = sum.ln() + T::constant(m);
    let probs = shifted.into_iter().map(|e| e / sum).collect();
    (lse - logits[label], probs)
}

/// Adds `weight · ∇ loss(x, label)` into `grad`; returns the unweighted loss.
fn backprop_one<T: Scalar>(
    spec: &ModelSpec,
    shapes: &[DenseShape],
    params: &[T],
    x: &[f64],
    label: usize,
    weight: f64,
    grad: &mut [T],
) -> T {
    let trace = forward_one(spec, shapes, params, x);
    let (loss, probs) = cross_entropy(trace.logits(), label);
    let mut delta: Vec<T> = probs
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            let d = if k == label { p - T::constant(1.0) } else { p };
            d.scale(weight)
        })
        .collect();

    for (l, s) in shapes.iter().enumerate().rev() {
        let input = &trace.post[l];
        for j in 0..s.fan_out {
            let row = s.offset + j * s.fan_in;
            for i in 0..s.fan_in {
                grad[row + i] += delta[j] * input[i];
            }
            grad[s.bias_offset() + j] += delta[j];
        }
        if l == 0 {
            break;
        }
        let w = &params[s.offset..s.bias_offset()];
        let z_prev = &trace.pre[l - 1];
        delta = (0..s.fan_in)
            .map(|i| {
                let mut acc = T::constant(0.0);
                for j in 0..s.fan_out {
                    acc += w[j * s.fan_in + i] * delta[j];
                }
                acc * spec.activation.derivative(z_prev[i], input[i])
            })
            .collect();
    }
    loss
}

/// Accumulates the mean-loss gradient into `grad` and returns the mean loss.
fn accumulate_batch<T: Scalar>(spec: &ModelSpec, params: &[T], batch: &Batch, grad: &mut [T]) -> T {
    let shapes = spec.shapes();
    let weight = 1.0 / batch.len() as f64;
    let mut total = T::constant(0.0);
    for i in 0..batch.len() {
        total += backprop_one(
            spec,
            &shapes,
            params,
            batch.row(i),
            batch.labels[i],
            weight,
            grad,
        );
    }
    total.scale(weight)
}
