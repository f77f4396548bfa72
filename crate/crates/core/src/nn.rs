//! Dense feed-forward classifier with exact backpropagation.
//!
//! Parameters live in one flat buffer, layer-major: for each layer the weight matrix
//! (row-major, `out x in`) followed by the bias vector. Gradients use the same layout, which
//! is also the on-disk checkpoint order.
//!
//! Hidden layers use ReLU followed by inverted dropout; the output layer is a softmax over
//! `K` classes and the training loss is softmax cross-entropy.

use crate::error::{invalid, Result};
use crate::rng::Rng;

/// Confidences are clamped to this floor before taking the logarithm.
pub const MIN_CONFIDENCE: f64 = 1e-300;

/// One labelled example. `id` is unique within the dataset it was created in.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub features: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(id: usize, features: Vec<f64>, label: usize) -> Self {
        Self {
            id,
            features,
            label,
        }
    }
}

/// A collection of samples sharing a dimensionality and a label space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize, dim: usize) -> Result<Self> {
        for s in &samples {
            if s.features.len() != dim {
                return invalid(format!(
                    "sample {} has {} features, expected {dim}",
                    s.id,
                    s.features.len()
                ));
            }
            if s.label >= num_classes {
                return invalid(format!(
                    "sample {} has label {} but there are only {num_classes} classes",
                    s.id, s.label
                ));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            dim,
        })
    }

    /// Builds a dataset from parallel feature rows and labels, numbering samples from 0.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if rows.len() != labels.len() {
            return invalid(format!("{} rows but {} labels", rows.len(), labels.len()));
        }
        let dim = rows.first().map_or(0, Vec::len);
        let samples = rows
            .into_iter()
            .zip(labels)
            .enumerate()
            .map(|(id, (features, label))| Sample::new(id, features, label))
            .collect();
        Self::new(samples, num_classes, dim)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// Number of samples carrying each label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Samples at the given positions, in the given order.
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        Dataset {
            samples: positions.iter().map(|&i| self.samples[i].clone()).collect(),
            num_classes: self.num_classes,
            dim: self.dim,
        }
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// Offsets of one layer's parameters inside the flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpan {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: usize,
    pub biases: usize,
    pub end: usize,
}

pub(crate) fn layer_spans(dims: &[usize]) -> Vec<LayerSpan> {
    let mut offset = 0;
    dims.windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = offset;
            let biases = weights + fan_in * fan_out;
            let end = biases + fan_out;
            offset = end;
            LayerSpan {
                fan_in,
                fan_out,
                weights,
                biases,
                end,
            }
        })
        .collect()
}

pub fn param_count(dims: &[usize]) -> usize {
    layer_spans(dims).last().map_or(0, |s| s.end)
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return invalid(format!("need at least input and output dims, got {dims:?}"));
    }
    if dims.contains(&0) {
        return invalid(format!("layer dims must be positive, got {dims:?}"));
    }
    Ok(())
}

/// Feed-forward classifier: `dims = (d, h1, ..., K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dims: Vec<usize>,
    params: Vec<f64>,
    dropout_rate: f64,
}

/// He-normal initialisation: weights `N(0, 2/fan_in)`, biases zero.
pub fn init_model(dims: &[usize], dropout_rate: f64, seed: u64) -> Result<MlpModel> {
    validate_dims(dims)?;
    let mut rng = Rng::stream(seed, crate::rng::streams::INIT);
    let mut params = vec![0.0; param_count(dims)];
    for span in layer_spans(dims) {
        let scale = (2.0 / span.fan_in as f64).sqrt();
        for w in &mut params[span.weights..span.biases] {
            *w = scale * rng.normal();
        }
    }
    MlpModel::from_params(dims.to_vec(), params, dropout_rate)
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace {
    /// Input to each layer (the sample itself, then each hidden activation).
    inputs: Vec<Vec<f64>>,
    /// d(activation)/d(pre-activation) per hidden unit: ReLU slope times dropout scale.
    gates: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl MlpModel {
    pub fn from_params(dims: Vec<usize>, params: Vec<f64>, dropout_rate: f64) -> Result<Self> {
        validate_dims(&dims)?;
        let expected = param_count(&dims);
        if params.len() != expected {
            return invalid(format!(
                "dims {dims:?} need {expected} parameters, got {}",
                params.len()
            ));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return invalid(format!(
                "dropout rate must be in [0, 1), got {dropout_rate}"
            ));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return invalid(format!("parameter {i} is not finite"));
        }
        Ok(Self {
            dims,
            params,
            dropout_rate,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().expect("validated dims")
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn spans(&self) -> Vec<LayerSpan> {
        layer_spans(&self.dims)
    }

    /// Weight matrix (row-major, `out x in`) and bias vector of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let s = self.spans()[l];
        (
            &self.params[s.weights..s.biases],
            &self.params[s.biases..s.end],
        )
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return invalid(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            ));
        }
        Ok(())
    }

    pub(crate) fn check_sample(&self, s: &Sample) -> Result<()> {
        self.check_input(&s.features)?;
        if s.label >= self.num_classes() {
            return invalid(format!(
                "label {} out of range for {} classes",
                s.label,
                self.num_classes()
            ));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64], mut dropout: Option<&mut Rng>) -> Trace {
        let spans = self.spans();
        let last = spans.len() - 1;
        let keep_scale = 1.0 / (1.0 - self.dropout_rate);
        let mut inputs = Vec::with_capacity(spans.len());
        let mut gates = Vec::with_capacity(last);
        let mut current = x.to_vec();
        for (l, span) in spans.iter().enumerate() {
            let w = &self.params[span.weights..span.biases];
            let b = &self.params[span.biases..span.end];
            let mut z: Vec<f64> = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * span.fan_in..(o + 1) * span.fan_in];
                *zo += row.iter().zip(&current).map(|(a, b)| a * b).sum::<f64>();
            }
            inputs.push(current);
            if l == last {
                return Trace {
                    inputs,
                    gates,
                    logits: z,
                };
            }
            let mut gate = vec![0.0; span.fan_out];
            for (g, zo) in gate.iter_mut().zip(z.iter_mut()) {
                let mut scale = 1.0;
                if self.dropout_rate > 0.0 {
                    if let Some(rng) = dropout.as_deref_mut() {
                        scale = if rng.uniform() < self.dropout_rate {
                            0.0
                        } else {
                            keep_scale
                        };
                    }
                }
                *g = if *zo > 0.0 { scale } else { 0.0 };
                *zo *= *g;
            }
            gates.push(gate);
            current = z;
        }
        unreachable!("validated models have an output layer")
    }

    /// Confidence vector for `x`. Passing an RNG selects training mode (dropout active).
    pub fn forward(&self, x: &[f64], dropout: Option<&mut Rng>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(softmax(&self.trace(x, dropout).logits))
    }

    /// Eval-mode confidence vector.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x, None)
    }

    /// Predicted class; ties go to the lowest index.
    pub fn predict_label(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict(x)?))
    }

    /// Eval-mode cross-entropy of one sample.
    pub fn loss(&self, sample: &Sample) -> Result<f64> {
        self.check_sample(sample)?;
        let logits = self.trace(&sample.features, None).logits;
        Ok(cross_entropy_from_logits(&logits, sample.label))
    }

    /// Accumulates `weight * grad(loss_i)` into `out` and returns the sample's loss.
    pub(crate) fn accumulate_gradient(
        &self,
        sample: &Sample,
        dropout: &mut Rng,
        weight: f64,
        out: &mut [f64],
    ) -> f64 {
        let trace = self.trace(&sample.features, Some(dropout));
        let loss = cross_entropy_from_logits(&trace.logits, sample.label);
        let mut delta = softmax(&trace.logits);
        delta[sample.label] -= 1.0;

        let spans = self.spans();
        for l in (0..spans.len()).rev() {
            let span = spans[l];
            let input = &trace.inputs[l];
            for (o, &d) in delta.iter().enumerate() {
                let wd = weight * d;
                out[span.biases + o] += wd;
                let row =
                    &mut out[span.weights + o * span.fan_in..span.weights + (o + 1) * span.fan_in];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g += wd * a;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[span.weights..span.biases];
            let gate = &trace.gates[l - 1];
            let mut prev = vec![0.0; span.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * span.fan_in..(o + 1) * span.fan_in];
                for (p, &wv) in prev.iter_mut().zip(row) {
                    *p += wv * d;
                }
            }
            for (p, &g) in prev.iter_mut().zip(gate) {
                *p *= g;
            }
            delta = prev;
        }
        loss
    }

    /// Gradient of one sample's loss. Dropout masks are drawn from `dropout` when the model
    /// has a non-zero dropout rate.
    pub fn sample_gradient(&self, sample: &Sample, dropout: &mut Rng) -> Result<Gradient> {
        self.check_sample(sample)?;
        let mut g = Gradient::zeros(&self.dims);
        self.accumulate_gradient(sample, dropout, 1.0, &mut g.values);
        Ok(g)
    }

    /// Mean gradient of the cross-entropy loss over `batch`.
    pub fn batch_gradient(&self, batch: &[Sample], dropout: &mut Rng) -> Result<Gradient> {
        if batch.is_empty() {
            return invalid("batch is empty");
        }
        for s in batch {
            self.check_sample(s)?;
        }
        let mut g = Gradient::zeros(&self.dims);
        for s in batch {
            self.accumulate_gradient(s, dropout, 1.0, &mut g.values);
        }
        g.scale(1.0 / batch.len() as f64);
        Ok(g)
    }

    /// One gradient per sample, in batch order; dropout masks are drawn in the same order
    /// as [`MlpModel::batch_gradient`].
    pub fn per_sample_gradients(
        &self,
        batch: &[Sample],
        dropout: &mut Rng,
    ) -> Result<Vec<Gradient>> {
        if batch.is_empty() {
            return invalid("batch is empty");
        }
        for s in batch {
            self.check_sample(s)?;
        }
        Ok(batch
            .iter()
            .map(|s| {
                let mut g = Gradient::zeros(&self.dims);
                self.accumulate_gradient(s, dropout, 1.0, &mut g.values);
                g
            })
            .collect())
    }

    /// `w <- w + factor * g`.
    pub fn add_scaled(&mut self, g: &Gradient, factor: f64) {
        debug_assert_eq!(g.values.len(), self.params.len());
        for (w, d) in self.params.iter_mut().zip(&g.values) {
            *w += factor * d;
        }
    }

    /// A copy of the model shifted by `g`.
    pub fn perturbed(&self, g: &Gradient) -> MlpModel {
        let mut m = self.clone();
        m.add_scaled(g, 1.0);
        m
    }
}

/// Fraction of samples whose predicted class equals their label.
pub fn test_accuracy(model: &MlpModel, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return invalid("cannot measure accuracy on an empty dataset");
    }
    let mut correct = 0usize;
    for s in dataset {
        model.check_sample(s)?;
        if model.predict_label(&s.features)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Per-parameter vector congruent with an [`MlpModel`]'s flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            values: vec![0.0; param_count(dims)],
        }
    }

    pub fn from_values(dims: &[usize], values: Vec<f64>) -> Result<Self> {
        validate_dims(dims)?;
        if values.len() != param_count(dims) {
            return invalid(format!(
                "dims {dims:?} need {} values, got {}",
                param_count(dims),
                values.len()
            ));
        }
        Ok(Self {
            dims: dims.to_vec(),
            values,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Global l2 norm over every layer.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    /// Element-wise mean of a non-empty list of gradients.
    pub fn mean(grads: &[Gradient]) -> Result<Gradient> {
        let Some(first) = grads.first() else {
            return invalid("cannot average zero gradients");
        };
        let mut acc = Gradient::zeros(&first.dims);
        for g in grads {
            acc.add_assign(g);
        }
        acc.scale(1.0 / grads.len() as f64);
        Ok(acc)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-ln(softmax(logits)[label])`, capped at `-ln(MIN_CONFIDENCE)`.
pub fn cross_entropy_from_logits(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    (lse - logits[label]).min(-MIN_CONFIDENCE.ln())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
