//! Minimal training engine: dense and 1-D convolution layers, MSE loss,
//! SGD, with quantize-in-the-loop. After each backward pass every weight
//! and bias is re-quantized and the quantized parameters feed the next
//! forward pass. A trained `x == 9` model can then be lowered to an
//! [`InferenceModel`] whose multiplies run on the integer-add kernel.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::arith::{self, AdjustedParam};
use crate::bitcore::FloatBits;
use crate::quant::{self, QuantSpec};
use crate::{Error, Result};

/// A channels-by-length block of samples, row-major per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(channels: usize, len: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * len {
            return Err(Error::ShapeMismatch(format!(
                "tensor data length {} != {channels} x {len}",
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            len,
            data,
        })
    }

    pub fn from_samples(samples: Vec<f32>) -> Self {
        Tensor {
            channels: 1,
            len: samples.len(),
            data: samples,
        }
    }

    pub fn zeros(channels: usize, len: usize) -> Self {
        Tensor {
            channels,
            len,
            data: vec![0.0; channels * len],
        }
    }

    /// Sample at channel `c`, position `i`.
    pub fn at(&self, c: usize, i: usize) -> f32 {
        self.data[c * self.len + i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    /// Linear inside `[-1, 1]`, saturating outside.
    Clamp,
}

impl Activation {
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Identity => v,
            Activation::Clamp => v.clamp(-1.0, 1.0),
        }
    }

    /// Derivative as a function of the pre-activation value.
    pub fn grad(self, pre: f32) -> f32 {
        match self {
            Activation::Identity => 1.0,
            Activation::Clamp => {
                if (-1.0..=1.0).contains(&pre) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense {
        in_units: usize,
        out_units: usize,
    },
    /// Same-length 1-D convolution with zero padding; odd kernel only.
    Conv1d {
        filters: usize,
        kernel: usize,
        in_channels: usize,
    },
}

impl LayerKind {
    pub fn weight_count(&self) -> usize {
        match *self {
            LayerKind::Dense {
                in_units,
                out_units,
            } => in_units * out_units,
            LayerKind::Conv1d {
                filters,
                kernel,
                in_channels,
            } => filters * kernel * in_channels,
        }
    }

    pub fn bias_count(&self) -> usize {
        match *self {
            LayerKind::Dense { out_units, .. } => out_units,
            LayerKind::Conv1d { filters, .. } => filters,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Dense { in_units, .. } => in_units,
            LayerKind::Conv1d {
                kernel,
                in_channels,
                ..
            } => kernel * in_channels,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerKind::Dense {
                in_units,
                out_units,
            } => in_units > 0 && out_units > 0,
            LayerKind::Conv1d {
                filters,
                kernel,
                in_channels,
            } => filters > 0 && in_channels > 0 && kernel > 0 && kernel % 2 == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!("bad layer shape {self:?}")))
        }
    }
}

/// One layer: 32-bit-word parameter tensors plus the normalization scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub activation: Activation,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    /// Per-layer normalization scale; the layer input is divided by it.
    pub sigma: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
}

impl Model {
    /// Fresh model with fan-in-scaled uniform weights, deterministic per
    /// seed. Quantize before the first forward pass when training.
    pub fn init(specs: &[(LayerKind, Activation)], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        for &(kind, activation) in specs {
            kind.validate()?;
            let scale = 1.0 / (kind.fan_in() as f32).sqrt();
            let weights = (0..kind.weight_count())
                .map(|_| rng.gen_range(-0.5f32..0.5) * scale)
                .collect();
            layers.push(Layer {
                kind,
                activation,
                weights,
                bias: vec![0.0; kind.bias_count()],
                sigma: 1.0,
            });
        }
        Ok(Model { layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        for layer in &self.layers {
            layer.kind.validate()?;
            if layer.weights.len() != layer.kind.weight_count()
                || layer.bias.len() != layer.kind.bias_count()
            {
                return Err(Error::ShapeMismatch(format!(
                    "parameter tensor sizes do not match layer {:?}",
                    layer.kind
                )));
            }
        }
        Ok(())
    }
}

fn layer_forward(layer: &Layer, input: &Tensor) -> Result<(Vec<f32>, Tensor, Tensor)> {
    let x_norm: Vec<f32> = input.data.iter().map(|v| v / layer.sigma).collect();
    match layer.kind {
        LayerKind::Dense {
            in_units,
            out_units,
        } => {
            if input.channels * input.len != in_units {
                return Err(Error::ShapeMismatch(format!(
                    "dense layer expects {in_units} inputs, got {}x{}",
                    input.channels, input.len
                )));
            }
            let mut pre = vec![0.0f32; out_units];
            for (j, p) in pre.iter_mut().enumerate() {
                let mut acc = 0.0f32;
                let row = &layer.weights[j * in_units..(j + 1) * in_units];
                for (w, x) in row.iter().zip(&x_norm) {
                    acc += w * x;
                }
                *p = acc + layer.bias[j];
            }
            let out: Vec<f32> = pre.iter().map(|&v| layer.activation.apply(v)).collect();
            Ok((
                x_norm,
                Tensor::new(1, out_units, pre)?,
                Tensor::new(1, out_units, out)?,
            ))
        }
        LayerKind::Conv1d {
            filters,
            kernel,
            in_channels,
        } => {
            if input.channels != in_channels {
                return Err(Error::ShapeMismatch(format!(
                    "conv1d expects {in_channels} channels, got {}",
                    input.channels
                )));
            }
            let n = input.len;
            let pad = kernel / 2;
            let mut pre = vec![0.0f32; filters * n];
            for f in 0..filters {
                for t in 0..n {
                    let mut acc = 0.0f32;
                    for c in 0..in_channels {
                        let wbase = (f * in_channels + c) * kernel;
                        for k in 0..kernel {
                            let s = t + k;
                            if s < pad || s - pad >= n {
                                continue; // zero-padded tap
                            }
                            acc += layer.weights[wbase + k] * x_norm[c * n + s - pad];
                        }
                    }
                    pre[f * n + t] = acc + layer.bias[f];
                }
            }
            let out: Vec<f32> = pre.iter().map(|&v| layer.activation.apply(v)).collect();
            Ok((
                x_norm,
                Tensor::new(filters, n, pre)?,
                Tensor::new(filters, n, out)?,
            ))
        }
    }
}

/// Deterministic forward pass with native multiplies.
pub fn forward(model: &Model, input: &Tensor) -> Result<Tensor> {
    let mut cur = input.clone();
    for layer in &model.layers {
        let (_, _, out) = layer_forward(layer, &cur)?;
        cur = out;
    }
    Ok(cur)
}

/// Per-layer weight and bias gradients.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Gradients {
    fn zeros_like(model: &Model) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    fn add_scaled(&mut self, other: &Gradients, scale: f32) {
        for ((dw, db), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (a, b) in dw.iter_mut().zip(ow) {
                *a += b * scale;
            }
            for (a, b) in db.iter_mut().zip(ob) {
                *a += b * scale;
            }
        }
    }
}

/// MSE loss and its gradients for one sample.
pub fn backward(model: &Model, input: &Tensor, target: &Tensor) -> Result<(f32, Gradients)> {
    // Forward with caches.
    let mut x_norms = Vec::with_capacity(model.layers.len());
    let mut pres = Vec::with_capacity(model.layers.len());
    let mut cur = input.clone();
    let mut shapes = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        shapes.push((cur.channels, cur.len));
        let (x_norm, pre, out) = layer_forward(layer, &cur)?;
        x_norms.push(x_norm);
        pres.push(pre);
        cur = out;
    }
    let output = cur;
    if output.channels != target.channels || output.len != target.len {
        return Err(Error::ShapeMismatch(format!(
            "output {}x{} vs target {}x{}",
            output.channels, output.len, target.channels, target.len
        )));
    }
    let n_out = output.data.len() as f32;
    let mut loss = 0.0f32;
    // dL/dy for L = mean((y - t)^2).
    let mut d_out: Vec<f32> = output
        .data
        .iter()
        .zip(&target.data)
        .map(|(y, t)| {
            let e = y - t;
            loss += e * e / n_out;
            2.0 * e / n_out
        })
        .collect();

    let mut grads = Gradients::zeros_like(model);
    for li in (0..model.layers.len()).rev() {
        let layer = &model.layers[li];
        let x_norm = &x_norms[li];
        let pre = &pres[li];
        let (in_ch, in_len) = shapes[li];
        let dz: Vec<f32> = d_out
            .iter()
            .zip(&pre.data)
            .map(|(d, z)| d * layer.activation.grad(*z))
            .collect();
        let (dw, db) = &mut grads.layers[li];
        let mut dx_norm = vec![0.0f32; in_ch * in_len];
        match layer.kind {
            LayerKind::Dense {
                in_units,
                out_units,
            } => {
                for j in 0..out_units {
                    db[j] = dz[j];
                    for i in 0..in_units {
                        dw[j * in_units + i] = dz[j] * x_norm[i];
                        dx_norm[i] += layer.weights[j * in_units + i] * dz[j];
                    }
                }
            }
            LayerKind::Conv1d {
                filters,
                kernel,
                in_channels,
            } => {
                let n = in_len;
                let pad = kernel / 2;
                for f in 0..filters {
                    for t in 0..n {
                        let d = dz[f * n + t];
                        db[f] += d;
                        for c in 0..in_channels {
                            let wbase = (f * in_channels + c) * kernel;
                            for k in 0..kernel {
                                let s = t + k;
                                if s < pad || s - pad >= n {
                                    continue;
                                }
                                dw[wbase + k] += d * x_norm[c * n + s - pad];
                                dx_norm[c * n + s - pad] += layer.weights[wbase + k] * d;
                            }
                        }
                    }
                }
            }
        }
        d_out = dx_norm.iter().map(|d| d / layer.sigma).collect();
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    /// Retained bit-width for quantize-in-the-loop; 32 disables it.
    pub x: u32,
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn quant_spec(&self) -> Result<QuantSpec> {
        QuantSpec::new(self.x)
    }
}

/// One SGD step over a batch: update, clamp to `[-1, 1]`, re-quantize.
/// Returns the batch loss measured before the update.
pub fn train_step(model: &mut Model, batch: &[(Tensor, Tensor)], cfg: &TrainConfig) -> Result<f32> {
    let spec = cfg.quant_spec()?;
    let mut total = Gradients::zeros_like(model);
    let mut loss_sum = 0.0f32;
    let scale = 1.0 / batch.len().max(1) as f32;
    for (input, target) in batch {
        let (loss, grads) = backward(model, input, target)?;
        loss_sum += loss * scale;
        total.add_scaled(&grads, scale);
    }
    if !loss_sum.is_finite() {
        return Err(Error::Diverged { epoch: 0, batch: 0 });
    }
    for (layer, (dw, db)) in model.layers.iter_mut().zip(&total.layers) {
        for (w, g) in layer.weights.iter_mut().zip(dw) {
            *w = (*w - cfg.learning_rate * g).clamp(-1.0, 1.0);
        }
        for (b, g) in layer.bias.iter_mut().zip(db) {
            *b = (*b - cfg.learning_rate * g).clamp(-1.0, 1.0);
        }
    }
    quant::fraction_quantize_model(model, spec)?;
    Ok(loss_sum)
}

/// Full training loop: initial quantization, then shuffled mini-batches.
/// Returns per-epoch mean losses. Deterministic for a given seed.
pub fn train(
    model: &mut Model,
    samples: &[(Tensor, Tensor)],
    cfg: &TrainConfig,
) -> Result<Vec<f32>> {
    quant::fraction_quantize_model(model, cfg.quant_spec()?)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e0f_9000);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f32;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<(Tensor, Tensor)> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let loss = train_step(model, &batch, cfg).map_err(|e| match e {
                Error::Diverged { .. } => Error::Diverged {
                    epoch,
                    batch: batches,
                },
                other => other,
            })?;
            epoch_loss += loss;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches.max(1) as f32);
    }
    Ok(epoch_losses)
}

/// Mean squared error of the model over a sample set.
pub fn evaluate_mse(model: &Model, samples: &[(Tensor, Tensor)]) -> Result<f64> {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (input, target) in samples {
        let out = forward(model, input)?;
        if out.data.len() != target.data.len() {
            return Err(Error::ShapeMismatch("evaluation target shape".into()));
        }
        for (y, t) in out.data.iter().zip(&target.data) {
            let e = (*y - *t) as f64;
            sum += e * e;
        }
        count += out.data.len();
    }
    Ok(sum / count.max(1) as f64)
}

/// Trained model lowered for integer-add inference: parameters divided by
/// 2^63, inputs adjusted by 2^64 at every layer boundary.
#[derive(Debug, Clone)]
pub struct InferenceModel {
    layers: Vec<InferenceLayer>,
    /// Parameters flushed to zero while adjusting (diagnostic).
    pub flushed_params: u64,
}

#[derive(Debug, Clone)]
struct InferenceLayer {
    kind: LayerKind,
    activation: Activation,
    weights: Vec<AdjustedParam>,
    bias: Vec<f32>,
    sigma: f32,
    /// sigma * 2^64; dividing by it is what the -64 input shift realizes.
    sigma_prime: f32,
}

/// Lowers a fraction-free model (trained at `x == 9`) for integer-add
/// inference. Rejects any parameter with nonzero fraction bits.
pub fn build_inference_model(model: &Model) -> Result<InferenceModel> {
    model.validate()?;
    let mut flushed_params = 0u64;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (li, layer) in model.layers.iter().enumerate() {
        let mut weights = Vec::with_capacity(layer.weights.len());
        for (i, w) in layer.weights.iter().enumerate() {
            let canonical = FloatBits::from_f32(*w).canonicalize_zero().join();
            let (adj, flushed) = arith::adjust_parameter(canonical).map_err(|e| Error::Param {
                layer: li,
                tensor: "weights",
                index: i,
                source: Box::new(e),
            })?;
            flushed_params += flushed as u64;
            weights.push(adj);
        }
        for (i, b) in layer.bias.iter().enumerate() {
            // Biases stay in float form (they are added, not multiplied)
            // but must still be fraction-free in an x == 9 model.
            let bits = FloatBits::from_f32(*b);
            if !bits.is_zero_pattern() && bits.fraction() != 0 {
                return Err(Error::Param {
                    layer: li,
                    tensor: "bias",
                    index: i,
                    source: Box::new(Error::FractionNotZero(bits.join())),
                });
            }
        }
        layers.push(InferenceLayer {
            kind: layer.kind,
            activation: layer.activation,
            weights,
            bias: layer.bias.clone(),
            sigma: layer.sigma,
            sigma_prime: layer.sigma * 2f32.powi(64),
        });
    }
    Ok(InferenceModel {
        layers,
        flushed_params,
    })
}

impl InferenceModel {
    pub fn sigma_primes(&self) -> Vec<f32> {
        self.layers.iter().map(|l| l.sigma_prime).collect()
    }

    /// Integer-add forward pass. Returns the output and the number of
    /// activations flushed to zero during input adjustment.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, u64)> {
        let mut flushed = 0u64;
        let mut cur = input.clone();
        for layer in &self.layers {
            let mut adj = Vec::with_capacity(cur.data.len());
            for v in &cur.data {
                let x_norm = v / layer.sigma;
                let (a, fl) = arith::adjust_input(x_norm.to_bits())?;
                flushed += fl as u64;
                adj.push(a);
            }
            cur = match layer.kind {
                LayerKind::Dense {
                    in_units,
                    out_units,
                } => {
                    if cur.channels * cur.len != in_units {
                        return Err(Error::ShapeMismatch(format!(
                            "dense layer expects {in_units} inputs, got {}x{}",
                            cur.channels, cur.len
                        )));
                    }
                    let mut out = vec![0.0f32; out_units];
                    for (j, o) in out.iter_mut().enumerate() {
                        let row = &layer.weights[j * in_units..(j + 1) * in_units];
                        let mut acc = 0.0f32;
                        for (w, a) in row.iter().zip(&adj) {
                            acc += arith::seofp_multiply(*a, *w).to_f32();
                        }
                        *o = layer.activation.apply(acc + layer.bias[j]);
                    }
                    Tensor::new(1, out_units, out)?
                }
                LayerKind::Conv1d {
                    filters,
                    kernel,
                    in_channels,
                } => {
                    if cur.channels != in_channels {
                        return Err(Error::ShapeMismatch(format!(
                            "conv1d expects {in_channels} channels, got {}",
                            cur.channels
                        )));
                    }
                    let n = cur.len;
                    let pad = kernel / 2;
                    let mut out = vec![0.0f32; filters * n];
                    for f in 0..filters {
                        for t in 0..n {
                            let mut acc = 0.0f32;
                            for c in 0..in_channels {
                                let wbase = (f * in_channels + c) * kernel;
                                for k in 0..kernel {
                                    let s = t + k;
                                    if s < pad || s - pad >= n {
                                        continue;
                                    }
                                    acc += arith::seofp_multiply(
                                        adj[c * n + s - pad],
                                        layer.weights[wbase + k],
                                    )
                                    .to_f32();
                                }
                            }
                            out[f * n + t] = layer.activation.apply(acc + layer.bias[f]);
                        }
                    }
                    Tensor::new(filters, n, out)?
                }
            };
        }
        Ok((cur, flushed))
    }
}
