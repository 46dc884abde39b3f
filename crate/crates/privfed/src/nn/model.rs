//! Whole-model forward and backward passes over batches.
//!
//! The backward pass is hand-derived layer by layer and verified against
//! central finite differences; the loss is mean softmax cross-entropy, so
//! duplicating a batch leaves gradients unchanged.

use super::layers::{
    avgpool_backward, avgpool_forward, conv_backward, conv_forward, im2col_map, linear_backward,
    linear_forward, relu_backward, relu_forward, softmax, softmax_ce,
};
use super::{Architecture, ModelParams, CNN_C1, CNN_C2};
use crate::error::{Error, Result};
use crate::tensor::PlainTensor;

/// A batch of samples: inputs `[N, ...sample shape]`, one class id each.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: PlainTensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: PlainTensor, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Degenerate("batch must contain at least one sample".into()));
        }
        if inputs.shape.first() != Some(&labels.len()) {
            return Err(Error::Shape(format!(
                "inputs lead dimension {:?} does not match {} labels",
                inputs.shape.first(),
                labels.len()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let stride = self.inputs.numel() / self.labels.len();
        &self.inputs.data[i * stride..(i + 1) * stride]
    }
}

fn check_input(arch: &Architecture, inputs: &PlainTensor, n: usize) -> Result<()> {
    let want: usize = arch.input_numel();
    if inputs.numel() != n * want {
        return Err(Error::Shape(format!(
            "batch of {n} expects {} values per sample, tensor has {} total",
            want,
            inputs.numel()
        )));
    }
    Ok(())
}

/// Per-sample intermediate activations kept for the backward pass.
enum SampleCache {
    Cnn {
        z1: Vec<f64>,
        p1: Vec<f64>,
        z2: Vec<f64>,
        p2: Vec<f64>,
        z3: Vec<f64>,
        a3: Vec<f64>,
    },
    Mlp {
        // Pre-activations z_i and post-ReLU activations a_i per layer.
        zs: Vec<Vec<f64>>,
        activations: Vec<Vec<f64>>,
    },
}

pub struct ForwardPass {
    pub logits: PlainTensor,
    caches: Vec<SampleCache>,
}

/// Forward one sample through the CNN; returns logits and cache.
fn cnn_forward_sample(
    params: &ModelParams,
    x: &[f64],
    maps: &(Vec<Option<usize>>, Vec<Option<usize>>),
    dims: (usize, usize),
) -> (Vec<f64>, SampleCache) {
    let (h, w) = dims;
    let z1 = conv_forward(x, params.get("conv1.weight"), &params.get("conv1.bias").data, &maps.0, h * w);
    let a1 = relu_forward(&z1);
    let p1 = avgpool_forward(&a1, CNN_C1, h, w);
    let (h2, w2) = (h / 2, w / 2);
    let z2 = conv_forward(&p1, params.get("conv2.weight"), &params.get("conv2.bias").data, &maps.1, h2 * w2);
    let a2 = relu_forward(&z2);
    let p2 = avgpool_forward(&a2, CNN_C2, h2, w2);
    let z3 = linear_forward(&p2, params.get("fc1.weight"), &params.get("fc1.bias").data);
    let a3 = relu_forward(&z3);
    let logits = linear_forward(&a3, params.get("fc2.weight"), &params.get("fc2.bias").data);
    (logits, SampleCache::Cnn { z1, p1, z2, p2, z3, a3 })
}

fn mlp_forward_sample(params: &ModelParams, x: &[f64], layers: usize) -> (Vec<f64>, SampleCache) {
    let mut zs = Vec::with_capacity(layers);
    let mut activations = vec![x.to_vec()];
    for l in 1..=layers {
        let z = linear_forward(
            activations.last().unwrap(),
            params.get(&format!("fc{l}.weight")),
            &params.get(&format!("fc{l}.bias")).data,
        );
        let a = if l < layers { relu_forward(&z) } else { z.clone() };
        zs.push(z);
        activations.push(a);
    }
    (activations.last().unwrap().clone(), SampleCache::Mlp { zs, activations })
}

/// Run the model over a batch, keeping what backward needs.
pub fn forward(params: &ModelParams, batch: &Batch) -> Result<ForwardPass> {
    params.validate()?;
    check_input(&params.arch, &batch.inputs, batch.len())?;
    let classes = params.arch.classes();
    for &l in &batch.labels {
        if l >= classes {
            return Err(Error::Data(format!("label {l} out of range for {classes} classes")));
        }
    }
    let n = batch.len();
    let mut logits = PlainTensor::zeros(&[n, classes]);
    let mut caches = Vec::with_capacity(n);
    match &params.arch {
        Architecture::SmallCnn { in_channels, height, width, .. } => {
            let maps = (
                im2col_map(*in_channels, *height, *width),
                im2col_map(CNN_C1, height / 2, width / 2),
            );
            for i in 0..n {
                let (row, cache) =
                    cnn_forward_sample(params, batch.sample(i), &maps, (*height, *width));
                logits.data[i * classes..(i + 1) * classes].copy_from_slice(&row);
                caches.push(cache);
            }
        }
        Architecture::Mlp { hidden, .. } => {
            let layers = hidden.len() + 1;
            for i in 0..n {
                let (row, cache) = mlp_forward_sample(params, batch.sample(i), layers);
                logits.data[i * classes..(i + 1) * classes].copy_from_slice(&row);
                caches.push(cache);
            }
        }
    }
    Ok(ForwardPass { logits, caches })
}

/// Logits only, cache discarded.
pub fn logits_of(params: &ModelParams, batch: &Batch) -> Result<PlainTensor> {
    Ok(forward(params, batch)?.logits)
}

/// Mean cross-entropy loss and parameter gradients for a batch.
pub fn backward(params: &ModelParams, batch: &Batch) -> Result<(f64, ModelParams)> {
    let pass = forward(params, batch)?;
    let n = batch.len();
    let classes = params.arch.classes();
    let mut grads = ModelParams::zeros(&params.arch)?;
    let mut total_loss = 0.0;
    for i in 0..n {
        let row = &pass.logits.data[i * classes..(i + 1) * classes];
        let (loss, mut dlogits) = softmax_ce(row, batch.labels[i])?;
        total_loss += loss / n as f64;
        for d in &mut dlogits {
            *d /= n as f64;
        }
        backward_sample(params, batch.sample(i), &pass.caches[i], &dlogits, &mut grads)?;
    }
    Ok((total_loss, grads))
}

fn add_into(grads: &mut ModelParams, name: &str, delta: &[f64]) {
    let t = &mut grads
        .named
        .iter_mut()
        .find(|(n, _)| n == name)
        .unwrap_or_else(|| panic!("gradient tensor {name} missing"))
        .1;
    for (g, d) in t.data.iter_mut().zip(delta) {
        *g += d;
    }
}

fn backward_sample(
    params: &ModelParams,
    x: &[f64],
    cache: &SampleCache,
    dlogits: &[f64],
    grads: &mut ModelParams,
) -> Result<()> {
    match (&params.arch, cache) {
        (
            Architecture::SmallCnn { in_channels, height, width, .. },
            SampleCache::Cnn { z1, p1, z2, p2, z3, a3 },
        ) => {
            let (h, w) = (*height, *width);
            let (h2, w2) = (h / 2, w / 2);
            let map1 = im2col_map(*in_channels, h, w);
            let map2 = im2col_map(CNN_C1, h2, w2);
            let (da3, dw4, db4) = linear_backward(dlogits, a3, params.get("fc2.weight"));
            add_into(grads, "fc2.weight", &dw4);
            add_into(grads, "fc2.bias", &db4);
            let dz3 = relu_backward(&da3, z3);
            let (dp2, dw3, db3) = linear_backward(&dz3, p2, params.get("fc1.weight"));
            add_into(grads, "fc1.weight", &dw3);
            add_into(grads, "fc1.bias", &db3);
            let da2 = avgpool_backward(&dp2, CNN_C2, h2, w2);
            let dz2 = relu_backward(&da2, z2);
            let (dp1, dw2, db2) = conv_backward(&dz2, p1, params.get("conv2.weight"), &map2, h2 * w2);
            add_into(grads, "conv2.weight", &dw2);
            add_into(grads, "conv2.bias", &db2);
            let da1 = avgpool_backward(&dp1, CNN_C1, h, w);
            let dz1 = relu_backward(&da1, z1);
            let (_, dw1, db1) = conv_backward(&dz1, x, params.get("conv1.weight"), &map1, h * w);
            add_into(grads, "conv1.weight", &dw1);
            add_into(grads, "conv1.bias", &db1);
        }
        (Architecture::Mlp { hidden, .. }, SampleCache::Mlp { zs, activations }) => {
            let layers = hidden.len() + 1;
            let mut d = dlogits.to_vec();
            for l in (1..=layers).rev() {
                let (dx, dw, db) =
                    linear_backward(&d, &activations[l - 1], params.get(&format!("fc{l}.weight")));
                add_into(grads, &format!("fc{l}.weight"), &dw);
                add_into(grads, &format!("fc{l}.bias"), &db);
                d = if l > 1 { relu_backward(&dx, &zs[l - 2]) } else { dx };
            }
        }
        _ => return Err(Error::Shape("cache does not match architecture".into())),
    }
    Ok(())
}

/// Mean loss only (used by finite-difference checks).
pub fn loss_of(params: &ModelParams, batch: &Batch) -> Result<f64> {
    let pass = forward(params, batch)?;
    let classes = params.arch.classes();
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        let row = &pass.logits.data[i * classes..(i + 1) * classes];
        total += softmax_ce(row, batch.labels[i])?.0 / n as f64;
    }
    Ok(total)
}

/// Argmax class per sample; ties resolve toward the lower index.
pub fn predict(params: &ModelParams, batch: &Batch) -> Result<Vec<usize>> {
    let logits = logits_of(params, batch)?;
    let classes = params.arch.classes();
    Ok((0..batch.len()).map(|i| argmax(&logits.data[i * classes..(i + 1) * classes])).collect())
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Softmax class probabilities per sample, `[N, classes]`.
pub fn class_scores(params: &ModelParams, batch: &Batch) -> Result<PlainTensor> {
    let logits = logits_of(params, batch)?;
    let classes = params.arch.classes();
    let mut out = logits.clone();
    for i in 0..batch.len() {
        let p = softmax(&logits.data[i * classes..(i + 1) * classes]);
        out.data[i * classes..(i + 1) * classes].copy_from_slice(&p);
    }
    Ok(out)
}

/// Activations entering the final linear layer, `[N, D]` (used by the
/// feature-space distance metric).
pub fn penultimate_features(params: &ModelParams, batch: &Batch) -> Result<PlainTensor> {
    let pass = forward(params, batch)?;
    let rows: Vec<Vec<f64>> = pass
        .caches
        .iter()
        .map(|c| match c {
            SampleCache::Cnn { a3, .. } => a3.clone(),
            SampleCache::Mlp { activations, .. } => {
                activations[activations.len() - 2].clone()
            }
        })
        .collect();
    let d = rows.first().map_or(0, |r| r.len());
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    PlainTensor::from_vec(&[batch.len(), d], data)
}
