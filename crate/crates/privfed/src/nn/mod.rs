//! Minimal neural-network stack: a small fixed CNN and an MLP with manual
//! backpropagation, SGD training, the evaluation-metric suite, and IDX
//! dataset handling.
//!
//! Parameters are named, ordered `f64` tensors tied to an architecture tag;
//! checkpoints serialize as `PMD1` (magic, JSON architecture tag, then named
//! fixed-point tensor records). All initialization and shuffling randomness
//! derives from explicit seeds, so training is bitwise reproducible.

pub mod data;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod train;

use crate::error::{Error, Result};
use crate::fixed::{decode_fixed, encode_fixed, read_fxt1, to_fxt1_bytes};
use crate::seed;
use crate::tensor::PlainTensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Checkpoint tensors are stored at this scale: fine enough (2^-24) that
/// round-tripping a trained model does not move any reported metric.
pub const CHECKPOINT_FRAC_BITS: u8 = 24;

pub const CONV_KERNEL: usize = 3;

/// The two supported model families.
///
/// `SmallCnn` is conv3x3(in->8)-ReLU-avgpool2 -> conv3x3(8->16)-ReLU-avgpool2
/// -> flatten -> linear(->32)-ReLU -> linear(->classes); `Mlp` is a stack of
/// linear layers with ReLU between consecutive ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Architecture {
    SmallCnn { in_channels: usize, height: usize, width: usize, classes: usize },
    Mlp { inputs: usize, hidden: Vec<usize>, classes: usize },
}

pub const CNN_C1: usize = 8;
pub const CNN_C2: usize = 16;
pub const CNN_FC: usize = 32;

impl Architecture {
    pub fn small_cnn(height: usize, width: usize, classes: usize) -> Self {
        Architecture::SmallCnn { in_channels: 1, height, width, classes }
    }

    pub fn mlp(inputs: usize, hidden: Vec<usize>, classes: usize) -> Self {
        Architecture::Mlp { inputs, hidden, classes }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::SmallCnn { in_channels, height, width, classes } => {
                if *in_channels == 0 || *classes == 0 {
                    return Err(Error::Parameter("channels and classes must be >= 1".into()));
                }
                if height % 4 != 0 || width % 4 != 0 || *height < 4 || *width < 4 {
                    return Err(Error::Parameter(format!(
                        "CNN input {height}x{width} must be a multiple of 4 (two 2x2 pools)"
                    )));
                }
            }
            Architecture::Mlp { inputs, classes, .. } => {
                if *inputs == 0 || *classes == 0 {
                    return Err(Error::Parameter("inputs and classes must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        match self {
            Architecture::SmallCnn { classes, .. } | Architecture::Mlp { classes, .. } => *classes,
        }
    }

    /// Shape of one input sample, as stored in a batch tensor.
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            Architecture::SmallCnn { in_channels, height, width, .. } => {
                vec![*in_channels, *height, *width]
            }
            Architecture::Mlp { inputs, .. } => vec![*inputs],
        }
    }

    pub fn input_numel(&self) -> usize {
        self.input_shape().iter().product()
    }

    /// Flattened feature count entering the first fully connected layer.
    pub fn cnn_flat_dim(&self) -> Option<usize> {
        match self {
            Architecture::SmallCnn { height, width, .. } => {
                Some(CNN_C2 * (height / 4) * (width / 4))
            }
            Architecture::Mlp { .. } => None,
        }
    }

    /// Declared parameter names and shapes, in forward order. Conv kernels
    /// are stored pre-flattened as `[c_out, c_in * 9]` to match the im2col
    /// matmul layout.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Architecture::SmallCnn { in_channels, .. } => {
                let flat = self.cnn_flat_dim().unwrap();
                let classes = self.classes();
                vec![
                    ("conv1.weight".into(), vec![CNN_C1, in_channels * CONV_KERNEL * CONV_KERNEL]),
                    ("conv1.bias".into(), vec![CNN_C1]),
                    ("conv2.weight".into(), vec![CNN_C2, CNN_C1 * CONV_KERNEL * CONV_KERNEL]),
                    ("conv2.bias".into(), vec![CNN_C2]),
                    ("fc1.weight".into(), vec![CNN_FC, flat]),
                    ("fc1.bias".into(), vec![CNN_FC]),
                    ("fc2.weight".into(), vec![classes, CNN_FC]),
                    ("fc2.bias".into(), vec![classes]),
                ]
            }
            Architecture::Mlp { inputs, hidden, classes } => {
                let mut dims = vec![*inputs];
                dims.extend_from_slice(hidden);
                dims.push(*classes);
                let mut specs = Vec::new();
                for (i, pair) in dims.windows(2).enumerate() {
                    specs.push((format!("fc{}.weight", i + 1), vec![pair[1], pair[0]]));
                    specs.push((format!("fc{}.bias", i + 1), vec![pair[1]]));
                }
                specs
            }
        }
    }

    pub fn tag(&self) -> String {
        serde_json::to_string(self).expect("architecture tag serializes")
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        let arch: Architecture = serde_json::from_str(tag)
            .map_err(|e| Error::Format(format!("bad architecture tag: {e}")))?;
        arch.validate()?;
        Ok(arch)
    }
}

/// Named, ordered parameter tensors for one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub named: Vec<(String, PlainTensor)>,
}

impl ModelParams {
    /// Seeded init: every tensor uniform in (-s, s) with s = 1/sqrt(fan_in)
    /// of its layer, drawn in declared order from one derived stream.
    pub fn init(arch: &Architecture, root_seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed::rng_from(root_seed, "model.init");
        let named = arch
            .param_specs()
            .into_iter()
            .map(|(name, shape)| {
                let fan_in = if shape.len() == 2 { shape[1] } else { fan_in_of_bias(arch, &name) };
                let s = 1.0 / (fan_in as f64).sqrt();
                let n: usize = shape.iter().product();
                let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-s..s)).collect();
                (name, PlainTensor::from_vec(&shape, data).expect("init data matches shape"))
            })
            .collect();
        Ok(ModelParams { arch: arch.clone(), named })
    }

    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let named = arch
            .param_specs()
            .into_iter()
            .map(|(name, shape)| (name, PlainTensor::zeros(&shape)))
            .collect();
        Ok(ModelParams { arch: arch.clone(), named })
    }

    pub fn validate(&self) -> Result<()> {
        let specs = self.arch.param_specs();
        if specs.len() != self.named.len() {
            return Err(Error::Shape(format!(
                "architecture declares {} tensors, found {}",
                specs.len(),
                self.named.len()
            )));
        }
        for ((want_name, want_shape), (name, tensor)) in specs.iter().zip(&self.named) {
            if want_name != name {
                return Err(Error::Shape(format!("expected tensor {want_name}, found {name}")));
            }
            if *want_shape != tensor.shape {
                return Err(Error::Shape(format!(
                    "{name}: declared shape {want_shape:?}, stored {:?}",
                    tensor.shape
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> &PlainTensor {
        &self
            .named
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
            .1
    }

    pub fn tensors(&self) -> impl Iterator<Item = &PlainTensor> {
        self.named.iter().map(|(_, t)| t)
    }

    pub fn numel(&self) -> usize {
        self.named.iter().map(|(_, t)| t.numel()).sum()
    }

    /// All parameters concatenated in declared order.
    pub fn flatten(&self) -> PlainTensor {
        let mut data = Vec::with_capacity(self.numel());
        for (_, t) in &self.named {
            data.extend_from_slice(&t.data);
        }
        PlainTensor::from_vec(&[data.len()], data).expect("flat shape")
    }

    /// Rebuild the named tensors of `arch` from a flat vector.
    pub fn unflatten(arch: &Architecture, flat: &PlainTensor) -> Result<Self> {
        let mut out = ModelParams::zeros(arch)?;
        let want: usize = out.numel();
        if flat.numel() != want {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} elements, architecture needs {want}",
                flat.numel()
            )));
        }
        let mut off = 0;
        for (_, t) in &mut out.named {
            let n = t.numel();
            t.data.copy_from_slice(&flat.data[off..off + n]);
            off += n;
        }
        Ok(out)
    }

    /// In-place `self -= lr * grads`, the SGD step.
    pub fn sgd_step(&mut self, grads: &ModelParams, lr: f64) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::Parameter(format!("learning rate must be positive, got {lr}")));
        }
        self.axpy(-lr, grads)
    }

    /// In-place `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &ModelParams) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::Shape("parameter update for a different architecture".into()));
        }
        for ((_, t), (_, o)) in self.named.iter_mut().zip(&other.named) {
            for (a, b) in t.data.iter_mut().zip(&o.data) {
                *a += c * b;
            }
        }
        Ok(())
    }

    /// Largest absolute elementwise difference across all parameters.
    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.named
            .iter()
            .zip(&other.named)
            .flat_map(|((_, a), (_, b))| a.data.iter().zip(&b.data))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

fn fan_in_of_bias(arch: &Architecture, name: &str) -> usize {
    // A bias shares its layer's fan-in; find the matching weight spec.
    let weight_name = name.replace(".bias", ".weight");
    arch.param_specs()
        .into_iter()
        .find(|(n, _)| *n == weight_name)
        .map(|(_, shape)| shape[1])
        .unwrap_or(1)
}

const PMD1_MAGIC: &[u8; 4] = b"PMD1";
const PMD1_VERSION: u16 = 1;

/// Serialize a checkpoint: magic, version, architecture tag, then each
/// named tensor as a fixed-point record.
pub fn to_pmd1_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    params.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(PMD1_MAGIC);
    out.extend_from_slice(&PMD1_VERSION.to_le_bytes());
    let tag = params.arch.tag();
    out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    out.extend_from_slice(tag.as_bytes());
    out.extend_from_slice(&(params.named.len() as u16).to_le_bytes());
    for (name, tensor) in &params.named {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let fixed = encode_fixed(tensor, CHECKPOINT_FRAC_BITS)?;
        out.extend_from_slice(&to_fxt1_bytes(&fixed));
    }
    Ok(out)
}

pub fn from_pmd1_bytes(buf: &[u8]) -> Result<ModelParams> {
    let err = |m: &str| Error::Format(format!("PMD1: {m}"));
    if buf.len() < 12 || &buf[..4] != PMD1_MAGIC {
        return Err(err("missing magic"));
    }
    let version = u16::from_le_bytes(buf[4..6].try_into().unwrap());
    if version != PMD1_VERSION {
        return Err(err(&format!("unsupported version {version}")));
    }
    let tag_len = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
    if buf.len() < 10 + tag_len + 2 {
        return Err(err("truncated architecture tag"));
    }
    let tag = std::str::from_utf8(&buf[10..10 + tag_len]).map_err(|_| err("tag not UTF-8"))?;
    let arch = Architecture::from_tag(tag)?;
    let mut off = 10 + tag_len;
    let count = u16::from_le_bytes(buf[off..off + 2].try_into().unwrap()) as usize;
    off += 2;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        if buf.len() < off + 2 {
            return Err(err("truncated tensor name"));
        }
        let name_len = u16::from_le_bytes(buf[off..off + 2].try_into().unwrap()) as usize;
        off += 2;
        if buf.len() < off + name_len {
            return Err(err("truncated tensor name"));
        }
        let name = std::str::from_utf8(&buf[off..off + name_len])
            .map_err(|_| err("tensor name not UTF-8"))?
            .to_string();
        off += name_len;
        let (fixed, used) = read_fxt1(&buf[off..])?;
        off += used;
        named.push((name, decode_fixed(&fixed)));
    }
    if off != buf.len() {
        return Err(err("trailing bytes after last tensor"));
    }
    let params = ModelParams { arch, named };
    params.validate()?;
    Ok(params)
}

pub fn write_pmd1(params: &ModelParams, path: &std::path::Path) -> Result<()> {
    Ok(std::fs::write(path, to_pmd1_bytes(params)?)?)
}

pub fn read_pmd1(path: &std::path::Path) -> Result<ModelParams> {
    from_pmd1_bytes(&std::fs::read(path)?)
}
