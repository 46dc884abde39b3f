//! Dataset handling: the IDX byte container (as used by MNIST), seeded
//! synthetic image generation, normalization, and split helpers.
//!
//! Images live in memory as `[n, 1, h, w]` tensors with values that are
//! multiples of 1/255, so writing to IDX and reading back is lossless.

use super::model::Batch;
use super::Architecture;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::PlainTensor;
use rand::seq::SliceRandom;
use rand::Rng;
use std::path::Path;

const IDX_UBYTE: u8 = 0x08;

/// Labeled single-channel image set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[n, 1, h, w]`, values in `[0, 1]`.
    pub images: PlainTensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: PlainTensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.shape.len() != 4 || images.shape[0] != labels.len() {
            return Err(Error::Shape(format!(
                "images shaped {:?} do not match {} labels",
                images.shape,
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {l} outside {classes} classes")));
        }
        Ok(Dataset { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> usize {
        self.images.shape[2]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let stride = self.images.numel() / self.len().max(1);
        &self.images.data[i * stride..(i + 1) * stride]
    }

    /// The whole set as one batch shaped for `arch`.
    pub fn to_batch_for(&self, arch: &Architecture) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::Degenerate("dataset is empty".into()));
        }
        let per = arch.input_numel();
        if self.images.numel() != self.len() * per {
            return Err(Error::Shape(format!(
                "dataset samples have {} values, architecture wants {per}",
                self.images.numel() / self.len()
            )));
        }
        let mut shape = vec![self.len()];
        shape.extend(arch.input_shape());
        let inputs = PlainTensor::from_vec(&shape, self.images.data.clone())?;
        Batch::new(inputs, self.labels.clone())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let stride = self.images.numel() / self.len().max(1);
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        let mut shape = self.images.shape.clone();
        shape[0] = indices.len();
        Dataset {
            images: PlainTensor::from_vec(&shape, data).expect("subset shape"),
            labels,
            classes: self.classes,
        }
    }

    /// Seeded shuffle split; `val_fraction` of samples (rounded down, at
    /// least 1 when possible) go to the second set.
    pub fn split(&self, val_fraction: f64, seed_root: u64, label: &str) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seed::rng_from(seed_root, label));
        let mut n_val = (self.len() as f64 * val_fraction) as usize;
        if n_val == 0 && self.len() > 1 && val_fraction > 0.0 {
            n_val = 1;
        }
        let (val_idx, train_idx) = idx.split_at(n_val);
        (self.subset(train_idx), self.subset(val_idx))
    }

    /// Population mean and standard deviation over all pixels.
    pub fn mean_std(&self) -> (f64, f64) {
        let n = self.images.numel().max(1) as f64;
        let mean = self.images.data.iter().sum::<f64>() / n;
        let var = self.images.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Per-pixel `(x - mean) / std` with a floor on `std`.
    pub fn normalized(&self, mean: f64, std: f64) -> Dataset {
        let s = std.max(1e-6);
        let mut out = self.clone();
        for v in &mut out.images.data {
            *v = (*v - mean) / s;
        }
        out
    }
}

fn read_header(buf: &[u8], want_dims: usize) -> Result<Vec<usize>> {
    if buf.len() < 4 || buf[0] != 0 || buf[1] != 0 {
        return Err(Error::Format("bad IDX magic".into()));
    }
    if buf[2] != IDX_UBYTE {
        return Err(Error::Format(format!("unsupported IDX dtype {:#04x}", buf[2])));
    }
    let ndim = buf[3] as usize;
    if ndim != want_dims {
        return Err(Error::Format(format!("IDX rank {ndim}, expected {want_dims}")));
    }
    if buf.len() < 4 + 4 * ndim {
        return Err(Error::Format("IDX header truncated".into()));
    }
    Ok((0..ndim)
        .map(|i| u32::from_be_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect())
}

/// Read a rank-3 ubyte IDX image file into `[n, 1, h, w]` values in [0, 1].
pub fn read_idx_images(path: &Path) -> Result<PlainTensor> {
    let buf = std::fs::read(path)?;
    let dims = read_header(&buf, 3)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let body = &buf[4 + 12..];
    if body.len() != n * h * w {
        return Err(Error::Format(format!(
            "IDX data length {} does not match {n}x{h}x{w}",
            body.len()
        )));
    }
    let data: Vec<f64> = body.iter().map(|&b| b as f64 / 255.0).collect();
    PlainTensor::from_vec(&[n, 1, h, w], data)
}

/// Read a rank-1 ubyte IDX label file.
pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let buf = std::fs::read(path)?;
    let dims = read_header(&buf, 1)?;
    let body = &buf[4 + 4..];
    if body.len() != dims[0] {
        return Err(Error::Format(format!(
            "IDX data length {} does not match {} labels",
            body.len(),
            dims[0]
        )));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

pub fn write_idx_images(path: &Path, images: &PlainTensor) -> Result<()> {
    if images.shape.len() != 4 || images.shape[1] != 1 {
        return Err(Error::Shape(format!("expected [n, 1, h, w] images, got {:?}", images.shape)));
    }
    let (n, h, w) = (images.shape[0], images.shape[2], images.shape[3]);
    let mut out = vec![0u8, 0, IDX_UBYTE, 3];
    for d in [n, h, w] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &v in &images.data {
        out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    Ok(std::fs::write(path, out)?)
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    if let Some(&l) = labels.iter().find(|&&l| l > 255) {
        return Err(Error::Data(format!("label {l} does not fit in a ubyte")));
    }
    let mut out = vec![0u8, 0, IDX_UBYTE, 1];
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    Ok(std::fs::write(path, out)?)
}

/// Load an image/label IDX pair into a dataset.
pub fn load_dataset(images_path: &Path, labels_path: &Path, classes: usize) -> Result<Dataset> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    Dataset::new(images, labels, classes)
}

pub const SYNTHETIC_CLASSES: usize = 3;

/// Seeded synthetic image set with three visually distinct classes:
/// horizontal band, vertical band, and diagonal stripe, over uniform noise.
/// Values are multiples of 1/255 so the IDX round trip is exact.
pub fn synthetic_dataset(seed_root: u64, label: &str, n: usize, side: usize) -> Result<Dataset> {
    if side < 4 {
        return Err(Error::Parameter(format!("side {side} too small for patterns")));
    }
    let mut rng = seed::rng_from(seed_root, label);
    let mut data = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    let thickness = (side / 4).max(2);
    for i in 0..n {
        let class = i % SYNTHETIC_CLASSES;
        let offset = rng.gen_range(0..side);
        for y in 0..side {
            for x in 0..side {
                let on = match class {
                    0 => (y + side - offset) % side < thickness,
                    1 => (x + side - offset) % side < thickness,
                    _ => (x + y + offset) % side < thickness,
                };
                let byte: u8 =
                    if on { rng.gen_range(180..=255) } else { rng.gen_range(0..=50) };
                data.push(byte as f64 / 255.0);
            }
        }
        labels.push(class);
    }
    let images = PlainTensor::from_vec(&[n, 1, side, side], data)?;
    Dataset::new(images, labels, SYNTHETIC_CLASSES)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = synthetic_dataset(1, "train", 30, 8).unwrap();
        let b = synthetic_dataset(1, "train", 30, 8).unwrap();
        assert_eq!(a, b);
        let c = synthetic_dataset(2, "train", 30, 8).unwrap();
        assert_ne!(a, c);
        for class in 0..3 {
            assert_eq!(a.labels.iter().filter(|&&l| l == class).count(), 10);
        }
        assert!(a.images.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn synthetic_classes_are_visually_distinct() {
        let d = synthetic_dataset(3, "train", 90, 16).unwrap();
        // Mean image per class; classes must differ pixelwise on average.
        let side = 16;
        let mut means = vec![vec![0.0; side * side]; 3];
        let mut counts = [0usize; 3];
        for i in 0..d.len() {
            let c = d.labels[i];
            counts[c] += 1;
            for (m, v) in means[c].iter_mut().zip(d.sample(i)) {
                *m += v;
            }
        }
        for (c, m) in means.iter_mut().enumerate() {
            for v in m.iter_mut() {
                *v /= counts[c] as f64;
            }
        }
        for a in 0..3 {
            for b in (a + 1)..3 {
                let dist: f64 =
                    means[a].iter().zip(&means[b]).map(|(x, y)| (x - y).abs()).sum::<f64>()
                        / (side * side) as f64;
                assert!(dist > 0.05, "classes {a} and {b} look alike ({dist})");
            }
        }
    }

    #[test]
    fn idx_roundtrip_is_lossless() {
        let dir = tmpdir();
        let d = synthetic_dataset(5, "rt", 12, 8).unwrap();
        let ip = dir.path().join("images.idx");
        let lp = dir.path().join("labels.idx");
        write_idx_images(&ip, &d.images).unwrap();
        write_idx_labels(&lp, &d.labels).unwrap();
        let back = load_dataset(&ip, &lp, 3).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn idx_rejects_corruption() {
        let dir = tmpdir();
        let d = synthetic_dataset(6, "bad", 4, 8).unwrap();
        let ip = dir.path().join("images.idx");
        write_idx_images(&ip, &d.images).unwrap();
        let mut bytes = std::fs::read(&ip).unwrap();
        bytes[2] = 0x0D;
        let bad = dir.path().join("bad.idx");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(read_idx_images(&bad).is_err());
        std::fs::write(&bad, &std::fs::read(&ip).unwrap()[..20]).unwrap();
        assert!(read_idx_images(&bad).is_err());
        assert!(read_idx_labels(&ip).is_err(), "rank-3 file is not a label file");
    }

    #[test]
    fn split_partitions_the_set() {
        let d = synthetic_dataset(7, "split", 20, 8).unwrap();
        let (train, val) = d.split(0.1, 7, "val.split");
        assert_eq!(train.len(), 18);
        assert_eq!(val.len(), 2);
        let (t2, v2) = d.split(0.1, 7, "val.split");
        assert_eq!(train, t2);
        assert_eq!(val, v2);
        // Tiny sets still yield a validation sample.
        let small = d.subset(&[0, 1]);
        let (_, v) = small.split(0.1, 1, "v");
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn normalization_centers_the_data() {
        let d = synthetic_dataset(8, "norm", 30, 8).unwrap();
        let (mean, std) = d.mean_std();
        assert!(std > 0.0);
        let n = d.normalized(mean, std);
        let (m2, s2) = n.mean_std();
        assert!(m2.abs() < 1e-9);
        assert!((s2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn batch_shaping_for_architectures() {
        let d = synthetic_dataset(9, "shape", 6, 8).unwrap();
        let cnn = Architecture::small_cnn(8, 8, 3);
        let mlp = Architecture::mlp(64, vec![16], 3);
        assert_eq!(d.to_batch_for(&cnn).unwrap().inputs.shape, vec![6, 1, 8, 8]);
        assert_eq!(d.to_batch_for(&mlp).unwrap().inputs.shape, vec![6, 64]);
        let empty = d.subset(&[]);
        assert!(matches!(empty.to_batch_for(&cnn), Err(Error::Degenerate(_))));
        let wrong = Architecture::mlp(100, vec![], 3);
        assert!(d.to_batch_for(&wrong).is_err());
    }
}
