//! Datasets: a deterministic synthetic image generator, a CIFAR binary
//! loader/writer, and per-epoch shuffled batching.

use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};
use crate::rng::rng_from;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Images in `[0, 1]` with shape `[N, channels, H, W]` and integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    class_count: usize,
    split: Split,
    /// CIFAR-100 coarse labels, kept so files can be rewritten bit-exactly.
    coarse_labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize, split: Split) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(KdError::invalid("dataset images must be [N, C, H, W]"));
        }
        if images.rows() == 0 || images.rows() != labels.len() {
            return Err(KdError::invalid(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(KdError::invalid(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(KdError::invalid("pixel values must lie in [0, 1]"));
        }
        Ok(Self {
            images,
            labels,
            class_count,
            split,
            coarse_labels: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// `[channels, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Gathers the given samples into an image batch and label list.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let images = self.images.select_rows(indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (images, labels)
    }
}

fn wave(family: usize, freq: f64, phase_a: f64, phase_b: f64, c: (f64, f64), fx: f64, fy: f64) -> f64 {
    match family {
        0 => (TAU * freq * fy + phase_a).sin(),
        1 => (TAU * freq * fx + phase_a).sin(),
        2 => {
            let r = ((fx - c.0).powi(2) + (fy - c.1).powi(2)).sqrt();
            (TAU * freq * r + phase_a).cos()
        }
        _ => {
            let v = (TAU * freq * fx + phase_a).sin() * (TAU * freq * fy + phase_b).sin();
            (2.0 * v).clamp(-1.0, 1.0)
        }
    }
}

/// Renders one sample of `class`. Classes are pattern families (horizontal
/// stripes, vertical stripes, rings, checkers) crossed with a spatial
/// frequency. The class pattern fills a randomly placed square "object"
/// over a low-contrast background pattern of a random family; every sample
/// also gets random phase, frequency jitter, contrast, per-channel tint and
/// additive Gaussian noise.
fn render(class: usize, side: usize, rng: &mut crate::rng::Rng, out: &mut [f64]) {
    let s = side as f64;
    let family = class % 4;
    let freq = (1.5 + (class / 4) as f64) * rng.random_range(0.9..1.1) / s;
    let (pa, pb) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
    let bg_family = rng.random_range(0..4);
    let bg_freq = rng.random_range(1.5..4.5) / s;
    let (qa, qb) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
    let obj = rng.random_range(side / 2..=side * 3 / 4);
    let (oy, ox) = (rng.random_range(0..=side - obj), rng.random_range(0..=side - obj));
    let centre = (ox as f64 + obj as f64 / 2.0, oy as f64 + obj as f64 / 2.0);
    let contrast = rng.random_range(0.6..1.0);
    let bg_contrast = rng.random_range(0.1..0.35);
    let tint: [f64; 3] = [
        rng.random_range(0.6..1.0),
        rng.random_range(0.6..1.0),
        rng.random_range(0.6..1.0),
    ];
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let hw = side * side;
    for y in 0..side {
        for x in 0..side {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = (oy..oy + obj).contains(&y) && (ox..ox + obj).contains(&x);
            let base = if inside {
                0.5 + 0.5 * contrast * wave(family, freq, pa, pb, centre, fx, fy)
            } else {
                0.5 + 0.5 * bg_contrast * wave(bg_family, bg_freq, qa, qb, (s / 2.0, s / 2.0), fx, fy)
            };
            for (ch, t) in tint.iter().enumerate() {
                let v = t * base + noise.sample(rng);
                out[ch * hw + y * side + x] = v.clamp(0.0, 1.0);
            }
        }
    }
}

/// Generates a class-balanced synthetic dataset and splits each class
/// 80/20 into train and test sets. Fully determined by `seed`.
pub fn gen_synthetic(
    classes: usize,
    per_class: usize,
    side: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if classes < 2 {
        return Err(KdError::invalid("need at least 2 classes"));
    }
    if side < 8 {
        return Err(KdError::invalid("image side must be at least 8"));
    }
    let n_train = per_class * 4 / 5;
    if n_train == 0 || n_train == per_class {
        return Err(KdError::invalid("per_class must be at least 5"));
    }
    let n_test = per_class - n_train;
    let px = 3 * side * side;
    let mut train = Vec::with_capacity(classes * n_train * px);
    let mut test = Vec::with_capacity(classes * n_test * px);
    let mut train_labels = Vec::new();
    let mut test_labels = Vec::new();
    let mut buf = vec![0.0; px];
    for c in 0..classes {
        let mut rng = rng_from(seed, &[crate::rng::tag("synthetic"), c as u64]);
        for k in 0..per_class {
            render(c, side, &mut rng, &mut buf);
            if k < n_train {
                train.extend_from_slice(&buf);
                train_labels.push(c);
            } else {
                test.extend_from_slice(&buf);
                test_labels.push(c);
            }
        }
    }
    let shape = |n: usize| vec![n, 3, side, side];
    let train = Dataset::new(
        Tensor::new(shape(train_labels.len()), train)?,
        train_labels,
        classes,
        Split::Train,
    )?;
    let test = Dataset::new(
        Tensor::new(shape(test_labels.len()), test)?,
        test_labels,
        classes,
        Split::Test,
    )?;
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

const CIFAR_SIDE: usize = 32;
const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;

impl CifarVariant {
    pub fn record_size(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1 + CIFAR_PIXELS,
            CifarVariant::Cifar100 => 2 + CIFAR_PIXELS,
        }
    }

    pub fn class_count(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

/// Parses CIFAR binary records (channel-planar RGB, row-major 32x32).
/// CIFAR-100 records carry `coarse, fine` label bytes; the fine label is used.
pub fn parse_cifar_binary(bytes: &[u8], variant: CifarVariant, split: Split) -> Result<Dataset> {
    let rec = variant.record_size();
    if !bytes.len().is_multiple_of(rec) {
        return Err(KdError::MalformedFile {
            offset: (bytes.len() / rec * rec) as u64,
            reason: format!(
                "{} bytes is not a multiple of the {rec}-byte record size",
                bytes.len()
            ),
        });
    }
    if bytes.is_empty() {
        return Err(KdError::MalformedFile {
            offset: 0,
            reason: "no records".into(),
        });
    }
    let n = bytes.len() / rec;
    let header = rec - CIFAR_PIXELS;
    let mut labels = Vec::with_capacity(n);
    let mut coarse = Vec::new();
    let mut pixels = Vec::with_capacity(n * CIFAR_PIXELS);
    for (i, r) in bytes.chunks_exact(rec).enumerate() {
        let label = r[header - 1] as usize;
        if label >= variant.class_count() {
            return Err(KdError::MalformedFile {
                offset: (i * rec + header - 1) as u64,
                reason: format!("label {label} out of range"),
            });
        }
        if variant == CifarVariant::Cifar100 {
            coarse.push(r[0]);
        }
        labels.push(label);
        pixels.extend(r[header..].iter().map(|&b| b as f64 / 255.0));
    }
    let images = Tensor::new(vec![n, 3, CIFAR_SIDE, CIFAR_SIDE], pixels)?;
    let mut ds = Dataset::new(images, labels, variant.class_count(), split)?;
    if variant == CifarVariant::Cifar100 {
        ds.coarse_labels = Some(coarse);
    }
    Ok(ds)
}

pub fn load_cifar_binary(path: &Path, variant: CifarVariant, split: Split) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| KdError::io(path, e))?;
    parse_cifar_binary(&bytes, variant, split)
}

/// Serializes a 3x32x32 dataset back into CIFAR binary records. Pixels are
/// quantized with `round(v * 255)`; missing coarse labels are written as 0.
pub fn encode_cifar_binary(ds: &Dataset, variant: CifarVariant) -> Result<Vec<u8>> {
    if ds.image_shape() != [3, CIFAR_SIDE, CIFAR_SIDE] {
        return Err(KdError::invalid("CIFAR records hold 3x32x32 images"));
    }
    if ds.class_count > variant.class_count() {
        return Err(KdError::invalid("too many classes for this CIFAR variant"));
    }
    let mut out = Vec::with_capacity(ds.len() * variant.record_size());
    for i in 0..ds.len() {
        if variant == CifarVariant::Cifar100 {
            out.push(ds.coarse_labels.as_ref().map_or(0, |c| c[i]));
        }
        out.push(ds.labels[i] as u8);
        out.extend(ds.images.row(i).iter().map(|&v| (v * 255.0).round() as u8));
    }
    Ok(out)
}

/// Per-epoch shuffled batches of sample indices. The permutation is derived
/// from `(shuffle_seed, epoch)`; the final short batch is kept.
pub fn batches(n: usize, batch_size: usize, shuffle_seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(KdError::invalid("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(shuffle_seed, &[crate::rng::tag("shuffle"), epoch as u64]);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
