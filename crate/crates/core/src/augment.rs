//! Augmentation kernels and the KD batch-composition rule.
//!
//! Images are rank-3 tensors `[channels, H, W]`. Each stochastic kernel has
//! a deterministic `*_at` twin taking the random draws explicitly.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

fn dims3(image: &Tensor) -> Result<[usize; 3]> {
    match *image.shape() {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(KdError::invalid(format!(
            "expected a [channels, H, W] image, got {:?}",
            image.shape()
        ))),
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(KdError::ShapeMismatch {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Reverses the width axis.
pub fn flip_width(image: &Tensor) -> Result<Tensor> {
    let [_, _, w] = dims3(image)?;
    let mut out = image.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    Ok(out)
}

/// Horizontal flip with probability `p`.
pub fn hflip(image: &Tensor, p: f64, rng: &mut Rng) -> Result<Tensor> {
    dims3(image)?;
    if rng.random::<f64>() < p {
        flip_width(image)
    } else {
        Ok(image.clone())
    }
}

/// Crops the `H x W` window at offset `(oy, ox)` of the image zero-padded by
/// `pad` on every side. Offsets range over `0..=2*pad`.
pub fn pad_crop_at(image: &Tensor, pad: usize, oy: usize, ox: usize) -> Result<Tensor> {
    let [c, h, w] = dims3(image)?;
    if oy > 2 * pad || ox > 2 * pad {
        return Err(KdError::invalid("crop offset outside the padded image"));
    }
    let mut out = Tensor::zeros(image.shape());
    let src = image.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + oy) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + ox) as isize - pad as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                dst[(ch * h + y) * w + x] = src[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    Ok(out)
}

/// Zero-pad by `pad` and take a uniformly placed window of the original size.
pub fn pad_crop(image: &Tensor, pad: usize, rng: &mut Rng) -> Result<Tensor> {
    let oy = rng.random_range(0..=2 * pad);
    let ox = rng.random_range(0..=2 * pad);
    pad_crop_at(image, pad, oy, ox)
}

/// Axis-aligned box `[x0, x0+w) x [y0, y0+h)` already clipped to the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutBox {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl CutBox {
    /// Box of nominal size `bw x bh` centred at `(cy, cx)`, clipped.
    pub fn centered(height: usize, width: usize, cy: usize, cx: usize, bh: usize, bw: usize) -> Self {
        let clip = |center: usize, len: usize, limit: usize| {
            let lo = center as isize - (len / 2) as isize;
            let hi = lo + len as isize;
            let lo = lo.clamp(0, limit as isize) as usize;
            let hi = hi.clamp(0, limit as isize) as usize;
            (lo, hi - lo)
        };
        let (y0, h) = clip(cy, bh, height);
        let (x0, w) = clip(cx, bw, width);
        CutBox { x0, y0, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y0 + self.h && x >= self.x0 && x < self.x0 + self.w
    }
}

/// Zeroes a `length x length` square centred at `(cy, cx)` across all
/// channels, clipped at the borders.
pub fn cutout_at(image: &Tensor, length: usize, cy: usize, cx: usize) -> Result<Tensor> {
    let [c, h, w] = dims3(image)?;
    if length == 0 || length > h.min(w) {
        return Err(KdError::invalid(format!(
            "cutout length {length} must lie in 1..={}",
            h.min(w)
        )));
    }
    let b = CutBox::centered(h, w, cy, cx, length, length);
    let mut out = image.clone();
    let d = out.data_mut();
    for ch in 0..c {
        for y in b.y0..b.y0 + b.h {
            d[(ch * h + y) * w + b.x0..(ch * h + y) * w + b.x0 + b.w].fill(0.0);
        }
    }
    Ok(out)
}

/// Cutout with a uniformly drawn centre.
pub fn cutout(image: &Tensor, length: usize, rng: &mut Rng) -> Result<Tensor> {
    let [_, h, w] = dims3(image)?;
    let cy = rng.random_range(0..h);
    let cx = rng.random_range(0..w);
    cutout_at(image, length, cy, cx)
}

/// `lambda * xi + (1 - lambda) * xj`.
pub fn mixup(xi: &Tensor, xj: &Tensor, lambda: f64) -> Result<Tensor> {
    same_shape(xi, xj)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(KdError::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let mut out = xi.clone();
    out.data_mut()
        .iter_mut()
        .zip(xj.data())
        .for_each(|(a, &b)| *a = lambda * *a + (1.0 - lambda) * b);
    Ok(out)
}

/// Pastes the CutMix box for `lambda` centred at `(cy, cx)` from `xj` onto
/// `xi`. Returns the image, the kept-area ratio of `xi` after clipping, and
/// the clipped box.
pub fn cutmix_at(
    xi: &Tensor,
    xj: &Tensor,
    lambda: f64,
    cy: usize,
    cx: usize,
) -> Result<(Tensor, f64, CutBox)> {
    same_shape(xi, xj)?;
    let [c, h, w] = dims3(xi)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(KdError::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let cut = (1.0 - lambda).sqrt();
    let bw = (w as f64 * cut).round() as usize;
    let bh = (h as f64 * cut).round() as usize;
    let b = CutBox::centered(h, w, cy, cx, bh, bw);
    let mut out = xi.clone();
    let d = out.data_mut();
    let s = xj.data();
    for ch in 0..c {
        for y in b.y0..b.y0 + b.h {
            let row = (ch * h + y) * w;
            d[row + b.x0..row + b.x0 + b.w].copy_from_slice(&s[row + b.x0..row + b.x0 + b.w]);
        }
    }
    let ratio = 1.0 - b.area() as f64 / (h * w) as f64;
    Ok((out, ratio, b))
}

/// CutMix with a uniformly drawn box centre.
pub fn cutmix(xi: &Tensor, xj: &Tensor, lambda: f64, rng: &mut Rng) -> Result<(Tensor, f64)> {
    let [_, h, w] = dims3(xi)?;
    let cy = rng.random_range(0..h);
    let cx = rng.random_range(0..w);
    let (img, ratio, _) = cutmix_at(xi, xj, lambda, cy, cx)?;
    Ok((img, ratio))
}

/// Draws the mixing coefficient from `Beta(alpha, alpha)`.
pub fn sample_mix_lambda(alpha: f64, rng: &mut Rng) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(KdError::invalid(format!("Beta alpha must be positive, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| KdError::invalid(e.to_string()))?;
    Ok(beta.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Identity,
    Flip,
    FlipCrop,
    Cutout,
    Mixup,
    Cutmix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DAScheme {
    pub kind: SchemeKind,
    pub cutout_length: usize,
    pub mix_alpha: f64,
    pub crop_pad: usize,
    /// Pins the mixing coefficient instead of drawing it (tests, ablations).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_lambda: Option<f64>,
}

impl Default for DAScheme {
    fn default() -> Self {
        Self {
            kind: SchemeKind::Identity,
            cutout_length: 8,
            mix_alpha: 1.0,
            crop_pad: 4,
            fixed_lambda: None,
        }
    }
}

impl DAScheme {
    pub fn new(kind: SchemeKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self, side: usize) -> Result<()> {
        if self.cutout_length == 0 || self.cutout_length > side {
            return Err(KdError::invalid(format!(
                "cutout_length {} must lie in 1..={side}",
                self.cutout_length
            )));
        }
        if !(self.mix_alpha > 0.0) {
            return Err(KdError::invalid("mix_alpha must be positive"));
        }
        if let Some(l) = self.fixed_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(KdError::invalid("fixed_lambda must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn lambda(&self, rng: &mut Rng) -> Result<f64> {
        match self.fixed_lambda {
            Some(l) => Ok(l),
            None => sample_mix_lambda(self.mix_alpha, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    CePlusKl,
    KlOnly,
}

/// Mixing record of one augmented sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixParams {
    pub lambda: f64,
    pub partner_index: usize,
    pub partner_label: usize,
    /// CutMix only.
    pub cut_box: Option<CutBox>,
    /// Fraction of the image still coming from the primary sample.
    pub effective_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A composed KD batch: the standard-augmented originals followed by their
/// augmented copies.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedBatch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub loss_mode: Vec<LossMode>,
    /// Position in the original half that each sample derives from.
    pub source: Vec<usize>,
    pub mix: Vec<Option<MixParams>>,
}

impl ComposedBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Indices of the samples carrying `KlOnly`.
    pub fn augmented_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.loss_mode[i] == LossMode::KlOnly)
            .collect()
    }

    /// Keeps only the samples at `indices` (in the given order).
    pub fn retain(&self, indices: &[usize]) -> ComposedBatch {
        ComposedBatch {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            loss_mode: indices.iter().map(|&i| self.loss_mode[i]).collect(),
            source: indices.iter().map(|&i| self.source[i]).collect(),
            mix: indices.iter().map(|&i| self.mix[i]).collect(),
        }
    }
}

fn image_of(batch: &Tensor, i: usize) -> Tensor {
    let s = batch.shape();
    Tensor::new(s[1..].to_vec(), batch.row(i).to_vec()).expect("row matches image shape")
}

/// The standard pipeline applied before any scheme: random horizontal flip
/// followed by pad-and-crop.
pub fn standard_augment(batch: &LabeledBatch, crop_pad: usize, rng: &mut Rng) -> Result<LabeledBatch> {
    let mut images = batch.images.clone();
    for i in 0..batch.len() {
        let img = hflip(&image_of(&batch.images, i), 0.5, rng)?;
        let img = pad_crop(&img, crop_pad, rng)?;
        images.row_mut(i).copy_from_slice(img.data());
    }
    Ok(LabeledBatch {
        images,
        labels: batch.labels.clone(),
    })
}

/// Doubles a standard-augmented batch: the originals keep the full KD loss,
/// their `scheme`-augmented copies get the KL term only. Mix partners come
/// from a uniform random permutation of the batch (self-pairing allowed).
pub fn compose_batch(standard: &LabeledBatch, scheme: &DAScheme, rng: &mut Rng) -> Result<ComposedBatch> {
    let b = standard.len();
    if b == 0 {
        return Err(KdError::invalid("cannot compose an empty batch"));
    }
    let s = standard.images.shape();
    scheme.validate(s[2].min(s[3]))?;
    let mut aug = standard.images.clone();
    let mut mix = vec![None; b];
    let partners: Vec<usize> = match scheme.kind {
        SchemeKind::Mixup | SchemeKind::Cutmix => {
            let mut p: Vec<usize> = (0..b).collect();
            p.shuffle(rng);
            p
        }
        _ => Vec::new(),
    };
    for i in 0..b {
        let x = image_of(&standard.images, i);
        let out = match scheme.kind {
            SchemeKind::Identity => x,
            SchemeKind::Flip => hflip(&x, 0.5, rng)?,
            SchemeKind::FlipCrop => pad_crop(&hflip(&x, 0.5, rng)?, scheme.crop_pad, rng)?,
            SchemeKind::Cutout => cutout(&x, scheme.cutout_length, rng)?,
            SchemeKind::Mixup => {
                let j = partners[i];
                let lambda = scheme.lambda(rng)?;
                mix[i] = Some(MixParams {
                    lambda,
                    partner_index: j,
                    partner_label: standard.labels[j],
                    cut_box: None,
                    effective_ratio: lambda,
                });
                mixup(&x, &image_of(&standard.images, j), lambda)?
            }
            SchemeKind::Cutmix => {
                let j = partners[i];
                let lambda = scheme.lambda(rng)?;
                let cy = rng.random_range(0..s[2]);
                let cx = rng.random_range(0..s[3]);
                let (img, ratio, cut_box) =
                    cutmix_at(&x, &image_of(&standard.images, j), lambda, cy, cx)?;
                mix[i] = Some(MixParams {
                    lambda,
                    partner_index: j,
                    partner_label: standard.labels[j],
                    cut_box: Some(cut_box),
                    effective_ratio: ratio,
                });
                img
            }
        };
        aug.row_mut(i).copy_from_slice(out.data());
    }
    let images = Tensor::concat_rows(&[&standard.images, &aug])?;
    let mut labels = standard.labels.clone();
    labels.extend_from_slice(&standard.labels);
    let mut loss_mode = vec![LossMode::CePlusKl; b];
    loss_mode.extend(std::iter::repeat_n(LossMode::KlOnly, b));
    let source = (0..b).chain(0..b).collect();
    let mut all_mix = vec![None; b];
    all_mix.extend(mix);
    Ok(ComposedBatch {
        images,
        labels,
        loss_mode,
        source,
        mix: all_mix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;

    fn img(c: usize, h: usize, w: usize, f: impl FnMut(usize) -> f64) -> Tensor {
        Tensor::from_fn(&[c, h, w], f)
    }

    #[test]
    fn hflip_examples() {
        let mut rng = rng_from(0, &[]);
        let x = img(1, 1, 2, |i| [3.0, 5.0][i]);
        assert_eq!(hflip(&x, 0.0, &mut rng).unwrap(), x);
        let f = hflip(&x, 1.0, &mut rng).unwrap();
        assert_eq!(f.data(), &[5.0, 3.0]);
        let y = img(2, 3, 4, |i| i as f64);
        let twice = hflip(&hflip(&y, 1.0, &mut rng).unwrap(), 1.0, &mut rng).unwrap();
        assert_eq!(twice, y);
    }

    #[test]
    fn pad_crop_examples() {
        let mut rng = rng_from(1, &[]);
        let x = img(1, 2, 2, |i| (i + 1) as f64);
        assert_eq!(pad_crop(&x, 0, &mut rng).unwrap(), x);
        // padded 4x4: row0 zeros, row1 [0,1,2,0]; top-left 2x2 window
        let c = pad_crop_at(&x, 1, 0, 0).unwrap();
        assert_eq!(c.data(), &[0.0, 0.0, 0.0, 1.0]);
        let c = pad_crop_at(&x, 1, 1, 1).unwrap();
        assert_eq!(c, x);
    }

    #[test]
    fn cutout_examples() {
        let x = img(2, 4, 4, |_| 1.0);
        assert!(cutout_at(&x, 4, 2, 2).unwrap().data().iter().all(|&v| v == 0.0));
        let c = cutout_at(&x, 2, 1, 1).unwrap();
        for ch in 0..2 {
            for y in 0..4 {
                for xx in 0..4 {
                    let v = c.data()[(ch * 4 + y) * 4 + xx];
                    assert_eq!(v, if y < 2 && xx < 2 { 0.0 } else { 1.0 });
                }
            }
        }
        assert!(cutout_at(&x, 0, 0, 0).is_err());
        assert!(cutout_at(&x, 5, 0, 0).is_err());
    }

    #[test]
    fn cutout_zeroes_at_most_length_rows_and_cols() {
        let mut rng = rng_from(4, &[]);
        let x = img(1, 9, 9, |_| 1.0);
        for _ in 0..200 {
            let c = cutout(&x, 4, &mut rng).unwrap();
            let rows = (0..9)
                .filter(|y| (0..9).any(|xx| c.data()[y * 9 + xx] == 0.0))
                .count();
            let cols = (0..9)
                .filter(|xx| (0..9).any(|y| c.data()[y * 9 + xx] == 0.0))
                .count();
            assert!(rows <= 4 && cols <= 4);
        }
    }

    #[test]
    fn mixup_examples() {
        let a = img(1, 1, 2, |i| [0.0, 2.0][i]);
        let b = img(1, 1, 2, |i| [2.0, 0.0][i]);
        assert_eq!(mixup(&a, &b, 1.0).unwrap(), a);
        assert_eq!(mixup(&a, &b, 0.0).unwrap(), b);
        assert_eq!(mixup(&a, &b, 0.5).unwrap().data(), &[1.0, 1.0]);
        assert!(mixup(&a, &img(1, 2, 1, |_| 0.0), 0.5).is_err());
    }

    #[test]
    fn cutmix_examples() {
        let a = img(3, 8, 8, |_| 1.0);
        let b = img(3, 8, 8, |_| 2.0);
        let (o, r, bx) = cutmix_at(&a, &b, 1.0, 3, 5).unwrap();
        assert_eq!((o, r, bx.area()), (a.clone(), 1.0, 0));
        let (o, r, _) = cutmix_at(&a, &b, 0.0, 4, 4).unwrap();
        assert_eq!((o, r), (b.clone(), 0.0));
        // clipped at the corner: nominal 4x4 box keeps a 2x2 patch
        let (o, r, bx) = cutmix_at(&a, &b, 0.75, 0, 0).unwrap();
        assert_eq!(bx, CutBox { x0: 0, y0: 0, w: 2, h: 2 });
        assert_eq!(r, 1.0 - 4.0 / 64.0);
        assert_eq!(o.data().iter().filter(|&&v| v == 2.0).count(), 12);
    }

    #[test]
    fn beta_lambda_moments() {
        let mut rng = rng_from(11, &[]);
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n).map(|_| sample_mix_lambda(1.0, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01);
        draws.sort_by(f64::total_cmp);
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).abs().max((x - i as f64 / n as f64).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS distance {ks}");

        let d: Vec<f64> = (0..n).map(|_| sample_mix_lambda(0.2, &mut rng).unwrap()).collect();
        let m = d.iter().sum::<f64>() / n as f64;
        let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
        // Beta(a, a) variance is 1 / (4 (2a + 1)); 0.1786 for a = 0.2
        assert!(var > 1.0 / 12.0);
        assert!(sample_mix_lambda(0.0, &mut rng).is_err());
    }

    fn batch(b: usize) -> LabeledBatch {
        LabeledBatch {
            images: Tensor::from_fn(&[b, 3, 8, 8], |i| ((i * 7919) % 101) as f64 / 100.0),
            labels: (0..b).map(|i| i % 3).collect(),
        }
    }

    #[test]
    fn compose_identity_duplicates() {
        let std = batch(2);
        let c = compose_batch(&std, &DAScheme::new(SchemeKind::Identity), &mut rng_from(0, &[])).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.images.row(0), c.images.row(2));
        assert_eq!(c.images.row(1), c.images.row(3));
        assert_eq!(
            c.loss_mode,
            vec![LossMode::CePlusKl, LossMode::CePlusKl, LossMode::KlOnly, LossMode::KlOnly]
        );
    }

    #[test]
    fn compose_mixup_with_unit_lambda_duplicates() {
        let std = batch(5);
        let scheme = DAScheme {
            fixed_lambda: Some(1.0),
            ..DAScheme::new(SchemeKind::Mixup)
        };
        let c = compose_batch(&std, &scheme, &mut rng_from(3, &[])).unwrap();
        for i in 0..5 {
            assert_eq!(c.images.row(i), c.images.row(i + 5));
        }
    }

    #[test]
    fn compose_rejects_empty() {
        let empty = LabeledBatch {
            images: Tensor::zeros(&[0, 3, 8, 8]),
            labels: vec![],
        };
        assert!(compose_batch(&empty, &DAScheme::default(), &mut rng_from(0, &[])).is_err());
    }

    const KINDS: [SchemeKind; 6] = [
        SchemeKind::Identity,
        SchemeKind::Flip,
        SchemeKind::FlipCrop,
        SchemeKind::Cutout,
        SchemeKind::Mixup,
        SchemeKind::Cutmix,
    ];

    proptest! {
        #[test]
        fn compose_doubles_and_keeps_originals(kind in 0usize..6, b in 1usize..6, seed in any::<u64>()) {
            let std = batch(b);
            let scheme = DAScheme { cutout_length: 4, ..DAScheme::new(KINDS[kind]) };
            let c = compose_batch(&std, &scheme, &mut rng_from(seed, &[])).unwrap();
            prop_assert_eq!(c.len(), 2 * b);
            prop_assert_eq!(&c.images.data()[..std.images.len()], std.images.data());
            prop_assert_eq!(&c.labels[..b], &std.labels[..]);
            prop_assert!(c.loss_mode[..b].iter().all(|&m| m == LossMode::CePlusKl));
            prop_assert!(c.loss_mode[b..].iter().all(|&m| m == LossMode::KlOnly));
            let again = compose_batch(&std, &scheme, &mut rng_from(seed, &[])).unwrap();
            prop_assert_eq!(c, again);
        }

        #[test]
        fn kernels_preserve_shape_and_range(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
            let mut rng = rng_from(seed, &[]);
            let a = img(3, 6, 6, |i| 0.2 + 0.5 * ((i * 31 % 17) as f64 / 17.0));
            let b = img(3, 6, 6, |i| 0.1 + 0.8 * ((i * 13 % 7) as f64 / 7.0));
            let lo = a.data().iter().chain(b.data()).copied().fold(f64::INFINITY, f64::min);
            let hi = a.data().iter().chain(b.data()).copied().fold(f64::NEG_INFINITY, f64::max);
            let in_range = |t: &Tensor, zero_ok: bool| t.data().iter()
                .all(|&v| (v >= lo - 1e-15 && v <= hi + 1e-15) || (zero_ok && v == 0.0));
            let outs = [
                (hflip(&a, 0.5, &mut rng).unwrap(), false),
                (pad_crop(&a, 2, &mut rng).unwrap(), true),
                (cutout(&a, 3, &mut rng).unwrap(), true),
                (mixup(&a, &b, lambda).unwrap(), false),
                (cutmix(&a, &b, lambda, &mut rng).unwrap().0, false),
            ];
            for (o, zero_ok) in &outs {
                prop_assert_eq!(o.shape(), a.shape());
                prop_assert!(in_range(o, *zero_ok));
            }
        }

        #[test]
        fn mixup_is_symmetric(lambda in 0.0f64..=1.0) {
            let a = img(1, 3, 3, |i| (i as f64).sin());
            let b = img(1, 3, 3, |i| (i as f64).cos());
            // exact: both sides evaluate the same two products
            let l = mixup(&a, &b, lambda).unwrap();
            let r = mixup(&b, &a, 1.0 - lambda).unwrap();
            for (x, y) in l.data().iter().zip(r.data()) {
                prop_assert!((x - y).abs() <= 4.0 * f64::EPSILON);
            }
        }

        #[test]
        fn cutmix_pixels_come_from_either_source(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
            let mut rng = rng_from(seed, &[]);
            let a = img(2, 7, 5, |_| 1.0);
            let b = img(2, 7, 5, |_| 2.0);
            let (o, ratio) = cutmix(&a, &b, lambda, &mut rng).unwrap();
            prop_assert!(o.data().iter().all(|&v| v == 1.0 || v == 2.0));
            let kept = o.data().iter().filter(|&&v| v == 1.0).count() as f64 / o.len() as f64;
            prop_assert!((kept - ratio).abs() < 1e-12);
        }
    }
}
