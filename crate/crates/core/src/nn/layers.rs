//! Layers with hand-written reverse-mode gradients.
//!
//! Each layer records what it needs during a recording forward pass and
//! consumes that record in `backward`, accumulating parameter gradients and
//! optionally returning the gradient with respect to its input.

use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3x3 convolution, stride 1, zero padding 1.
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    /// 2x2 max pooling with stride 2 (odd trailing rows/cols are dropped).
    MaxPool2,
    GlobalAvgPool,
}

impl LayerSpec {
    pub(crate) fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => vec![vec![out_channels, in_channels * 9], vec![out_channels]],
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            _ => Vec::new(),
        }
    }
}

/// A trainable tensor with its gradient accumulator and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            velocity,
        }
    }
}

#[derive(Debug, Clone)]
enum Record {
    Conv { cols: Vec<f64>, in_shape: [usize; 4] },
    Dense { input: Tensor },
    Relu { mask: Vec<bool> },
    MaxPool { argmax: Vec<usize>, in_shape: Vec<usize> },
    Gap { in_shape: [usize; 4] },
}

#[derive(Debug, Clone)]
pub struct Layer {
    spec: LayerSpec,
    params: Vec<Param>,
    record: Option<Record>,
}

impl Layer {
    /// He-normal weights, zero biases.
    pub fn init(spec: LayerSpec, rng: &mut impl rand::Rng) -> Self {
        let params = match spec {
            LayerSpec::Conv3x3 { in_channels, .. } => {
                let std = (2.0 / (in_channels * 9) as f64).sqrt();
                Self::weight_and_bias(&spec, std, rng)
            }
            LayerSpec::Dense { inputs, .. } => {
                let std = (2.0 / inputs as f64).sqrt();
                Self::weight_and_bias(&spec, std, rng)
            }
            _ => Vec::new(),
        };
        Self {
            spec,
            params,
            record: None,
        }
    }

    fn weight_and_bias(spec: &LayerSpec, std: f64, rng: &mut impl rand::Rng) -> Vec<Param> {
        let shapes = spec.param_shapes();
        let w = Tensor::from_fn(&shapes[0], |_| std * rng.sample::<f64, _>(StandardNormal));
        let b = Tensor::zeros(&shapes[1]);
        vec![Param::new(w), Param::new(b)]
    }

    /// Builds a layer around existing parameter values (checkpoint loading).
    pub fn with_params(spec: LayerSpec, values: Vec<Tensor>) -> Result<Self> {
        let shapes = spec.param_shapes();
        if shapes.len() != values.len() {
            return Err(KdError::invalid(format!(
                "{spec:?} expects {} parameter tensors, got {}",
                shapes.len(),
                values.len()
            )));
        }
        for (s, v) in shapes.iter().zip(&values) {
            v.ensure_shape(s)?;
        }
        Ok(Self {
            spec,
            params: values.into_iter().map(Param::new).collect(),
            record: None,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    /// Forward pass. When `record` is true the intermediate state needed by
    /// [`Layer::backward`] is kept.
    pub fn forward(&mut self, x: &Tensor, record: bool) -> Result<Tensor> {
        let (out, rec) = self.forward_impl(x, record)?;
        self.record = rec;
        Ok(out)
    }

    /// Forward pass without recording; usable on a shared reference.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_impl(x, false)?.0)
    }

    fn forward_impl(&self, x: &Tensor, record: bool) -> Result<(Tensor, Option<Record>)> {
        match self.spec {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => {
                let s = dims4(x)?;
                if s[1] != in_channels {
                    return Err(KdError::ShapeMismatch {
                        expected: vec![s[0], in_channels, s[2], s[3]],
                        actual: x.shape().to_vec(),
                    });
                }
                conv_forward(x, s, out_channels, &self.params, record)
            }
            LayerSpec::Dense { inputs, outputs } => {
                let b = x.rows();
                if x.row_len() != inputs {
                    return Err(KdError::ShapeMismatch {
                        expected: vec![b, inputs],
                        actual: x.shape().to_vec(),
                    });
                }
                let w = self.params[0].value.data();
                let bias = self.params[1].value.data();
                let mut out = Tensor::zeros(&[b, outputs]);
                for i in 0..b {
                    let xi = x.row(i);
                    let oi = out.row_mut(i);
                    for (o, dst) in oi.iter_mut().enumerate() {
                        *dst = bias[o] + dot(&w[o * inputs..(o + 1) * inputs], xi);
                    }
                }
                let rec = record.then(|| Record::Dense {
                    input: x.clone().reshape(&[b, inputs]).expect("row_len checked"),
                });
                Ok((out, rec))
            }
            LayerSpec::Relu => {
                let mut out = x.clone();
                out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                let rec = record.then(|| Record::Relu {
                    mask: x.data().iter().map(|&v| v > 0.0).collect(),
                });
                Ok((out, rec))
            }
            LayerSpec::MaxPool2 => {
                let [b, c, h, w] = dims4(x)?;
                let (oh, ow) = (h / 2, w / 2);
                let mut out = Tensor::zeros(&[b, c, oh, ow]);
                let mut argmax = Vec::with_capacity(if record { out.len() } else { 0 });
                let src = x.data();
                let dst = out.data_mut();
                let mut o = 0;
                for plane in 0..b * c {
                    let base = plane * h * w;
                    for y in 0..oh {
                        for xx in 0..ow {
                            let i0 = base + 2 * y * w + 2 * xx;
                            let mut best = i0;
                            for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                                if src[cand] > src[best] {
                                    best = cand;
                                }
                            }
                            dst[o] = src[best];
                            if record {
                                argmax.push(best);
                            }
                            o += 1;
                        }
                    }
                }
                let rec = record.then(|| Record::MaxPool {
                    argmax,
                    in_shape: x.shape().to_vec(),
                });
                Ok((out, rec))
            }
            LayerSpec::GlobalAvgPool => {
                let s = dims4(x)?;
                let hw = s[2] * s[3];
                let out = Tensor::from_fn(&[s[0], s[1]], |i| {
                    x.data()[i * hw..(i + 1) * hw].iter().sum::<f64>() / hw as f64
                });
                Ok((out, record.then_some(Record::Gap { in_shape: s })))
            }
        }
    }

    /// Consumes the recorded forward state, accumulates parameter gradients
    /// and returns the input gradient when `need_input_grad` is set.
    pub fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let record = self.record.take().ok_or(KdError::NoForward)?;
        match (self.spec, record) {
            (
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                },
                Record::Conv { cols, in_shape },
            ) => {
                let [b, _, h, w] = in_shape;
                grad_out.ensure_shape(&[b, out_channels, h, w])?;
                Ok(conv_backward(
                    grad_out,
                    &cols,
                    in_shape,
                    in_channels,
                    out_channels,
                    &mut self.params,
                    need_input_grad,
                ))
            }
            (LayerSpec::Dense { inputs, outputs }, Record::Dense { input }) => {
                let b = input.rows();
                grad_out.ensure_shape(&[b, outputs])?;
                let (wp, rest) = self.params.split_at_mut(1);
                let w = wp[0].value.data();
                let gw = wp[0].grad.data_mut();
                let gb = rest[0].grad.data_mut();
                for i in 0..b {
                    let gi = grad_out.row(i);
                    let xi = input.row(i);
                    for (o, &g) in gi.iter().enumerate() {
                        gb[o] += g;
                        axpy(g, xi, &mut gw[o * inputs..(o + 1) * inputs]);
                    }
                }
                if !need_input_grad {
                    return Ok(None);
                }
                let mut dx = Tensor::zeros(&[b, inputs]);
                for i in 0..b {
                    let gi = grad_out.row(i);
                    let di = dx.row_mut(i);
                    for (o, &g) in gi.iter().enumerate() {
                        axpy(g, &w[o * inputs..(o + 1) * inputs], di);
                    }
                }
                Ok(Some(dx))
            }
            (LayerSpec::Relu, Record::Relu { mask }) => {
                if grad_out.len() != mask.len() {
                    return Err(KdError::invalid("relu gradient length mismatch"));
                }
                if !need_input_grad {
                    return Ok(None);
                }
                let mut dx = grad_out.clone();
                dx.data_mut()
                    .iter_mut()
                    .zip(&mask)
                    .for_each(|(g, &m)| {
                        if !m {
                            *g = 0.0
                        }
                    });
                Ok(Some(dx))
            }
            (LayerSpec::MaxPool2, Record::MaxPool { argmax, in_shape }) => {
                if grad_out.len() != argmax.len() {
                    return Err(KdError::invalid("max-pool gradient length mismatch"));
                }
                if !need_input_grad {
                    return Ok(None);
                }
                let mut dx = Tensor::zeros(&in_shape);
                let d = dx.data_mut();
                for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
                    d[idx] += g;
                }
                Ok(Some(dx))
            }
            (LayerSpec::GlobalAvgPool, Record::Gap { in_shape }) => {
                let [b, c, h, w] = in_shape;
                grad_out.ensure_shape(&[b, c])?;
                if !need_input_grad {
                    return Ok(None);
                }
                let hw = h * w;
                let scale = 1.0 / hw as f64;
                let g = grad_out.data();
                let dx = Tensor::from_fn(&in_shape, |i| g[i / hw] * scale);
                Ok(Some(dx))
            }
            _ => Err(KdError::invalid("layer record does not match layer kind")),
        }
    }

    pub(crate) fn clear_record(&mut self) {
        self.record = None;
    }
}

fn dims4(x: &Tensor) -> Result<[usize; 4]> {
    match *x.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(KdError::invalid(format!(
            "expected a rank-4 tensor, got shape {:?}",
            x.shape()
        ))),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Unfolds one `[c, h, w]` image into `[c*9, h*w]` patch rows.
fn im2col(img: &[f64], c: usize, h: usize, w: usize, col: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &img[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-row gradients back onto the image.
fn col2im(col: &[f64], c: usize, h: usize, w: usize, img: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut img[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

fn conv_forward(
    x: &Tensor,
    [b, c, h, w]: [usize; 4],
    out_channels: usize,
    params: &[Param],
    record: bool,
) -> Result<(Tensor, Option<Record>)> {
    let hw = h * w;
    let k = c * 9;
    let weight = params[0].value.data();
    let bias = params[1].value.data();
    let mut out = Tensor::zeros(&[b, out_channels, h, w]);
    let mut cols = vec![0.0; if record { b * k * hw } else { k * hw }];
    for i in 0..b {
        let col = if record {
            &mut cols[i * k * hw..(i + 1) * k * hw]
        } else {
            &mut cols[..]
        };
        im2col(x.row(i), c, h, w, col);
        let oi = out.row_mut(i);
        for co in 0..out_channels {
            let dst = &mut oi[co * hw..(co + 1) * hw];
            dst.fill(bias[co]);
            let wrow = &weight[co * k..(co + 1) * k];
            for (kk, &wv) in wrow.iter().enumerate() {
                axpy(wv, &col[kk * hw..(kk + 1) * hw], dst);
            }
        }
    }
    let rec = record.then_some(Record::Conv {
        cols,
        in_shape: [b, c, h, w],
    });
    Ok((out, rec))
}

fn conv_backward(
    grad_out: &Tensor,
    cols: &[f64],
    in_shape: [usize; 4],
    in_channels: usize,
    out_channels: usize,
    params: &mut [Param],
    need_input_grad: bool,
) -> Option<Tensor> {
    let [b, _, h, w] = in_shape;
    let hw = h * w;
    let k = in_channels * 9;
    let (wp, rest) = params.split_at_mut(1);
    let weight = wp[0].value.data();
    let gw = wp[0].grad.data_mut();
    let gb = rest[0].grad.data_mut();
    let mut dx = need_input_grad.then(|| Tensor::zeros(&in_shape));
    let mut dcol = vec![0.0; if need_input_grad { k * hw } else { 0 }];
    for i in 0..b {
        let col = &cols[i * k * hw..(i + 1) * k * hw];
        let go = grad_out.row(i);
        for co in 0..out_channels {
            let g = &go[co * hw..(co + 1) * hw];
            gb[co] += g.iter().sum::<f64>();
            let gwrow = &mut gw[co * k..(co + 1) * k];
            for (kk, gwv) in gwrow.iter_mut().enumerate() {
                *gwv += dot(g, &col[kk * hw..(kk + 1) * hw]);
            }
        }
        if let Some(dx) = dx.as_mut() {
            dcol.fill(0.0);
            for co in 0..out_channels {
                let g = &go[co * hw..(co + 1) * hw];
                for kk in 0..k {
                    axpy(weight[co * k + kk], g, &mut dcol[kk * hw..(kk + 1) * hw]);
                }
            }
            col2im(&dcol, in_channels, h, w, dx.row_mut(i));
        }
    }
    dx
}
