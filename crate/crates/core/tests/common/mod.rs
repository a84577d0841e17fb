//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

pub mod oracles;

use kdaug::augment::{compose_batch, DAScheme, LabeledBatch, LossMode, SchemeKind};
use kdaug::distill::composed_kd_loss;
use kdaug::nn::{softmax_cross_entropy, softmax_temp, CnnSpec, Layer, LayerSpec, Model};
use kdaug::rng::{rng_from, Rng};
use kdaug::Tensor;
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients
/// from turning rounding noise into large relative errors.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = work[i];
            work[i] = orig + FD_STEP;
            let up = f(&work);
            work[i] = orig - FD_STEP;
            let down = f(&work);
            work[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Scalar probe `sum(w * layer(x))` for a fixed random `w`.
fn probe(layer: &Layer, x: &Tensor, w: &Tensor) -> f64 {
    let y = layer.infer(x).unwrap();
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Worst relative error over the input gradient and every parameter
/// gradient of one layer.
pub fn layer_gradcheck(spec: LayerSpec, input_shape: &[usize], seed: u64) -> f64 {
    let mut rng = rng_from(seed, &[]);
    let mut layer = Layer::init(spec, &mut rng);
    let mut x = random_tensor(input_shape, &mut rng);
    if matches!(spec, LayerSpec::MaxPool2) {
        // distinct values keep every pooling window away from a tie
        let n = x.len();
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = ((i * 7919) % n) as f64 / n as f64 + 0.001 * *v;
        }
    }
    if matches!(spec, LayerSpec::Relu) {
        // keep inputs away from the kink
        for v in x.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
    }
    let out = layer.forward(&x, true).unwrap();
    let w = random_tensor(out.shape(), &mut rng);
    let gx = layer.backward(&w, true).unwrap().expect("input gradient requested");

    let ng = numeric_grad(x.data(), |v| {
        probe(&layer, &Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap(), &w)
    });
    let mut worst = max_rel_err(gx.data(), &ng);

    for p in 0..layer.params().len() {
        let analytic = layer.params()[p].grad.data().to_vec();
        let values = layer.params()[p].value.data().to_vec();
        let mut probe_layer = layer.clone();
        let ng = numeric_grad(&values, |v| {
            probe_layer.params_mut()[p].value.data_mut().copy_from_slice(v);
            probe(&probe_layer, &x, &w)
        });
        worst = worst.max(max_rel_err(&analytic, &ng));
    }
    worst
}

/// Gradient of mean softmax cross-entropy with respect to the logits.
pub fn cross_entropy_gradcheck(seed: u64) -> f64 {
    let mut rng = rng_from(seed, &[]);
    let logits = random_tensor(&[5, 4], &mut rng);
    let labels = vec![0, 3, 1, 2, 3];
    let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
    let ng = numeric_grad(logits.data(), |v| {
        softmax_cross_entropy(&Tensor::new(vec![5, 4], v.to_vec()).unwrap(), &labels)
            .unwrap()
            .0
    });
    max_rel_err(g.data(), &ng)
}

/// Gradient of the composed KD loss with respect to the student logits.
pub fn composed_kd_gradcheck(seed: u64) -> f64 {
    let mut rng = rng_from(seed, &[]);
    let s = random_tensor(&[6, 5], &mut rng);
    let t = Tensor::from_fn(&[6, 5], |_| rng.random_range(-3.0..3.0));
    let labels = vec![1, 4, 0, 1, 4, 0];
    let modes = [LossMode::CePlusKl; 3]
        .into_iter()
        .chain([LossMode::KlOnly; 3])
        .collect::<Vec<_>>();
    let (_, g) = composed_kd_loss(&s, &t, &labels, &modes, 0.9, 4.0).unwrap();
    let ng = numeric_grad(s.data(), |v| {
        composed_kd_loss(&Tensor::new(vec![6, 5], v.to_vec()).unwrap(), &t, &labels, &modes, 0.9, 4.0)
            .unwrap()
            .0
    });
    max_rel_err(g.data(), &ng)
}

/// End-to-end parameter gradient of a small CNN under cross-entropy.
pub fn model_gradcheck(seed: u64) -> f64 {
    let mut rng = rng_from(seed, &[]);
    let spec = CnnSpec {
        in_channels: 2,
        channels: vec![3, 4],
        classes: 3,
    };
    let mut model = Model::cnn(&spec, &mut rng).unwrap();
    let x = random_tensor(&[2, 2, 8, 8], &mut rng);
    let labels = vec![0, 2];
    model.zero_grad();
    let logits = model.forward(&x).unwrap();
    let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
    model.backward(&g).unwrap();
    let analytic = model.flat_grads();
    let flat = model.flat_params();
    let mut probe_model = model.clone();
    let ng = numeric_grad(&flat, |v| {
        let mut off = 0;
        for p in probe_model.params_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&v[off..off + n]);
            off += n;
        }
        softmax_cross_entropy(&probe_model.predict(&x).unwrap(), &labels).unwrap().0
    });
    max_rel_err(&analytic, &ng)
}

/// Every gradient check with its name and worst relative error.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    vec![
        (
            "conv3x3 on 8x8",
            layer_gradcheck(LayerSpec::Conv3x3 { in_channels: 2, out_channels: 3 }, &[2, 2, 8, 8], 1),
        ),
        ("dense", layer_gradcheck(LayerSpec::Dense { inputs: 7, outputs: 4 }, &[3, 7], 2)),
        ("relu", layer_gradcheck(LayerSpec::Relu, &[2, 3, 4, 4], 3)),
        ("maxpool2", layer_gradcheck(LayerSpec::MaxPool2, &[2, 2, 6, 6], 4)),
        ("global avg pool", layer_gradcheck(LayerSpec::GlobalAvgPool, &[2, 3, 4, 4], 5)),
        ("softmax cross-entropy", cross_entropy_gradcheck(6)),
        ("composed KD loss", composed_kd_gradcheck(7)),
        ("whole CNN", model_gradcheck(8)),
    ]
}

/// Logit gradient of plain KD averaged over a batch, written out by hand.
fn plain_kd_grad(s: &Tensor, t: &Tensor, labels: &[usize], alpha: f64, tau: f64) -> Tensor {
    let b = s.rows() as f64;
    let mut g = Tensor::zeros(s.shape());
    for i in 0..s.rows() {
        let p = softmax_temp(s.row(i), 1.0).unwrap();
        let ps = softmax_temp(s.row(i), tau).unwrap();
        let pt = softmax_temp(t.row(i), tau).unwrap();
        for (c, gc) in g.row_mut(i).iter_mut().enumerate() {
            let ce = p[c] - if c == labels[i] { 1.0 } else { 0.0 };
            *gc = ((1.0 - alpha) * ce + alpha * tau * (ps[c] - pt[c])) / b;
        }
    }
    g
}

/// Largest per-parameter gradient difference between an identity-composed
/// batch and plain KD on the original batch.
pub fn duplication_max_diff(seed: u64) -> f64 {
    let mut rng = rng_from(seed, &[]);
    let spec = CnnSpec { in_channels: 3, channels: vec![4], classes: 5 };
    let teacher = Model::cnn(&spec, &mut rng).unwrap();
    let student = Model::cnn(&spec, &mut rng).unwrap();
    let images = random_tensor(&[6, 3, 8, 8], &mut rng);
    let labels = vec![0, 1, 2, 3, 4, 0];
    let batch = LabeledBatch { images: images.clone(), labels: labels.clone() };
    let composed = compose_batch(&batch, &DAScheme::new(SchemeKind::Identity), &mut rng).unwrap();

    let mut a = student.clone();
    a.zero_grad();
    let s = a.forward(&composed.images).unwrap();
    let t = teacher.predict(&composed.images).unwrap();
    let (_, g) = composed_kd_loss(&s, &t, &composed.labels, &composed.loss_mode, 0.9, 4.0).unwrap();
    a.backward(&g).unwrap();

    let mut b = student;
    b.zero_grad();
    let s = b.forward(&images).unwrap();
    let t = teacher.predict(&images).unwrap();
    b.backward(&plain_kd_grad(&s, &t, &labels, 0.9, 4.0)).unwrap();

    a.flat_grads()
        .iter()
        .zip(b.flat_grads())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
