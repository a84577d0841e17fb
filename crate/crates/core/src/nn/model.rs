use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerSpec, Param};
use crate::error::{KdError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Compact description of the small CNNs used for teachers and students:
/// `[conv3x3 -> relu -> maxpool2]` per entry of `channels`, then global
/// average pooling and a dense classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub classes: usize,
}

impl CnnSpec {
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut prev = self.in_channels;
        for &c in &self.channels {
            specs.push(LayerSpec::Conv3x3 {
                in_channels: prev,
                out_channels: c,
            });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::MaxPool2);
            prev = c;
        }
        specs.push(LayerSpec::GlobalAvgPool);
        specs.push(LayerSpec::Dense {
            inputs: prev,
            outputs: self.classes,
        });
        specs
    }
}

/// A feed-forward stack of layers producing class logits.
#[derive(Debug, Clone)]
pub struct Model {
    layers: Vec<Layer>,
    classes: usize,
}

impl Model {
    pub fn from_specs(specs: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        let layers = specs.iter().map(|&s| Layer::init(s, rng)).collect();
        Self::from_layers(layers)
    }

    pub fn cnn(spec: &CnnSpec, rng: &mut Rng) -> Result<Self> {
        if spec.classes < 2 {
            return Err(KdError::invalid("a classifier needs at least 2 classes"));
        }
        Self::from_specs(&spec.layers(), rng)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let classes = match layers.last().map(Layer::spec) {
            Some(LayerSpec::Dense { outputs, .. }) => outputs,
            _ => return Err(KdError::invalid("model must end with a dense layer")),
        };
        let mut channels: Option<usize> = None;
        for l in &layers {
            match l.spec() {
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                } => {
                    if channels.is_some_and(|c| c != in_channels) {
                        return Err(KdError::invalid(format!(
                            "conv expects {in_channels} channels but receives {}",
                            channels.unwrap()
                        )));
                    }
                    channels = Some(out_channels);
                }
                LayerSpec::Dense { inputs, outputs } => {
                    if channels.is_some_and(|c| c != inputs) {
                        return Err(KdError::invalid(format!(
                            "dense expects {inputs} inputs but receives {}",
                            channels.unwrap()
                        )));
                    }
                    channels = Some(outputs);
                }
                _ => {}
            }
        }
        Ok(Self { layers, classes })
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.layers.iter().flat_map(|l| l.params().iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut().iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|p| p.value.len()).sum()
    }

    /// Recording forward pass; must precede [`Model::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.layers[0].forward(x, true)?;
        for l in &mut self.layers[1..] {
            h = l.forward(&h, true)?;
        }
        h.ensure_finite("model forward")?;
        Ok(h)
    }

    /// Inference-only forward pass; records nothing.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.layers[0].infer(x)?;
        for l in &self.layers[1..] {
            h = l.infer(&h)?;
        }
        h.ensure_finite("model predict")?;
        Ok(h)
    }

    /// [`Model::predict`] over a large batch, `chunk` rows at a time.
    pub fn predict_chunked(&self, x: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = x.rows();
        if n <= chunk {
            return self.predict(x);
        }
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let idx: Vec<usize> = (start..end).collect();
            parts.push(self.predict(&x.select_rows(&idx))?);
            start = end;
        }
        Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())
    }

    /// Back-propagates `grad_logits` through the recorded pass, accumulating
    /// into each parameter's `grad`.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        grad_logits.ensure_finite("loss gradient")?;
        let mut g = grad_logits.clone();
        let n = self.layers.len();
        for (i, l) in self.layers.iter_mut().enumerate().rev() {
            match l.backward(&g, i > 0)? {
                Some(next) => g = next,
                None => debug_assert_eq!(i, 0, "only the first layer skips its input gradient"),
            }
        }
        debug_assert!(n > 0);
        for p in self.params() {
            p.grad.ensure_finite("parameter gradient")?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn clear_records(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_record);
    }

    /// Flattened copy of every parameter value, in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params()
            .flat_map(|p| p.grad.data().iter().copied())
            .collect()
    }
}
