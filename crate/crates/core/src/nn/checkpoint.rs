//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "DGKD"
//! version      u32      1
//! layer_count  u32
//! layers       layer_count entries:
//!                tag u8 (0 conv3x3, 1 dense, 2 relu, 3 maxpool2, 4 global-avg-pool)
//!                conv3x3 / dense only: u32 in, u32 out
//! value_count  u64      number of f64 parameter values that follow
//! payload      value_count x f64 (IEEE-754 LE), layer order, weight before bias,
//!              each tensor row-major
//! ```

use std::path::Path;

use super::layers::{Layer, LayerSpec};
use super::model::Model;
use crate::error::{KdError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DGKD";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let specs = model.specs();
    out.extend_from_slice(&(specs.len() as u32).to_le_bytes());
    for s in &specs {
        match *s {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => {
                out.push(0);
                out.extend_from_slice(&(in_channels as u32).to_le_bytes());
                out.extend_from_slice(&(out_channels as u32).to_le_bytes());
            }
            LayerSpec::Dense { inputs, outputs } => {
                out.push(1);
                out.extend_from_slice(&(inputs as u32).to_le_bytes());
                out.extend_from_slice(&(outputs as u32).to_le_bytes());
            }
            LayerSpec::Relu => out.push(2),
            LayerSpec::MaxPool2 => out.push(3),
            LayerSpec::GlobalAvgPool => out.push(4),
        }
    }
    let values = model.flat_params();
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(KdError::MalformedFile {
                offset: self.pos as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(KdError::MalformedFile {
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(KdError::MalformedFile {
            offset: 4,
            reason: format!("unsupported format version {version}"),
        });
    }
    let count = r.u32("layer count")? as usize;
    let mut specs = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = r.pos;
        let tag = r.take(1, "layer tag")?[0];
        let spec = match tag {
            0 => LayerSpec::Conv3x3 {
                in_channels: r.u32("conv in")? as usize,
                out_channels: r.u32("conv out")? as usize,
            },
            1 => LayerSpec::Dense {
                inputs: r.u32("dense in")? as usize,
                outputs: r.u32("dense out")? as usize,
            },
            2 => LayerSpec::Relu,
            3 => LayerSpec::MaxPool2,
            4 => LayerSpec::GlobalAvgPool,
            t => {
                return Err(KdError::MalformedFile {
                    offset: at as u64,
                    reason: format!("unknown layer tag {t}"),
                })
            }
        };
        specs.push(spec);
    }
    let count_at = r.pos;
    let n = u64::from_le_bytes(r.take(8, "value count")?.try_into().unwrap()) as usize;
    let expected: usize = specs
        .iter()
        .flat_map(|s| s.param_shapes())
        .map(|s| s.iter().product::<usize>())
        .sum();
    if n != expected {
        return Err(KdError::MalformedFile {
            offset: count_at as u64,
            reason: format!("layer spec needs {expected} values, header says {n}"),
        });
    }
    let payload = r.take(n * 8, "parameter payload")?;
    if r.pos != bytes.len() {
        return Err(KdError::MalformedFile {
            offset: r.pos as u64,
            reason: "trailing bytes after payload".into(),
        });
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let tensors = spec
            .param_shapes()
            .into_iter()
            .map(|shape| {
                let len = shape.iter().product();
                Tensor::new(shape, values.by_ref().take(len).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        layers.push(Layer::with_params(spec, tensors)?);
    }
    Model::from_layers(layers)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| KdError::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| KdError::io(path, e))?;
    decode(&bytes)
}
