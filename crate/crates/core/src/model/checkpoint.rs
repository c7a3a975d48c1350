//! Binary checkpoint format.
//!
//! ```text
//! "FCNSEG01"
//! u32 version | u32 H | u32 W | u32 down blocks | u32 up blocks | u32 layers
//! per layer:  u8 kind, then its shape as u32s
//!               1 conv    out in kh kw sh sw ph pw
//!               2 deconv  in out kh kw sh sw ph pw
//!               3 bnorm   channels
//!               4 maxpool kh kw
//!               5 relu / 6 sigmoid  (no shape)
//! u64 iteration | f64 alpha | f64 beta
//! per layer parameters as f32: weight, bias | gamma, shift, running mean, running var
//! ```
//!
//! All integers and reals are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{BatchNorm, Conv2d, Deconv2d};
use crate::trainloop::LossWeights;

use super::{build_fcn, ArchitectureSpec, DownBlock, FcnModel, Layer, Mode, UpBlock};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FCNSEG01";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_CONV: u8 = 1;
const TAG_DECONV: u8 = 2;
const TAG_BNORM: u8 = 3;
const TAG_POOL: u8 = 4;
const TAG_RELU: u8 = 5;
const TAG_SIGMOID: u8 = 6;

/// A trained (or freshly initialized) model plus the training state that
/// travels with it.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub model: FcnModel<f32>,
    pub iteration: u64,
    pub loss_weights: LossWeights,
}

fn descriptor(layer: &Layer<f32>) -> (u8, Vec<u32>) {
    let u = |v: usize| v as u32;
    match layer {
        Layer::Conv(c) => {
            let s = &c.weight.shape;
            (
                TAG_CONV,
                vec![
                    u(s[0]),
                    u(s[1]),
                    u(s[2]),
                    u(s[3]),
                    u(c.stride.0),
                    u(c.stride.1),
                    u(c.pad.0),
                    u(c.pad.1),
                ],
            )
        }
        Layer::Deconv(d) => {
            let s = &d.weight.shape;
            (
                TAG_DECONV,
                vec![
                    u(s[0]),
                    u(s[1]),
                    u(s[2]),
                    u(s[3]),
                    u(d.stride.0),
                    u(d.stride.1),
                    u(d.pad.0),
                    u(d.pad.1),
                ],
            )
        }
        Layer::BatchNorm(bn) => (TAG_BNORM, vec![u(bn.channels())]),
        Layer::MaxPool((kh, kw)) => (TAG_POOL, vec![u(*kh), u(*kw)]),
        Layer::Relu => (TAG_RELU, vec![]),
        Layer::Sigmoid => (TAG_SIGMOID, vec![]),
    }
}

fn push_reals(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a checkpoint to bytes.
pub fn write_checkpoint(ckpt: &ModelCheckpoint) -> Vec<u8> {
    let model = &ckpt.model;
    let spec = model.spec();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        spec.input_height as u32,
        spec.input_width as u32,
        spec.down_blocks.len() as u32,
        spec.up_blocks.len() as u32,
        model.layers().len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for layer in model.layers() {
        let (tag, shape) = descriptor(layer);
        out.push(tag);
        for v in shape {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&ckpt.iteration.to_le_bytes());
    out.extend_from_slice(&ckpt.loss_weights.alpha().to_le_bytes());
    out.extend_from_slice(&ckpt.loss_weights.beta().to_le_bytes());
    for layer in model.layers() {
        match layer {
            Layer::Conv(c) => {
                push_reals(&mut out, &c.weight.value);
                push_reals(&mut out, &c.bias.value);
            }
            Layer::Deconv(d) => {
                push_reals(&mut out, &d.weight.value);
                push_reals(&mut out, &d.bias.value);
            }
            Layer::BatchNorm(bn) => {
                push_reals(&mut out, &bn.gamma.value);
                push_reals(&mut out, &bn.beta.value);
                push_reals(&mut out, &bn.running_mean);
                push_reals(&mut out, &bn.running_var);
            }
            _ => {}
        }
    }
    out
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!("truncated while reading {what}"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn reals(&mut self, dst: &mut [f32], what: &str) -> Result<()> {
        let raw = self.take(4 * dst.len(), what)?;
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(())
    }
}

/// Parses a checkpoint. The architecture is reconstructed from the layer
/// descriptors, so the model's width is whatever the checkpoint says.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // negated form also rejects NaN
pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        r.pos = 0;
        return r.fail("bad magic, not an FCNSEG01 checkpoint");
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        r.pos -= 4;
        return r.fail(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"));
    }
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let n_down = r.u32("down block count")? as usize;
    let n_up = r.u32("up block count")? as usize;
    let n_layers = r.u32("layer count")? as usize;
    if n_layers != 4 * n_down + 3 * n_up {
        return r.fail(format!(
            "{n_layers} layers inconsistent with {n_down} down and {n_up} up blocks"
        ));
    }

    let mut descriptors = Vec::with_capacity(n_layers);
    let header_start = r.pos;
    for _ in 0..n_layers {
        let tag = r.u8("layer kind")?;
        let arity = match tag {
            TAG_CONV | TAG_DECONV => 8,
            TAG_BNORM => 1,
            TAG_POOL => 2,
            TAG_RELU | TAG_SIGMOID => 0,
            other => {
                r.pos -= 1;
                return r.fail(format!("unknown layer kind {other}"));
            }
        };
        let mut shape = Vec::with_capacity(arity);
        for _ in 0..arity {
            shape.push(r.u32("layer shape")?);
        }
        descriptors.push((tag, shape));
    }

    let spec = spec_from_descriptors(height, width, n_down, &descriptors).or_else(|m| {
        r.pos = header_start;
        r.fail(m)
    })?;
    let mut model = build_fcn::<f32>(&spec, 0).map_err(|e| Error::Format {
        offset: header_start,
        message: format!("invalid architecture: {e}"),
    })?;
    let expected: Vec<_> = model.layers().iter().map(descriptor).collect();
    if expected != descriptors {
        r.pos = header_start;
        return r.fail("layer descriptors do not describe a supported network");
    }

    let iteration = r.u64("iteration")?;
    let alpha = r.f64("alpha")?;
    let beta_pos = r.pos;
    let beta = r.f64("beta")?;
    let loss_weights = match LossWeights::new(alpha) {
        Ok(w) if w.beta() == beta => w,
        _ => {
            r.pos = beta_pos;
            return r.fail(format!("loss weights ({alpha}, {beta}) are not a valid pair"));
        }
    };

    for layer in model.layers_mut() {
        match layer {
            Layer::Conv(Conv2d { weight, bias, .. }) | Layer::Deconv(Deconv2d { weight, bias, .. }) => {
                r.reals(&mut weight.value, "weights")?;
                r.reals(&mut bias.value, "bias")?;
            }
            Layer::BatchNorm(BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            }) => {
                r.reals(&mut gamma.value, "batch-norm scale")?;
                r.reals(&mut beta.value, "batch-norm shift")?;
                r.reals(running_mean, "running mean")?;
                let at = r.pos;
                r.reals(running_var, "running variance")?;
                if running_var.iter().any(|v| !(*v >= 0.0)) {
                    r.pos = at;
                    return r.fail("negative running variance");
                }
            }
            _ => {}
        }
    }
    if r.pos != bytes.len() {
        return r.fail(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    model.set_mode(Mode::Infer);
    Ok(ModelCheckpoint {
        model,
        iteration,
        loss_weights,
    })
}

fn spec_from_descriptors(
    height: usize,
    width: usize,
    n_down: usize,
    descriptors: &[(u8, Vec<u32>)],
) -> std::result::Result<ArchitectureSpec, String> {
    let mut down_blocks = Vec::new();
    let mut up_blocks = Vec::new();
    let (down, up) = descriptors.split_at((4 * n_down).min(descriptors.len()));
    for block in down.chunks(4) {
        match block {
            [(TAG_CONV, c), (TAG_BNORM, _), (TAG_POOL, p), (TAG_RELU, _)] => down_blocks.push(DownBlock {
                out_channels: c[0] as usize,
                conv_kernel: (c[2] as usize, c[3] as usize),
                pool_window: (p[0] as usize, p[1] as usize),
            }),
            _ => return Err("malformed down block".into()),
        }
    }
    for block in up.chunks(3) {
        match block {
            [(TAG_DECONV, d), (TAG_BNORM, _), (TAG_RELU | TAG_SIGMOID, _)] => up_blocks.push(UpBlock {
                out_channels: d[1] as usize,
                deconv_kernel: (d[2] as usize, d[3] as usize),
                stride: (d[4] as usize, d[5] as usize),
            }),
            _ => return Err("malformed up block".into()),
        }
    }
    Ok(ArchitectureSpec {
        input_height: height,
        input_width: width,
        down_blocks,
        up_blocks,
    })
}
