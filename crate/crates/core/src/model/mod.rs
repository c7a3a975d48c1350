//! The width-restoring fully convolutional network: down blocks shrink a
//! `1 × H × W` text-line image to a `C × 1 × W/32` feature map, up blocks
//! expand the width back to `W` while keeping height 1, and a final
//! sigmoid yields one splitting-point probability per column.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{
    maxpool_backward, maxpool_forward, relu_backward, relu_forward, sigmoid_backward, sigmoid_forward, BatchNorm,
    BnCache, Conv2d, Deconv2d, Param, Real, Tensor4,
};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, ModelCheckpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

pub const DEFAULT_HEIGHT: usize = 48;
pub const DEFAULT_WIDTH: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownBlock {
    pub out_channels: usize,
    pub conv_kernel: (usize, usize),
    pub pool_window: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpBlock {
    pub out_channels: usize,
    pub deconv_kernel: (usize, usize),
    pub stride: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub down_blocks: Vec<DownBlock>,
    pub up_blocks: Vec<UpBlock>,
}

impl ArchitectureSpec {
    /// Five down blocks (3×3 convs, pools collapsing 48 rows to 1 and
    /// dividing the width by 32) and five up blocks (1×4 deconvs doubling
    /// the width).
    pub fn standard(input_width: usize) -> Self {
        let channels = [16, 32, 64, 128, 256];
        let pool_heights = [2, 2, 2, 2, 3];
        let down_blocks = channels
            .iter()
            .zip(pool_heights)
            .map(|(&c, ph)| DownBlock {
                out_channels: c,
                conv_kernel: (3, 3),
                pool_window: (ph, 2),
            })
            .collect();
        let up_blocks = [128, 64, 32, 16, 1]
            .iter()
            .map(|&c| UpBlock {
                out_channels: c,
                deconv_kernel: (1, 4),
                stride: (1, 2),
            })
            .collect();
        Self {
            input_height: DEFAULT_HEIGHT,
            input_width,
            down_blocks,
            up_blocks,
        }
    }

    /// Two down and two up blocks over a 4×32 input; small enough for an
    /// exhaustive finite-difference check.
    pub fn tiny() -> Self {
        Self {
            input_height: 4,
            input_width: 32,
            down_blocks: vec![
                DownBlock {
                    out_channels: 3,
                    conv_kernel: (3, 3),
                    pool_window: (2, 2),
                },
                DownBlock {
                    out_channels: 4,
                    conv_kernel: (3, 3),
                    pool_window: (2, 2),
                },
            ],
            up_blocks: vec![
                UpBlock {
                    out_channels: 3,
                    deconv_kernel: (1, 4),
                    stride: (1, 2),
                },
                UpBlock {
                    out_channels: 1,
                    deconv_kernel: (1, 4),
                    stride: (1, 2),
                },
            ],
        }
    }

    /// Input widths must be a multiple of this (32 for the standard spec).
    pub fn width_quantum(&self) -> usize {
        self.down_blocks.iter().map(|b| b.pool_window.1).product()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.down_blocks.is_empty() || self.up_blocks.is_empty() {
            return cfg("need at least one down block and one up block".into());
        }
        for (i, b) in self.down_blocks.iter().enumerate() {
            let (kh, kw) = b.conv_kernel;
            if b.out_channels == 0 || kh % 2 == 0 || kw % 2 == 0 {
                return cfg(format!("down block {i}: channels must be >= 1 and kernel dims odd"));
            }
            if b.pool_window.0 == 0 || b.pool_window.1 == 0 {
                return cfg(format!("down block {i}: pool window must be positive"));
            }
        }
        for (i, b) in self.up_blocks.iter().enumerate() {
            let (kh, kw) = b.deconv_kernel;
            if b.out_channels == 0 || b.stride.1 == 0 {
                return cfg(format!("up block {i}: channels and stride must be positive"));
            }
            if b.stride.0 != 1 || kh % 2 == 0 {
                return cfg(format!(
                    "up block {i}: must keep height (row stride 1, odd kernel height)"
                ));
            }
            if kw < b.stride.1 || (kw - b.stride.1) % 2 != 0 {
                return cfg(format!(
                    "up block {i}: kernel width {kw} cannot exactly multiply width by {}",
                    b.stride.1
                ));
            }
        }
        if self.up_blocks.last().map(|b| b.out_channels) != Some(1) {
            return cfg("last up block must have exactly one output channel".into());
        }
        let pool_h: usize = self.down_blocks.iter().map(|b| b.pool_window.0).product();
        if pool_h != self.input_height {
            return cfg(format!(
                "pool heights multiply to {pool_h} but input height is {}",
                self.input_height
            ));
        }
        let quantum = self.width_quantum();
        let up: usize = self.up_blocks.iter().map(|b| b.stride.1).product();
        if up != quantum {
            return cfg(format!("pool widths shrink by {quantum} but up strides expand by {up}"));
        }
        if self.input_width == 0 || !self.input_width.is_multiple_of(quantum) {
            return cfg(format!(
                "input width {} is not a positive multiple of {quantum}",
                self.input_width
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Deconv(Deconv2d<T>),
    BatchNorm(BatchNorm<T>),
    MaxPool((usize, usize)),
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone)]
enum Cache<T> {
    Input(Tensor4<T>),
    Bn(BnCache<T>),
    Pool { argmax: Vec<usize>, dims: [usize; 4] },
    Output(Tensor4<T>),
}

#[derive(Debug, Clone)]
pub struct FcnModel<T> {
    spec: ArchitectureSpec,
    layers: Vec<Layer<T>>,
    mode: Mode,
    caches: Option<Vec<Cache<T>>>,
}

fn he_param<T: Real>(shape: Vec<usize>, fan_in: f64, rng: &mut ChaCha8Rng) -> Param<T> {
    let std = (2.0 / fan_in).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z * std)
        })
        .collect();
    Param::new(shape, values)
}

/// Builds a network for `spec` with He fan-in initialization drawn from a
/// generator seeded by `seed`.
pub fn build_fcn<T: Real>(spec: &ArchitectureSpec, seed: u64) -> Result<FcnModel<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut channels = 1;
    for b in &spec.down_blocks {
        let (kh, kw) = b.conv_kernel;
        let fan_in = (channels * kh * kw) as f64;
        let weight = he_param(vec![b.out_channels, channels, kh, kw], fan_in, &mut rng);
        let bias = Param::zeros(vec![b.out_channels]);
        layers.push(Layer::Conv(Conv2d::new(
            weight,
            bias,
            (1, 1),
            ((kh - 1) / 2, (kw - 1) / 2),
        )?));
        layers.push(Layer::BatchNorm(BatchNorm::new(b.out_channels)));
        layers.push(Layer::MaxPool(b.pool_window));
        layers.push(Layer::Relu);
        channels = b.out_channels;
    }
    for (i, b) in spec.up_blocks.iter().enumerate() {
        let (kh, kw) = b.deconv_kernel;
        // each output position receives kh·kw/stride taps per input channel
        let fan_in = (channels * kh * kw) as f64 / (b.stride.0 * b.stride.1) as f64;
        let weight = he_param(vec![channels, b.out_channels, kh, kw], fan_in, &mut rng);
        let bias = Param::zeros(vec![b.out_channels]);
        let pad = ((kh - 1) / 2, (kw - b.stride.1) / 2);
        layers.push(Layer::Deconv(Deconv2d::new(weight, bias, b.stride, pad)?));
        layers.push(Layer::BatchNorm(BatchNorm::new(b.out_channels)));
        let last = i + 1 == spec.up_blocks.len();
        layers.push(if last { Layer::Sigmoid } else { Layer::Relu });
        channels = b.out_channels;
    }
    Ok(FcnModel {
        spec: spec.clone(),
        layers,
        mode: Mode::Train,
        caches: None,
    })
}

impl<T: Real> FcnModel<T> {
    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.caches = None;
    }

    fn check_input(&self, batch: &Tensor4<T>) -> Result<()> {
        let [_, c, h, w] = batch.dims();
        let q = self.spec.width_quantum();
        if c != 1 || h != self.spec.input_height {
            return Err(shape_err!(
                "model expects B x 1 x {} x W input, got {:?}",
                self.spec.input_height,
                batch.dims()
            ));
        }
        if w == 0 || w % q != 0 {
            return Err(shape_err!("input width {w} is not a positive multiple of {q}"));
        }
        Ok(())
    }

    /// Shapes after every layer for an input of `dims`, first entry being
    /// the input itself.
    pub fn layer_shapes(&self, dims: [usize; 4]) -> Result<Vec<[usize; 4]>> {
        let mut shapes = vec![dims];
        let mut cur = dims;
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(c) => c.out_dims(cur)?,
                Layer::Deconv(d) => d.out_dims(cur)?,
                Layer::MaxPool((kh, kw)) => {
                    if !cur[2].is_multiple_of(*kh) || !cur[3].is_multiple_of(*kw) {
                        return Err(shape_err!("pool {kh}x{kw} does not tile {:?}", cur));
                    }
                    [cur[0], cur[1], cur[2] / kh, cur[3] / kw]
                }
                _ => cur,
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Runs the network in the current mode. In train mode batch statistics
    /// are used and activations are kept for [`FcnModel::backward`].
    ///
    /// Returns a `B × 1 × 1 × W` tensor of probabilities.
    pub fn forward(&mut self, batch: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self.mode {
            Mode::Infer => self.predict(batch),
            Mode::Train => self.forward_train(batch),
        }
    }

    fn forward_train(&mut self, batch: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(batch)?;
        self.caches = None;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &mut self.layers {
            x = match layer {
                Layer::Conv(c) => {
                    let y = c.forward(&x)?;
                    caches.push(Cache::Input(x));
                    y
                }
                Layer::Deconv(d) => {
                    let y = d.forward(&x)?;
                    caches.push(Cache::Input(x));
                    y
                }
                Layer::BatchNorm(bn) => {
                    let (y, cache) = bn.forward_train(&x)?;
                    caches.push(Cache::Bn(cache));
                    y
                }
                Layer::MaxPool(window) => {
                    let (y, argmax) = maxpool_forward(&x, *window)?;
                    caches.push(Cache::Pool { argmax, dims: x.dims() });
                    y
                }
                Layer::Relu => {
                    let y = relu_forward(&x);
                    caches.push(Cache::Output(y.clone()));
                    y
                }
                Layer::Sigmoid => {
                    let y = sigmoid_forward(&x);
                    caches.push(Cache::Output(y.clone()));
                    y
                }
            };
        }
        self.caches = Some(caches);
        Ok(x)
    }

    /// Inference-mode forward pass (running batch-norm statistics); does
    /// not touch the model.
    pub fn predict(&self, batch: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(c) => c.forward(&x)?,
                Layer::Deconv(d) => d.forward(&x)?,
                Layer::BatchNorm(bn) => bn.forward_infer(&x)?.0,
                Layer::MaxPool(window) => maxpool_forward(&x, *window)?.0,
                Layer::Relu => relu_forward(&x),
                Layer::Sigmoid => sigmoid_forward(&x),
            };
        }
        Ok(x)
    }

    /// Back-propagates `grad_out` (gradient of the loss w.r.t. the output
    /// probabilities) through the last train-mode forward pass, adding into
    /// every parameter gradient. Returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let caches = self
            .caches
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a preceding train-mode forward".into()))?;
        let mut g = grad_out.clone();
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            g = match (layer, cache) {
                (Layer::Conv(c), Cache::Input(x)) => c.backward(x, &g)?,
                (Layer::Deconv(d), Cache::Input(x)) => d.backward(x, &g)?,
                (Layer::BatchNorm(bn), Cache::Bn(cache)) => bn.backward(cache, &g)?,
                (Layer::MaxPool(_), Cache::Pool { argmax, dims }) => maxpool_backward(argmax, *dims, &g)?,
                (Layer::Relu, Cache::Output(y)) => relu_backward(y, &g)?,
                (Layer::Sigmoid, Cache::Output(y)) => sigmoid_backward(y, &g)?,
                _ => return Err(Error::State("layer cache out of sync".into())),
            };
        }
        Ok(g)
    }

    /// All trainable parameters in a fixed order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&c.weight, &c.bias]),
                Layer::Deconv(d) => out.extend([&d.weight, &d.bias]),
                Layer::BatchNorm(bn) => out.extend([&bn.gamma, &bn.beta]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&mut c.weight, &mut c.bias]),
                Layer::Deconv(d) => out.extend([&mut d.weight, &mut d.bias]),
                Layer::BatchNorm(bn) => out.extend([&mut bn.gamma, &mut bn.beta]),
                _ => {}
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Splits a `B × 1 × 1 × W` output into one probability row per sample.
pub fn rows<T: Real>(output: &Tensor4<T>) -> Vec<Vec<T>> {
    let w = output.sample_len();
    output.data().chunks(w.max(1)).map(<[T]>::to_vec).collect()
}

/// Packs binary images (`0`/`1` bytes, all `height × width`) into a model
/// input batch.
pub fn batch_from_images<T: Real>(images: &[&[u8]], height: usize, width: usize) -> Result<Tensor4<T>> {
    let mut data = Vec::with_capacity(images.len() * height * width);
    for img in images {
        if img.len() != height * width {
            return Err(shape_err!(
                "image has {} pixels, expected {}x{}",
                img.len(),
                height,
                width
            ));
        }
        data.extend(img.iter().map(|&v| if v != 0 { T::one() } else { T::zero() }));
    }
    Tensor4::from_vec([images.len(), 1, height, width], data)
}
