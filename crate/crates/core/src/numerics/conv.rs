use rayon::prelude::*;

use crate::error::{shape_err, Result};

use super::{parallel_enabled, Param, Real, Tensor4};

/// Runs `f` for every batch index, in parallel when enabled. The returned
/// vector is always in batch order.
pub(super) fn per_sample<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    if parallel_enabled() && n > 1 {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Sliding-window geometry of a convolution over one sample.
#[derive(Debug, Clone, Copy)]
struct Window {
    channels: usize,
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    out_h: usize,
    out_w: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Calls `f(col_index, input_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let cols = self.cols();
        for c in 0..self.channels {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let base = row * cols;
                    for oh in 0..self.out_h {
                        let ih = (oh * self.sh + i) as isize - self.ph as isize;
                        if ih < 0 || ih >= self.in_h as isize {
                            continue;
                        }
                        let in_row = (c * self.in_h + ih as usize) * self.in_w;
                        for ow in 0..self.out_w {
                            let iw = (ow * self.sw + j) as isize - self.pw as isize;
                            if iw < 0 || iw >= self.in_w as isize {
                                continue;
                            }
                            f(base + oh * self.out_w + ow, in_row + iw as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let mut col = vec![T::zero(); self.rows() * self.cols()];
        self.for_each_tap(|ci, xi| col[ci] = x[xi]);
        col
    }

    fn col2im<T: Real>(&self, col: &[T], x: &mut [T]) {
        self.for_each_tap(|ci, xi| x[xi] = x[xi] + col[ci]);
    }
}

fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

fn sum_channels<T: Real>(grad: &[T], channels: usize) -> Vec<T> {
    let per = grad.len() / channels.max(1);
    (0..channels)
        .map(|c| grad[c * per..(c + 1) * per].iter().copied().sum())
        .collect()
}

fn reduce_in_order<T: Real>(parts: impl Iterator<Item = Vec<T>>, len: usize) -> Vec<T> {
    let mut total = vec![T::zero(); len];
    for part in parts {
        for (t, p) in total.iter_mut().zip(&part) {
            *t = *t + *p;
        }
    }
    total
}

/// 2-D cross-correlation with per-output-channel bias.
///
/// Weight layout is `[out_channels, in_channels, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    pub fn new(weight: Param<T>, bias: Param<T>, stride: (usize, usize), pad: (usize, usize)) -> Result<Self> {
        if weight.shape.len() != 4 {
            return Err(shape_err!("conv weight must be 4-D, got {:?}", weight.shape));
        }
        if bias.shape != [weight.shape[0]] {
            return Err(shape_err!(
                "conv bias {:?} does not match {} output channels",
                bias.shape,
                weight.shape[0]
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(shape_err!("conv stride must be >= 1, got {:?}", stride));
        }
        Ok(Self {
            weight,
            bias,
            stride,
            pad,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape[2], self.weight.shape[3])
    }

    fn window(&self, dims: [usize; 4]) -> Result<Window> {
        let [_, c, h, w] = dims;
        if c != self.in_channels() {
            return Err(shape_err!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                c
            ));
        }
        let (kh, kw) = self.kernel();
        let out_h = conv_out_len(h, kh, self.stride.0, self.pad.0);
        let out_w = conv_out_len(w, kw, self.stride.1, self.pad.1);
        match (out_h, out_w) {
            (Some(out_h), Some(out_w)) => Ok(Window {
                channels: c,
                in_h: h,
                in_w: w,
                kh,
                kw,
                sh: self.stride.0,
                sw: self.stride.1,
                ph: self.pad.0,
                pw: self.pad.1,
                out_h,
                out_w,
            }),
            _ => Err(shape_err!(
                "conv kernel {}x{} does not fit padded input {}x{}",
                kh,
                kw,
                h + 2 * self.pad.0,
                w + 2 * self.pad.1
            )),
        }
    }

    pub fn out_dims(&self, in_dims: [usize; 4]) -> Result<[usize; 4]> {
        let g = self.window(in_dims)?;
        Ok([in_dims[0], self.out_channels(), g.out_h, g.out_w])
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.window(x.dims())?;
        let cout = self.out_channels();
        let per = per_sample(x.batch(), |b| {
            let col = g.im2col(x.sample(b));
            let mut out = vec![T::zero(); cout * g.cols()];
            T::gemm(
                cout,
                g.rows(),
                g.cols(),
                &self.weight.value,
                false,
                &col,
                false,
                &mut out,
                false,
            );
            for (c, chunk) in out.chunks_mut(g.cols()).enumerate() {
                let bias = self.bias.value[c];
                chunk.iter_mut().for_each(|v| *v = *v + bias);
            }
            out
        });
        Tensor4::from_vec([x.batch(), cout, g.out_h, g.out_w], per.concat())
    }

    /// Returns the input gradient and adds weight/bias gradients into the
    /// parameter buffers.
    pub fn backward(&mut self, x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let out_dims = self.out_dims(x.dims())?;
        grad_out.expect_dims(out_dims, "conv grad_out")?;
        let g = self.window(x.dims())?;
        let cout = self.out_channels();
        let weight = &self.weight.value;
        let per = per_sample(x.batch(), |b| {
            let col = g.im2col(x.sample(b));
            let gy = grad_out.sample(b);
            let mut dw = vec![T::zero(); weight.len()];
            T::gemm(cout, g.cols(), g.rows(), gy, false, &col, true, &mut dw, false);
            let mut dcol = vec![T::zero(); col.len()];
            T::gemm(g.rows(), cout, g.cols(), weight, true, gy, false, &mut dcol, false);
            let mut dx = vec![T::zero(); x.sample_len()];
            g.col2im(&dcol, &mut dx);
            (dx, dw, sum_channels(gy, cout))
        });
        let mut dxs = Vec::with_capacity(x.len());
        let mut dws = Vec::with_capacity(per.len());
        let mut dbs = Vec::with_capacity(per.len());
        for (dx, dw, db) in per {
            dxs.extend(dx);
            dws.push(dw);
            dbs.push(db);
        }
        self.weight
            .accumulate(&reduce_in_order(dws.into_iter(), self.weight.len()));
        self.bias.accumulate(&reduce_in_order(dbs.into_iter(), self.bias.len()));
        Tensor4::from_vec(x.dims(), dxs)
    }
}

/// Transposed convolution: the adjoint of [`Conv2d`] with the same kernel
/// geometry, plus bias.
///
/// Weight layout is `[in_channels, out_channels, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Deconv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl<T: Real> Deconv2d<T> {
    pub fn new(weight: Param<T>, bias: Param<T>, stride: (usize, usize), pad: (usize, usize)) -> Result<Self> {
        if weight.shape.len() != 4 {
            return Err(shape_err!("deconv weight must be 4-D, got {:?}", weight.shape));
        }
        if bias.shape != [weight.shape[1]] {
            return Err(shape_err!(
                "deconv bias {:?} does not match {} output channels",
                bias.shape,
                weight.shape[1]
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(shape_err!("deconv stride must be >= 1, got {:?}", stride));
        }
        Ok(Self {
            weight,
            bias,
            stride,
            pad,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape[2], self.weight.shape[3])
    }

    /// Geometry of the *forward* convolution this layer is the adjoint of:
    /// it maps the deconv output back onto the deconv input.
    fn window(&self, dims: [usize; 4]) -> Result<Window> {
        let [_, c, h, w] = dims;
        if c != self.in_channels() {
            return Err(shape_err!(
                "deconv expects {} input channels, got {}",
                self.in_channels(),
                c
            ));
        }
        let (kh, kw) = self.kernel();
        let expand = |n: usize, s: usize, k: usize, p: usize| -> Option<usize> {
            if n == 0 {
                return None;
            }
            let v = (n as isize - 1) * s as isize - 2 * p as isize + k as isize;
            (v > 0).then_some(v as usize)
        };
        let out_h = expand(h, self.stride.0, kh, self.pad.0);
        let out_w = expand(w, self.stride.1, kw, self.pad.1);
        match (out_h, out_w) {
            (Some(out_h), Some(out_w)) => Ok(Window {
                channels: self.out_channels(),
                in_h: out_h,
                in_w: out_w,
                kh,
                kw,
                sh: self.stride.0,
                sw: self.stride.1,
                ph: self.pad.0,
                pw: self.pad.1,
                out_h: h,
                out_w: w,
            }),
            _ => Err(shape_err!(
                "deconv of {}x{} input with kernel {}x{}, stride {:?}, pad {:?} has non-positive output size",
                h,
                w,
                kh,
                kw,
                self.stride,
                self.pad
            )),
        }
    }

    pub fn out_dims(&self, in_dims: [usize; 4]) -> Result<[usize; 4]> {
        let g = self.window(in_dims)?;
        Ok([in_dims[0], self.out_channels(), g.in_h, g.in_w])
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.window(x.dims())?;
        let cin = self.in_channels();
        let cout = self.out_channels();
        let out_plane = g.in_h * g.in_w;
        let per = per_sample(x.batch(), |b| {
            let mut col = vec![T::zero(); g.rows() * g.cols()];
            T::gemm(
                g.rows(),
                cin,
                g.cols(),
                &self.weight.value,
                true,
                x.sample(b),
                false,
                &mut col,
                false,
            );
            let mut out = vec![T::zero(); cout * out_plane];
            g.col2im(&col, &mut out);
            for (c, chunk) in out.chunks_mut(out_plane).enumerate() {
                let bias = self.bias.value[c];
                chunk.iter_mut().for_each(|v| *v = *v + bias);
            }
            out
        });
        Tensor4::from_vec([x.batch(), cout, g.in_h, g.in_w], per.concat())
    }

    pub fn backward(&mut self, x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let out_dims = self.out_dims(x.dims())?;
        grad_out.expect_dims(out_dims, "deconv grad_out")?;
        let g = self.window(x.dims())?;
        let cin = self.in_channels();
        let cout = self.out_channels();
        let weight = &self.weight.value;
        let per = per_sample(x.batch(), |b| {
            let gy = grad_out.sample(b);
            let col = g.im2col(gy);
            let mut dx = vec![T::zero(); x.sample_len()];
            T::gemm(cin, g.rows(), g.cols(), weight, false, &col, false, &mut dx, false);
            let mut dw = vec![T::zero(); weight.len()];
            T::gemm(cin, g.cols(), g.rows(), x.sample(b), false, &col, true, &mut dw, false);
            (dx, dw, sum_channels(gy, cout))
        });
        let mut dxs = Vec::with_capacity(x.len());
        let mut dws = Vec::with_capacity(per.len());
        let mut dbs = Vec::with_capacity(per.len());
        for (dx, dw, db) in per {
            dxs.extend(dx);
            dws.push(dw);
            dbs.push(db);
        }
        self.weight
            .accumulate(&reduce_in_order(dws.into_iter(), self.weight.len()));
        self.bias.accumulate(&reduce_in_order(dbs.into_iter(), self.bias.len()));
        Tensor4::from_vec(x.dims(), dxs)
    }
}
