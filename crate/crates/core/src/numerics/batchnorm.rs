use crate::error::{shape_err, Error, Result};

use super::{Param, Real, Tensor4};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Per-channel batch normalization over `(B, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

/// Values saved by the forward pass that the backward pass needs.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    mode: BnMode,
    dims: [usize; 4],
    x_hat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(vec![channels], T::one()),
            beta: Param::zeros(vec![channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::lit(BN_EPS),
            momentum: T::lit(BN_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: BnMode) -> Result<(Tensor4<T>, BnCache<T>)> {
        match mode {
            BnMode::Train => self.forward_train(x),
            BnMode::Infer => self.forward_infer(x),
        }
    }

    /// Normalizes with batch statistics and folds them into the running
    /// statistics.
    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Tensor4<T>, BnCache<T>)> {
        let [b, c, h, w] = self.check(x)?;
        let plane = h * w;
        let count = b * plane;
        if count < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch norm in train mode needs at least 2 values per channel, got {count}"
            )));
        }
        let data = x.data();
        let n = T::from_usize(count).unwrap();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                s = s + data[off..off + plane].iter().copied().sum::<T>();
            }
            let m = s / n;
            let mut sq = T::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                sq = sq + data[off..off + plane].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
            }
            mean[ch] = m;
            var[ch] = sq / n;
        }
        let keep = T::one() - self.momentum;
        for ch in 0..c {
            self.running_mean[ch] = keep * self.running_mean[ch] + self.momentum * mean[ch];
            self.running_var[ch] = keep * self.running_var[ch] + self.momentum * var[ch];
        }
        self.normalize(x, &mean, &var, BnMode::Train)
    }

    pub fn forward_infer(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, BnCache<T>)> {
        self.check(x)?;
        self.normalize(x, &self.running_mean, &self.running_var, BnMode::Infer)
    }

    fn check(&self, x: &Tensor4<T>) -> Result<[usize; 4]> {
        if x.channels() != self.channels() {
            return Err(shape_err!(
                "batch norm over {} channels got {}",
                self.channels(),
                x.channels()
            ));
        }
        Ok(x.dims())
    }

    fn normalize(&self, x: &Tensor4<T>, mean: &[T], var: &[T], mode: BnMode) -> Result<(Tensor4<T>, BnCache<T>)> {
        let [b, c, h, w] = x.dims();
        let plane = h * w;
        let data = x.data();
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        let mut x_hat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * plane;
                let (m, is, g, sh) = (mean[ch], inv_std[ch], self.gamma.value[ch], self.beta.value[ch]);
                for i in off..off + plane {
                    let xh = (data[i] - m) * is;
                    x_hat[i] = xh;
                    out[i] = g * xh + sh;
                }
            }
        }
        Ok((
            Tensor4::from_vec(x.dims(), out)?,
            BnCache {
                mode,
                dims: x.dims(),
                x_hat,
                inv_std,
            },
        ))
    }

    /// Input gradient; gamma and shift gradients are accumulated.
    #[allow(clippy::needless_range_loop)]
    pub fn backward(&mut self, cache: &BnCache<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        grad_out.expect_dims(cache.dims, "batch norm grad_out")?;
        let [b, c, h, w] = cache.dims;
        let plane = h * w;
        let n = T::from_usize(b * plane).unwrap();
        let gy = grad_out.data();
        let mut dx = vec![T::zero(); gy.len()];
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ch in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                for i in off..off + plane {
                    sum_g = sum_g + gy[i];
                    sum_gx = sum_gx + gy[i] * cache.x_hat[i];
                }
            }
            dgamma[ch] = sum_gx;
            dbeta[ch] = sum_g;
            let scale = self.gamma.value[ch] * cache.inv_std[ch];
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                for i in off..off + plane {
                    dx[i] = match cache.mode {
                        BnMode::Train => scale * (gy[i] - (sum_g + cache.x_hat[i] * sum_gx) / n),
                        BnMode::Infer => scale * gy[i],
                    };
                }
            }
        }
        self.gamma.accumulate(&dgamma);
        self.beta.accumulate(&dbeta);
        Tensor4::from_vec(cache.dims, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(dims: [usize; 4], seed: u64) -> Tensor4<f64> {
        Tensor4::from_fn(dims, |[b, c, h, w]| {
            let k = (b * 1009 + c * 131 + h * 17 + w) as f64 + seed as f64 * 0.5;
            (k * 12.9898).sin() * 3.0 + c as f64
        })
    }

    #[test]
    fn train_mode_normalizes_each_channel() {
        let x = noise([3, 4, 2, 5], 1);
        let mut bn = BatchNorm::<f64>::new(4);
        let (y, _) = bn.forward(&x, BnMode::Train).unwrap();
        for ch in 0..4 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| (0..2).flat_map(move |h| (0..5).map(move |w| [b, ch, h, w])))
                .map(|i| y.at(i))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            // eps shrinks the variance slightly below one
            assert!((var - 1.0).abs() < 1e-5 * 2.0, "var {var}");
        }
    }

    #[test]
    fn constant_channel_maps_to_shift() {
        let x = Tensor4::filled([2, 1, 3, 3], 4.25f64);
        let mut bn = BatchNorm::<f64>::new(1);
        bn.beta.value[0] = -0.75;
        bn.gamma.value[0] = 3.0;
        let (y, _) = bn.forward(&x, BnMode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == -0.75));
    }

    #[test]
    fn infer_mode_uses_running_statistics() {
        let x = noise([2, 3, 2, 2], 7);
        let mut bn = BatchNorm::<f64>::new(3);
        bn.running_mean = vec![0.3, -1.2, 2.0];
        bn.running_var = vec![0.5, 2.5, 0.01];
        bn.gamma.value = vec![1.5, -0.5, 2.0];
        bn.beta.value = vec![0.1, 0.2, -0.3];
        let (y, _) = bn.forward(&x, BnMode::Infer).unwrap();
        for (i, (&xv, &yv)) in x.data().iter().zip(y.data()).enumerate() {
            let ch = (i / 4) % 3;
            let want = bn.gamma.value[ch] * (xv - bn.running_mean[ch]) / (bn.running_var[ch] + 1e-5).sqrt()
                + bn.beta.value[ch];
            assert!((want - yv).abs() < 1e-12);
        }
        assert_eq!(bn.running_mean, vec![0.3, -1.2, 2.0]);
    }

    #[test]
    fn running_stats_follow_momentum_rule() {
        let x = Tensor4::from_vec([1, 1, 1, 4], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let mut bn = BatchNorm::<f64>::new(1);
        bn.forward(&x, BnMode::Train).unwrap();
        assert!((bn.running_mean[0] - 0.25).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 1.25)).abs() < 1e-15);
        assert!(bn.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn single_element_batch_is_degenerate() {
        let x = Tensor4::<f32>::zeros([1, 2, 1, 1]);
        let mut bn = BatchNorm::<f32>::new(2);
        assert!(matches!(bn.forward(&x, BnMode::Train), Err(Error::DegenerateBatch(_))));
        assert!(bn.forward(&x, BnMode::Infer).is_ok());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let x = noise([2, 2, 2, 2], 3);
        let mut bn = BatchNorm::<f64>::new(2);
        let (y, cache) = bn.forward(&x, BnMode::Train).unwrap();
        let dx = bn.backward(&cache, &Tensor4::zeros(y.dims())).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(bn.gamma.grad.iter().all(|&v| v == 0.0));
    }
}
