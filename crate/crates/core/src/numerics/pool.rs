use crate::error::{shape_err, Result};

use super::{Real, Tensor4};

/// Non-overlapping max-pool with stride equal to the window.
///
/// Returns the pooled tensor and, per output element, the flat index of the
/// winning input element. Ties go to the smallest flat index.
pub fn maxpool_forward<T: Real>(x: &Tensor4<T>, window: (usize, usize)) -> Result<(Tensor4<T>, Vec<usize>)> {
    let [b, c, h, w] = x.dims();
    let (kh, kw) = window;
    if kh == 0 || kw == 0 || h % kh != 0 || w % kw != 0 {
        return Err(shape_err!(
            "max-pool window {}x{} does not tile {}x{} input",
            kh,
            kw,
            h,
            w
        ));
    }
    let (oh, ow) = (h / kh, w / kw);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    let data = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best_idx = base + i * kh * w + j * kw;
                let mut best = data[best_idx];
                for di in 0..kh {
                    let row = base + (i * kh + di) * w + j * kw;
                    for dj in 0..kw {
                        let v = data[row + dj];
                        if v > best {
                            best = v;
                            best_idx = row + dj;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor4::from_vec([b, c, oh, ow], out)?, argmax))
}

/// Routes each output gradient to its argmax position.
pub fn maxpool_backward<T: Real>(
    argmax: &[usize],
    input_dims: [usize; 4],
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    if argmax.len() != grad_out.len() {
        return Err(shape_err!(
            "max-pool backward: {} argmax entries for {} gradients",
            argmax.len(),
            grad_out.len()
        ));
    }
    let mut dx = Tensor4::zeros(input_dims);
    let n = dx.len();
    let data = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        if idx >= n {
            return Err(shape_err!("max-pool argmax {} outside input of {} elements", idx, n));
        }
        data[idx] = data[idx] + g;
    }
    Ok(dx)
}
