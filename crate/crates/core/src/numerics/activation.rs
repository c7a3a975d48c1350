use crate::error::Result;

use super::{Real, Tensor4};

pub fn relu_forward<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Uses the forward *output*; the subgradient at zero is zero.
pub fn relu_backward<T: Real>(y: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    grad_out.expect_dims(y.dims(), "relu grad_out")?;
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(y.dims(), data)
}

/// Logistic sigmoid, kept strictly inside `(0, 1)` even where the
/// floating-point result would round to an endpoint.
pub fn sigmoid_forward<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let lo = T::min_positive_value();
    let hi = T::one() - T::epsilon() / T::lit(2.0);
    x.map(|v| {
        let s = T::one() / (T::one() + (-v).exp());
        s.max(lo).min(hi)
    })
}

pub fn sigmoid_backward<T: Real>(s: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    grad_out.expect_dims(s.dims(), "sigmoid grad_out")?;
    let data = s
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| g * v * (T::one() - v))
        .collect();
    Tensor4::from_vec(s.dims(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor4::from_vec([1, 1, 1, 3], vec![-1.0f64, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor4::filled([1, 1, 1, 3], 1.0);
        assert_eq!(relu_backward(&relu_forward(&x), &g).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let x = Tensor4::<f32>::zeros([1, 1, 1, 1]);
        assert_eq!(sigmoid_forward(&x).data(), &[0.5]);
    }

    #[test]
    fn sigmoid_stays_inside_open_interval() {
        let x = Tensor4::from_vec([1, 1, 1, 4], vec![-200.0f32, -40.0, 40.0, 200.0]).unwrap();
        let s = sigmoid_forward(&x);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
