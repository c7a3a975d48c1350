//! Dense 4-D tensors and the handful of layers the segmentation network is
//! built from, each with a hand-derived backward pass, plus SGD with
//! momentum.
//!
//! Everything is generic over [`Real`] so that training runs in `f32` while
//! gradient verification runs the very same code in `f64`.

mod activation;
mod batchnorm;
mod conv;
mod pool;
mod sgd;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::sync::atomic::{AtomicBool, Ordering};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use activation::{relu_backward, relu_forward, sigmoid_backward, sigmoid_forward};
pub use batchnorm::{BatchNorm, BnCache, BnMode, BN_EPS, BN_MOMENTUM};
pub use conv::{Conv2d, Deconv2d};
pub use pool::{maxpool_backward, maxpool_forward};
pub use sgd::Sgd;
pub use tensor::{Param, Tensor4};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enables or disables per-sample parallelism inside layer kernels.
///
/// Reductions always run in a fixed order, so results are identical either
/// way; this only exists so verification code can run single-threaded.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::SeqCst);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::SeqCst)
}

/// Floating-point scalar usable by the layer kernels.
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static {
    /// `c = a · b` (or `c += a · b` when `accumulate`), all matrices dense
    /// row-major; `a` is `m×k` (stored `k×m` if `trans_a`), `b` is `k×n`
    /// (stored `n×k` if `trans_b`), `c` is `m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm_strides(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    trans_a: bool,
    b_len: usize,
    trans_b: bool,
    c_len: usize,
) -> (isize, isize, isize, isize) {
    assert_eq!(a_len, m * k, "gemm: lhs length");
    assert_eq!(b_len, k * n, "gemm: rhs length");
    assert_eq!(c_len, m * n, "gemm: output length");
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    (rsa, csa, rsb, csb)
}

macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                let (rsa, csa, rsb, csb) = gemm_strides(m, k, n, a.len(), trans_a, b.len(), trans_b, c.len());
                if m == 0 || n == 0 {
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the strides above address exactly the checked
                // `a`, `b` and `c` extents, and `c` is uniquely borrowed.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);
