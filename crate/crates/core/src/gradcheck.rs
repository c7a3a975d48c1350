//! Central finite-difference checks of every backward pass, in double
//! precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{build_fcn, ArchitectureSpec, FcnModel, Mode};
use crate::numerics::{
    maxpool_backward, maxpool_forward, parallel_enabled, relu_backward, relu_forward, set_parallel, sigmoid_backward,
    sigmoid_forward, BatchNorm, Conv2d, Deconv2d, Param, Tensor4,
};
use crate::trainloop::{weighted_bce, LossWeights};

pub const FD_EPSILON: f64 = 1e-4;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const BCE_TOLERANCE: f64 = 1e-6;
pub const ADJOINT_TOLERANCE: f64 = 1e-10;
/// Differences below this pass regardless of relative error.
pub const ABSOLUTE_FLOOR: f64 = 1e-7;

pub const CHECK_NAMES: &[&str] = &[
    "conv2d",
    "deconv2d",
    "conv_deconv_adjoint",
    "maxpool",
    "batchnorm",
    "relu",
    "sigmoid",
    "weighted_bce",
    "model_tiny",
];

#[derive(Debug, Clone, Copy, Default)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Scales every analytic gradient by 1.01 so the checks must fail.
    pub inject_fault: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Worst relative error; entries smaller than `ABSOLUTE_FLOOR / tolerance`
    /// are measured against that magnitude instead.
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub entries: usize,
    pub passed: bool,
}

#[derive(Default)]
struct Tally {
    worst: f64,
    entries: usize,
    passed: bool,
}

impl Tally {
    fn new() -> Self {
        Self {
            passed: true,
            ..Self::default()
        }
    }

    fn compare(&mut self, analytic: f64, numeric: f64, tol: f64) {
        self.entries += 1;
        // relative error, with magnitudes below floor/tol judged absolutely
        let scale = analytic.abs().max(numeric.abs()).max(ABSOLUTE_FLOOR / tol);
        let rel = (analytic - numeric).abs() / scale;
        self.worst = self.worst.max(rel);
        if rel > tol {
            self.passed = false;
        }
    }

    fn finish(self, name: &str, tol: f64) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            max_rel_error: self.worst,
            tolerance: tol,
            entries: self.entries,
            passed: self.passed,
        }
    }
}

/// A differentiable unit under test.
trait Probe {
    fn forward(&mut self, x: &Tensor4<f64>) -> Result<Tensor4<f64>>;
    /// Forward followed by backward of `grad_out`; returns the input gradient.
    fn backward(&mut self, x: &Tensor4<f64>, grad_out: &Tensor4<f64>) -> Result<Tensor4<f64>>;
    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        Vec::new()
    }
}

impl Probe for Conv2d<f64> {
    fn forward(&mut self, x: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        Conv2d::forward(self, x)
    }
    fn backward(&mut self, x: &Tensor4<f64>, g: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        Conv2d::backward(self, x, g)
    }
    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl Probe for Deconv2d<f64> {
    fn forward(&mut self, x: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        Deconv2d::forward(self, x)
    }
    fn backward(&mut self, x: &Tensor4<f64>, g: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        Deconv2d::backward(self, x, g)
    }
    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl Probe for BatchNorm<f64> {
    fn forward(&mut self, x: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        Ok(self.forward_train(x)?.0)
    }
    fn backward(&mut self, x: &Tensor4<f64>, g: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        let (_, cache) = self.forward_train(x)?;
        BatchNorm::backward(self, &cache, g)
    }
    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

struct Pool((usize, usize));

impl Probe for Pool {
    fn forward(&mut self, x: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        Ok(maxpool_forward(x, self.0)?.0)
    }
    fn backward(&mut self, x: &Tensor4<f64>, g: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        let (_, argmax) = maxpool_forward(x, self.0)?;
        maxpool_backward(&argmax, x.dims(), g)
    }
}

struct Relu;

impl Probe for Relu {
    fn forward(&mut self, x: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        Ok(relu_forward(x))
    }
    fn backward(&mut self, x: &Tensor4<f64>, g: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        relu_backward(&relu_forward(x), g)
    }
}

struct Sigmoid;

impl Probe for Sigmoid {
    fn forward(&mut self, x: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        Ok(sigmoid_forward(x))
    }
    fn backward(&mut self, x: &Tensor4<f64>, g: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        sigmoid_backward(&sigmoid_forward(x), g)
    }
}

impl Probe for FcnModel<f64> {
    fn forward(&mut self, x: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        FcnModel::forward(self, x)
    }
    fn backward(&mut self, x: &Tensor4<f64>, g: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        FcnModel::forward(self, x)?;
        FcnModel::backward(self, g)
    }
    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        FcnModel::params_mut(self)
    }
}

fn normal_tensor(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_| StandardNormal.sample(rng))
}

fn normal_param(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Param<f64> {
    let n = shape.iter().product();
    Param::new(shape, (0..n).map(|_| StandardNormal.sample(rng)).collect())
}

/// Compares the analytic input and parameter gradients of the scalar
/// `⟨probe(x), r⟩` (random `r`) with central differences.
#[allow(clippy::needless_range_loop)]
fn finite_difference(
    probe: &mut dyn Probe,
    x: &Tensor4<f64>,
    tol: f64,
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Tally> {
    let fault = if opts.inject_fault { 1.01 } else { 1.0 };
    let y = probe.forward(x)?;
    let r = normal_tensor(y.dims(), rng);
    probe.params_mut().into_iter().for_each(Param::zero_grad);
    let gx = probe.backward(x, &r)?;
    let grads: Vec<Vec<f64>> = probe.params_mut().iter().map(|p| p.grad.clone()).collect();

    let mut tally = Tally::new();
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + FD_EPSILON;
        let up = probe.forward(&xp)?.dot(&r);
        xp.data_mut()[i] = orig - FD_EPSILON;
        let down = probe.forward(&xp)?.dot(&r);
        xp.data_mut()[i] = orig;
        tally.compare(gx.data()[i] * fault, (up - down) / (2.0 * FD_EPSILON), tol);
    }
    for (pi, grad) in grads.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = probe.params_mut()[pi].value[k];
            probe.params_mut()[pi].value[k] = orig + FD_EPSILON;
            let up = probe.forward(x)?.dot(&r);
            probe.params_mut()[pi].value[k] = orig - FD_EPSILON;
            let down = probe.forward(x)?.dot(&r);
            probe.params_mut()[pi].value[k] = orig;
            tally.compare(grad[k] * fault, (up - down) / (2.0 * FD_EPSILON), tol);
        }
    }
    Ok(tally)
}

fn check_adjoint(opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<Tally> {
    let weight = normal_param(vec![3, 2, 3, 4], rng);
    let conv = Conv2d::new(weight.clone(), Param::zeros(vec![3]), (1, 2), (1, 1))?;
    let deconv = Deconv2d::new(weight, Param::zeros(vec![2]), (1, 2), (1, 1))?;
    let x = normal_tensor([2, 2, 5, 8], rng);
    let cx = conv.forward(&x)?;
    let y = normal_tensor(cx.dims(), rng);
    let dy = deconv.forward(&y)?;
    if dy.dims() != x.dims() {
        return Err(Error::State(format!("adjoint dims {:?} vs {:?}", dy.dims(), x.dims())));
    }
    let lhs = cx.dot(&y);
    let rhs = x.dot(&dy) * if opts.inject_fault { 1.01 } else { 1.0 };
    let mut tally = Tally::new();
    tally.entries = 1;
    let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0);
    tally.worst = rel;
    tally.passed = rel <= ADJOINT_TOLERANCE;
    Ok(tally)
}

fn check_bce(opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<Tally> {
    let n = 64;
    // truncation error of the central difference grows like 1/p^2
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
    let q: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
    let w = LossWeights::new(0.83)?;
    let (_, grad) = weighted_bce(&p, &q, 4, w)?;
    let fault = if opts.inject_fault { 1.01 } else { 1.0 };
    let mut tally = Tally::new();
    let mut pp = p.clone();
    for i in 0..n {
        pp[i] = p[i] + FD_EPSILON;
        let up = weighted_bce(&pp, &q, 4, w)?.0;
        pp[i] = p[i] - FD_EPSILON;
        let down = weighted_bce(&pp, &q, 4, w)?.0;
        pp[i] = p[i];
        tally.compare(grad[i] * fault, (up - down) / (2.0 * FD_EPSILON), BCE_TOLERANCE);
    }
    Ok(tally)
}

/// Values at least 0.01 apart, so no perturbation changes an argmax.
fn distinct_tensor(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    use rand::seq::SliceRandom;
    let n: usize = dims.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    Tensor4::from_vec(dims, ranks.into_iter().map(|r| r as f64 * 0.01 - 0.5).collect()).expect("sized")
}

fn run_inner(name: &str, opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(CHECK_NAMES.iter().position(|n| *n == name).unwrap_or(0) as u64 + 1);
    let rng = &mut rng;
    let (tally, tol) = match name {
        "conv2d" => {
            let mut conv = Conv2d::new(
                normal_param(vec![3, 2, 3, 3], rng),
                normal_param(vec![3], rng),
                (1, 1),
                (1, 1),
            )?;
            let x = normal_tensor([2, 2, 5, 6], rng);
            (
                finite_difference(&mut conv, &x, LAYER_TOLERANCE, opts, rng)?,
                LAYER_TOLERANCE,
            )
        }
        "deconv2d" => {
            let mut d = Deconv2d::new(
                normal_param(vec![3, 2, 1, 4], rng),
                normal_param(vec![2], rng),
                (1, 2),
                (0, 1),
            )?;
            let x = normal_tensor([2, 3, 3, 5], rng);
            (
                finite_difference(&mut d, &x, LAYER_TOLERANCE, opts, rng)?,
                LAYER_TOLERANCE,
            )
        }
        "conv_deconv_adjoint" => (check_adjoint(opts, rng)?, ADJOINT_TOLERANCE),
        "maxpool" => {
            let x = distinct_tensor([2, 2, 6, 8], rng);
            (
                finite_difference(&mut Pool((3, 2)), &x, LAYER_TOLERANCE, opts, rng)?,
                LAYER_TOLERANCE,
            )
        }
        "batchnorm" => {
            let mut bn = BatchNorm::<f64>::new(3);
            bn.gamma = normal_param(vec![3], rng);
            bn.beta = normal_param(vec![3], rng);
            let x = normal_tensor([3, 3, 2, 4], rng);
            (
                finite_difference(&mut bn, &x, LAYER_TOLERANCE, opts, rng)?,
                LAYER_TOLERANCE,
            )
        }
        "relu" => {
            // keep every input at least 0.05 from the kink
            let x = Tensor4::from_fn([2, 2, 3, 4], |_| {
                let v: f64 = rng.random_range(0.05..2.0);
                if rng.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            });
            (
                finite_difference(&mut Relu, &x, LAYER_TOLERANCE, opts, rng)?,
                LAYER_TOLERANCE,
            )
        }
        "sigmoid" => {
            let x = Tensor4::from_fn([2, 2, 3, 4], |_| rng.random_range(-4.0..4.0));
            (
                finite_difference(&mut Sigmoid, &x, LAYER_TOLERANCE, opts, rng)?,
                LAYER_TOLERANCE,
            )
        }
        "weighted_bce" => (check_bce(opts, rng)?, BCE_TOLERANCE),
        "model_tiny" => {
            let spec = ArchitectureSpec::tiny();
            let mut model: FcnModel<f64> = build_fcn(&spec, opts.seed)?;
            model.set_mode(Mode::Train);
            let x = normal_tensor([2, 1, spec.input_height, spec.input_width], rng);
            (
                finite_difference(&mut model, &x, MODEL_TOLERANCE, opts, rng)?,
                MODEL_TOLERANCE,
            )
        }
        other => return Err(Error::Config(format!("unknown gradient check {other:?}"))),
    };
    Ok(tally.finish(name, tol))
}

/// Runs one named check with intra-op parallelism disabled.
pub fn run_check(name: &str, opts: &GradcheckOptions) -> Result<CheckResult> {
    let was = parallel_enabled();
    set_parallel(false);
    let out = run_inner(name, opts);
    set_parallel(was);
    out
}

pub fn run_all(opts: &GradcheckOptions) -> Result<Vec<CheckResult>> {
    CHECK_NAMES.iter().map(|n| run_check(n, opts)).collect()
}
