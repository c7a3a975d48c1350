use super::{Param, Real};

/// Mini-batch SGD with classic (velocity-form) momentum:
/// `v ← μ·v − lr·g; w ← w + v`, after which gradients are zeroed.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub learning_rate: T,
    pub momentum: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(learning_rate: T, momentum: T) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    /// Parameters must be passed in the same order on every call.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param<T>>) {
        for (i, p) in params.into_iter().enumerate() {
            if self.velocity.len() == i {
                self.velocity.push(vec![T::zero(); p.len()]);
            }
            let v = &mut self.velocity[i];
            assert_eq!(v.len(), p.len(), "parameter {i} changed shape between steps");
            for ((w, g), vel) in p.value.iter_mut().zip(p.grad.iter_mut()).zip(v.iter_mut()) {
                *vel = self.momentum * *vel - self.learning_rate * *g;
                *w = *w + *vel;
                *g = T::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step_without_momentum() {
        let mut p = Param::new(vec![1], vec![1.0f64]);
        p.grad[0] = 2.0;
        let mut opt = Sgd::new(0.1, 0.0);
        opt.step([&mut p]);
        assert!((p.value[0] - 0.8).abs() < 1e-15);
        assert_eq!(p.grad[0], 0.0);
    }

    #[test]
    fn two_momentum_steps_with_constant_gradient() {
        let mut p = Param::new(vec![1], vec![0.0f64]);
        let mut opt = Sgd::new(1.0, 0.9);
        p.grad[0] = 1.0;
        opt.step([&mut p]);
        assert_eq!(opt.velocity()[0][0], -1.0);
        assert_eq!(p.value[0], -1.0);
        p.grad[0] = 1.0;
        opt.step([&mut p]);
        assert_eq!(opt.velocity()[0][0], -1.9);
        assert_eq!(p.value[0], -2.9);
    }

    #[test]
    fn quadratic_trajectory_matches_scripted_recurrence() {
        // f(w) = 0.5·a·(w − c)²
        let (a, c, lr, mu) = (3.0f64, 1.25, 0.05, 0.9);
        let mut p = Param::new(vec![1], vec![-2.0]);
        let mut opt = Sgd::new(lr, mu);
        let (mut w, mut v) = (-2.0f64, 0.0f64);
        for _ in 0..100 {
            p.grad[0] = a * (p.value[0] - c);
            opt.step([&mut p]);
            let g = a * (w - c);
            v = mu * v - lr * g;
            w += v;
            assert_eq!(p.value[0].to_bits(), w.to_bits());
        }
        assert!((w - c).abs() < 1e-2);
    }
}
