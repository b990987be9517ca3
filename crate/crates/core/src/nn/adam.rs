//! Adam optimizer driven through the parameter visitor.

use super::{ParamOwner, Scalar};
use rayon::prelude::*;
use std::collections::HashMap;

/// Chunk width for parallel elementwise updates; the update is independent
/// per coordinate, so splitting cannot change results.
const PAR_CHUNK: usize = 1 << 16;

/// Adam with bias correction; moment buffers are lazily created per
/// parameter name on the first step.
pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    state: HashMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            state: HashMap::new(),
        }
    }

    /// Applies one update from the gradients currently stored in the model.
    pub fn step<M: ParamOwner<T> + ?Sized>(&mut self, model: &mut M) {
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let corr1 = T::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let corr2 = T::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        let state = &mut self.state;
        model.visit_params("", &mut |name, value, grad| {
            let (m, v) = state
                .entry(name.to_string())
                .or_insert_with(|| (vec![T::zero(); value.len()], vec![T::zero(); value.len()]));
            value
                .par_chunks_mut(PAR_CHUNK)
                .zip(grad.par_chunks(PAR_CHUNK))
                .zip(m.par_chunks_mut(PAR_CHUNK).zip(v.par_chunks_mut(PAR_CHUNK)))
                .for_each(|((value, grad), (m, v))| {
                    for i in 0..value.len() {
                        let g = grad[i];
                        m[i] = b1 * m[i] + (one - b1) * g;
                        v[i] = b2 * v[i] + (one - b2) * g * g;
                        let mhat = m[i] / corr1;
                        let vhat = v[i] / corr2;
                        value[i] = value[i] - lr * mhat / (vhat.sqrt() + eps);
                    }
                });
        });
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamFn;

    struct OneParam {
        v: Vec<f64>,
        g: Vec<f64>,
    }

    impl ParamOwner<f64> for OneParam {
        fn visit_params(&mut self, _prefix: &str, f: &mut ParamFn<f64>) {
            f("p", &mut self.v, &mut self.g);
        }
    }

    // first Adam step moves each coordinate by ~lr against the gradient sign
    #[test]
    fn first_step_size_is_learning_rate() {
        let mut p = OneParam {
            v: vec![1.0, -2.0],
            g: vec![0.3, -0.7],
        };
        let mut opt = Adam::new(0.01, 0.9, 0.999);
        opt.step(&mut p);
        assert!((p.v[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((p.v[1] - (-2.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = OneParam {
            v: vec![5.0],
            g: vec![0.0],
        };
        let mut opt = Adam::new(0.1, 0.9, 0.999);
        for _ in 0..500 {
            p.g[0] = 2.0 * p.v[0]; // d/dv of v^2
            opt.step(&mut p);
        }
        assert!(p.v[0].abs() < 1e-2, "got {}", p.v[0]);
    }
}
