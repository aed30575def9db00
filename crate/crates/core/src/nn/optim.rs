//! Adaptive moment estimation over named parameters.

use std::collections::BTreeMap;

use super::tensor::{Param, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, grad_clip: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub steps: u64,
    /// First and second moments keyed by parameter name.
    pub moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, steps: 0, moments: BTreeMap::new() }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, params: Vec<(String, &mut Param<T>)>) {
        self.steps += 1;
        let c = &self.config;
        let mut clip = T::one();
        if c.grad_clip > 0.0 {
            let norm = params
                .iter()
                .flat_map(|(_, p)| p.grad.data().iter())
                .map(|&g| g.as_f64() * g.as_f64())
                .sum::<f64>()
                .sqrt();
            if norm > c.grad_clip {
                clip = T::of(c.grad_clip / norm);
            }
        }
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.steps as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.steps as i32));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.eps);
        for (name, p) in params {
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
            let grads = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[i] * clip;
                md[i] = b1 * md[i] + (T::one() - b1) * g;
                vd[i] = b2 * vd[i] + (T::one() - b2) * g * g;
                let mh = md[i] / bc1;
                let vh = vd[i] / bc2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
            p.zero_grad();
        }
    }

    pub fn decay_learning_rate(&mut self, factor: f64) {
        self.config.learning_rate *= factor;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new(Tensor::<f64>::from_vec(&[2], vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.05, ..Default::default() });
        for _ in 0..2000 {
            let v = p.value.data().to_vec();
            p.grad.data_mut().copy_from_slice(&[2.0 * v[0], 2.0 * v[1]]);
            opt.step(vec![("w".into(), &mut p)]);
        }
        assert!(p.value.max_abs() < 1e-3);
        assert_eq!(p.grad.max_abs(), 0.0);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::new(Tensor::<f64>::zeros(&[1]));
        p.grad.data_mut()[0] = 123.0;
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(vec![("w".into(), &mut p)]);
        assert!((p.value.data()[0] + 1e-3).abs() < 1e-9);
    }
}
