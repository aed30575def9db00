use rand::Rng;

use super::encoder::prefixed;
use super::spec::ConfusionSpec;
use super::{LatentSequence, ModelError};
use crate::nn::activation::{elu, elu_backward};
use crate::nn::{Conv1d, Module, Padding, Param, Tensor};
use crate::scalar::Scalar;

/// Predicts the singer from a latent sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionNet<T> {
    pub spec: ConfusionSpec,
    pub convs: Vec<Conv1d<T>>,
    pub proj: Conv1d<T>,
}

pub struct ConfusionCache<T> {
    inputs: Vec<Tensor<T>>,
    pre_activations: Vec<Tensor<T>>,
    frames: usize,
}

impl<T: Scalar> ConfusionNet<T> {
    pub fn new<R: Rng + ?Sized>(spec: &ConfusionSpec, latent_dim: usize, k: usize, rng: &mut R) -> Self {
        let mut convs = Vec::with_capacity(spec.layers);
        let mut cin = latent_dim;
        for _ in 0..spec.layers {
            convs.push(Conv1d::new(cin, spec.channels, spec.kernel_size, 1, Padding::Same, rng));
            cin = spec.channels;
        }
        Self { spec: spec.clone(), convs, proj: Conv1d::pointwise(cin, k, rng) }
    }

    pub fn k(&self) -> usize {
        self.proj.out_channels()
    }

    fn run(&self, latent: &LatentSequence<T>, keep: bool) -> Result<(Vec<T>, Option<ConfusionCache<T>>), ModelError> {
        let mut h = latent.frames.clone();
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        for conv in &self.convs {
            let z = conv.forward(&h)?;
            let next = elu(&z);
            if keep {
                inputs.push(h);
                pre.push(z);
            }
            h = next;
        }
        let per_frame = self.proj.forward(&h)?;
        if keep {
            inputs.push(h);
        }
        let frames = per_frame.cols();
        let inv = T::one() / T::of_usize(frames);
        let logits = (0..self.k()).map(|c| per_frame.row(c).iter().copied().sum::<T>() * inv).collect();
        let cache = keep.then_some(ConfusionCache { inputs, pre_activations: pre, frames });
        Ok((logits, cache))
    }

    /// Frame-averaged singer logits.
    pub fn classify(&self, latent: &LatentSequence<T>) -> Result<Vec<T>, ModelError> {
        Ok(self.run(latent, false)?.0)
    }

    pub fn forward_train(&self, latent: &LatentSequence<T>) -> Result<(Vec<T>, ConfusionCache<T>), ModelError> {
        let (l, c) = self.run(latent, true)?;
        Ok((l, c.expect("cache requested")))
    }

    /// Returns `dL/dlatent`. With `accumulate == false` the parameter
    /// gradients are left untouched.
    pub fn backward(
        &mut self,
        cache: &ConfusionCache<T>,
        grad_logits: &[T],
        accumulate: bool,
    ) -> Result<Tensor<T>, ModelError> {
        let k = self.k();
        let inv = T::one() / T::of_usize(cache.frames);
        let mut g = Tensor::zeros(&[k, cache.frames]);
        for c in 0..k {
            let v = grad_logits[c] * inv;
            g.row_mut(c).iter_mut().for_each(|x| *x = v);
        }
        let top = cache.inputs.last().expect("projection input");
        let mut g = if accumulate { self.proj.backward(top, &g)? } else { self.proj.backward_input(top, &g)? };
        for (i, conv) in self.convs.iter_mut().enumerate().rev() {
            let g_z = elu_backward(&cache.pre_activations[i], &g);
            g = if accumulate {
                conv.backward(&cache.inputs[i], &g_z)?
            } else {
                conv.backward_input(&cache.inputs[i], &g_z)?
            };
        }
        Ok(g)
    }

    pub fn cast<U: Scalar>(&self) -> ConfusionNet<U> {
        ConfusionNet { spec: self.spec.clone(), convs: self.convs.iter().map(Conv1d::cast).collect(), proj: self.proj.cast() }
    }
}

impl<T: Scalar> Module<T> for ConfusionNet<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.extend(prefixed(&format!("convs.{i}"), c.params()));
        }
        out.extend(prefixed("proj", self.proj.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.extend(prefixed(&format!("convs.{i}"), c.params_mut()));
        }
        out.extend(prefixed("proj", self.proj.params_mut()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_has_k_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let latent = LatentSequence { frames: Tensor::<f32>::uniform(&[8, 5], 1.0, &mut rng) };
        for k in [2, 5, 12] {
            let net = ConfusionNet::<f32>::new(&ConfusionSpec { layers: 3, channels: 6, kernel_size: 3 }, 8, k, &mut rng);
            assert_eq!(net.classify(&latent).unwrap().len(), k);
        }
    }

    #[test]
    fn single_frame_average_is_that_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = ConfusionNet::<f64>::new(&ConfusionSpec { layers: 2, channels: 4, kernel_size: 3 }, 3, 2, &mut rng);
        let latent = LatentSequence { frames: Tensor::<f64>::uniform(&[3, 1], 1.0, &mut rng) };
        let mut h = latent.frames.clone();
        for c in &net.convs {
            h = elu(&c.forward(&h).unwrap());
        }
        let direct = net.proj.forward(&h).unwrap();
        let logits = net.classify(&latent).unwrap();
        for c in 0..2 {
            assert!((logits[c] - direct.at(c, 0)).abs() < 1e-15);
        }
    }

    #[test]
    fn pointwise_network_ignores_frame_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = ConfusionNet::<f64>::new(&ConfusionSpec { layers: 3, channels: 5, kernel_size: 1 }, 4, 3, &mut rng);
        let frames = Tensor::<f64>::uniform(&[4, 6], 1.0, &mut rng);
        let order = [3, 0, 5, 1, 4, 2];
        let mut permuted = Tensor::zeros(&[4, 6]);
        for r in 0..4 {
            for (dst, &src) in order.iter().enumerate() {
                permuted.row_mut(r)[dst] = frames.at(r, src);
            }
        }
        let a = net.classify(&LatentSequence { frames }).unwrap();
        let b = net.classify(&LatentSequence { frames: permuted }).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
