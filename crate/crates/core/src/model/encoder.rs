use rand::Rng;

use super::spec::EncoderSpec;
use super::{LatentSequence, ModelError};
use crate::nn::activation::{relu, relu_backward};
use crate::nn::{avg_pool, avg_pool_backward, Conv1d, Module, Padding, Param, Tensor};
use crate::scalar::Scalar;

/// One residual layer: `x + proj(relu(conv(relu(x))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T> {
    pub conv: Conv1d<T>,
    pub proj: Conv1d<T>,
}

/// The singer-independent encoder. It takes no singer input.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    pub spec: EncoderSpec,
    pub input: Conv1d<T>,
    pub layers: Vec<EncoderLayer<T>>,
    pub output: Conv1d<T>,
}

/// Activations kept for the backward pass.
pub struct EncoderCache<T> {
    input: Tensor<T>,
    layer_inputs: Vec<Tensor<T>>,
    conv_outputs: Vec<Tensor<T>>,
    top: Tensor<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(spec: &EncoderSpec, rng: &mut R) -> Self {
        let c = spec.channels;
        let layers = spec
            .dilations()
            .into_iter()
            .map(|d| EncoderLayer {
                conv: Conv1d::new(c, c, spec.kernel_size, d, Padding::Same, rng),
                proj: Conv1d::pointwise(c, c, rng),
            })
            .collect();
        Self {
            spec: spec.clone(),
            input: Conv1d::pointwise(1, c, rng),
            layers,
            output: Conv1d::pointwise(c, spec.latent_dim, rng),
        }
    }

    fn check_len(&self, len: usize) -> Result<(), ModelError> {
        if len == 0 || len % self.spec.pool != 0 {
            return Err(ModelError::LengthNotMultiple { len, period: self.spec.pool });
        }
        Ok(())
    }

    /// Encodes a companded signal whose length is a positive multiple of
    /// the pooling period.
    pub fn encode(&self, companded: &[T]) -> Result<LatentSequence<T>, ModelError> {
        self.check_len(companded.len())?;
        let x = Tensor::from_vec(&[1, companded.len()], companded.to_vec())?;
        let mut h = self.input.forward(&x)?;
        for layer in &self.layers {
            let c = layer.conv.forward(&relu(&h))?;
            let p = layer.proj.forward(&relu(&c))?;
            h.add_assign(&p)?;
        }
        let top = self.output.forward(&h)?;
        Ok(LatentSequence { frames: avg_pool(&top, self.spec.pool, self.spec.pool)? })
    }

    pub fn forward_train(&self, companded: &[T]) -> Result<(LatentSequence<T>, EncoderCache<T>), ModelError> {
        self.check_len(companded.len())?;
        let x = Tensor::from_vec(&[1, companded.len()], companded.to_vec())?;
        let mut h = self.input.forward(&x)?;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut conv_outputs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let c = layer.conv.forward(&relu(&h))?;
            let p = layer.proj.forward(&relu(&c))?;
            let next = {
                let mut n = h.clone();
                n.add_assign(&p)?;
                n
            };
            layer_inputs.push(h);
            conv_outputs.push(c);
            h = next;
        }
        let top = self.output.forward(&h)?;
        let frames = avg_pool(&top, self.spec.pool, self.spec.pool)?;
        layer_inputs.push(h);
        Ok((LatentSequence { frames }, EncoderCache { input: x, layer_inputs, conv_outputs, top }))
    }

    /// Accumulates parameter gradients from `dL/dlatent`.
    pub fn backward(&mut self, cache: &EncoderCache<T>, grad_latent: &Tensor<T>) -> Result<(), ModelError> {
        let len = cache.top.cols();
        let g_top = avg_pool_backward(len, self.spec.pool, self.spec.pool, grad_latent)?;
        let h_final = cache.layer_inputs.last().expect("final activation");
        let mut g = self.output.backward(h_final, &g_top)?;
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let x = &cache.layer_inputs[i];
            let c = &cache.conv_outputs[i];
            let rc = relu(c);
            let g_rc = layer.proj.backward(&rc, &g)?;
            let g_c = relu_backward(c, &g_rc);
            let rx = relu(x);
            let g_rx = layer.conv.backward(&rx, &g_c)?;
            g.add_assign(&relu_backward(x, &g_rx))?;
        }
        self.input.backward(&cache.input, &g)?;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        Encoder {
            spec: self.spec.clone(),
            input: self.input.cast(),
            layers: self.layers.iter().map(|l| EncoderLayer { conv: l.conv.cast(), proj: l.proj.cast() }).collect(),
            output: self.output.cast(),
        }
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = prefixed("input", self.input.params());
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(prefixed(&format!("layers.{i}.conv"), l.conv.params()));
            out.extend(prefixed(&format!("layers.{i}.proj"), l.proj.params()));
        }
        out.extend(prefixed("output", self.output.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = prefixed("input", self.input.params_mut());
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(prefixed(&format!("layers.{i}.conv"), l.conv.params_mut()));
            out.extend(prefixed(&format!("layers.{i}.proj"), l.proj.params_mut()));
        }
        out.extend(prefixed("output", self.output.params_mut()));
        out
    }
}

pub(crate) fn prefixed<P>(prefix: &str, items: Vec<(String, P)>) -> Vec<(String, P)> {
    items.into_iter().map(|(n, p)| (format!("{prefix}.{n}"), p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> EncoderSpec {
        EncoderSpec { blocks: 1, layers_per_block: 3, channels: 8, latent_dim: 4, kernel_size: 3, pool: 50 }
    }

    #[test]
    fn one_frame_per_period() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::<f32>::new(&small(), &mut rng);
        assert_eq!(enc.encode(&vec![0.1; 50]).unwrap().frames.shape(), &[4, 1]);
        assert_eq!(enc.encode(&vec![0.1; 500]).unwrap().frames.shape(), &[4, 10]);
        assert!(matches!(enc.encode(&vec![0.1; 70]), Err(ModelError::LengthNotMultiple { len: 70, period: 50 })));
    }

    #[test]
    fn train_forward_matches_inference_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::<f64>::new(&small(), &mut rng);
        let x: Vec<f64> = (0..150).map(|i| (i as f64 * 0.2).sin()).collect();
        let a = enc.encode(&x).unwrap();
        let (b, _) = enc.forward_train(&x).unwrap();
        assert_eq!(a, b);
    }
}
