//! The conditional WaveNet decoder.
//!
//! Inputs are previous mu-law indices looked up in a learned table, shifted
//! right by one so that the logits at `t` only see samples `< t`. Each
//! residual layer adds its own pointwise projection of the conditioning
//! signal before the gated activation. The conditioning is piecewise
//! constant over `hop` samples, so those projections are computed once per
//! frame and broadcast.

use rand::Rng;

use super::conditioning::ConditioningSignal;
use super::encoder::prefixed;
use super::spec::DecoderSpec;
use super::ModelError;
use crate::audio::START_INDEX;
use crate::nn::activation::{gate_backward_parts, gate_forward_parts, relu, relu_backward};
use crate::nn::{Conv1d, Module, Padding, Param, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayer<T> {
    /// Causal dilated conv to `2 * residual` channels (filter | gate).
    pub conv: Conv1d<T>,
    pub cond: Conv1d<T>,
    pub res: Conv1d<T>,
    pub skip: Conv1d<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T> {
    pub spec: DecoderSpec,
    /// `[quant_levels, residual]`: row `i` is the input vector for index `i`.
    pub embed: Param<T>,
    pub layers: Vec<DecoderLayer<T>>,
    pub head_cond: Conv1d<T>,
    pub head1: Conv1d<T>,
    pub head2: Conv1d<T>,
}

pub struct DecoderCache<T> {
    inputs: Vec<u8>,
    cond_frames: Tensor<T>,
    hop: usize,
    layer_inputs: Vec<Tensor<T>>,
    /// Per layer `(tanh(a), sigmoid(b))`, each `[residual, T]`.
    gates: Vec<(Tensor<T>, Tensor<T>)>,
    head_in: Tensor<T>,
    head_mid: Tensor<T>,
}

/// Teacher-forcing inputs: `[START, s_0, ..., s_{T-2}]`.
pub fn shifted_inputs(samples: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len());
    if !samples.is_empty() {
        out.push(START_INDEX);
        out.extend_from_slice(&samples[..samples.len() - 1]);
    }
    out
}

/// `z[:, t] += frames[:, t / hop]`.
pub(crate) fn add_broadcast<T: Scalar>(z: &mut Tensor<T>, frames: &Tensor<T>, hop: usize) {
    let len = z.cols();
    for c in 0..z.rows() {
        let src = frames.row(c).to_vec();
        let dst = z.row_mut(c);
        for (f, &v) in src.iter().enumerate() {
            let start = f * hop;
            if start >= len {
                break;
            }
            let end = (start + hop).min(len);
            dst[start..end].iter_mut().for_each(|x| *x += v);
        }
    }
}

/// Adjoint of [`add_broadcast`]: sums each hop window.
pub(crate) fn sum_windows<T: Scalar>(g: &Tensor<T>, hop: usize, frames: usize) -> Tensor<T> {
    let len = g.cols();
    let mut out = Tensor::zeros(&[g.rows(), frames]);
    for c in 0..g.rows() {
        let src = g.row(c);
        let dst = out.row_mut(c);
        for (f, d) in dst.iter_mut().enumerate() {
            let start = f * hop;
            if start >= len {
                break;
            }
            *d = src[start..(start + hop).min(len)].iter().copied().sum();
        }
    }
    out
}

impl<T: Scalar> Decoder<T> {
    pub fn new<R: Rng + ?Sized>(spec: &DecoderSpec, rng: &mut R) -> Self {
        let (r, s, c) = (spec.residual_channels, spec.skip_channels, spec.conditioning_dim);
        let layers = spec
            .dilations()
            .into_iter()
            .map(|d| DecoderLayer {
                conv: Conv1d::new(r, 2 * r, spec.kernel_size, d, Padding::Causal, rng),
                cond: Conv1d::pointwise(c, 2 * r, rng),
                res: Conv1d::pointwise(r, r, rng),
                skip: Conv1d::pointwise(r, s, rng),
            })
            .collect();
        let mut head2 = Conv1d::pointwise(s, spec.quant_levels, rng);
        // Start close to the uniform distribution over levels.
        head2.weight.value.scale(T::of(0.1));
        head2.bias.value.fill(T::zero());
        Self {
            spec: spec.clone(),
            embed: Param::new(Tensor::uniform(&[spec.quant_levels, r], 1.0, rng)),
            layers,
            head_cond: Conv1d::pointwise(c, s, rng),
            head1: Conv1d::pointwise(s, s, rng),
            head2,
        }
    }

    /// Zeroes the output projection so every logit is 0.
    pub fn zero_output_layer(&mut self) {
        self.head2.weight.value.fill(T::zero());
        self.head2.bias.value.fill(T::zero());
    }

    fn check(&self, len: usize, cond: &ConditioningSignal<T>) -> Result<(), ModelError> {
        if cond.len() != len {
            return Err(ModelError::LengthMismatch { what: "decoder samples vs conditioning", left: len, right: cond.len() });
        }
        if cond.channels() != self.spec.conditioning_dim {
            return Err(ModelError::LengthMismatch {
                what: "conditioning channels",
                left: cond.channels(),
                right: self.spec.conditioning_dim,
            });
        }
        Ok(())
    }

    fn embed_inputs(&self, inputs: &[u8]) -> Tensor<T> {
        let r = self.spec.residual_channels;
        let len = inputs.len();
        let mut x = Tensor::zeros(&[r, len]);
        let table = self.embed.value.data();
        for (t, &i) in inputs.iter().enumerate() {
            let row = &table[i as usize * r..(i as usize + 1) * r];
            for (c, &v) in row.iter().enumerate() {
                x.data_mut()[c * len + t] = v;
            }
        }
        x
    }

    fn run(
        &self,
        samples: &[u8],
        cond: &ConditioningSignal<T>,
        keep: bool,
    ) -> Result<(Tensor<T>, Option<DecoderCache<T>>), ModelError> {
        self.check(samples.len(), cond)?;
        let len = samples.len();
        let r = self.spec.residual_channels;
        let inputs = shifted_inputs(samples);
        let hop = cond.hop();
        let mut x = self.embed_inputs(&inputs);
        let mut skip_sum = Tensor::zeros(&[self.spec.skip_channels, len]);
        let mut layer_inputs = Vec::new();
        let mut gates = Vec::new();
        let mut g = Tensor::zeros(&[r, len]);
        for layer in &self.layers {
            let mut z = layer.conv.forward(&x)?;
            add_broadcast(&mut z, &layer.cond.forward(cond.frames())?, hop);
            let (za, zb) = z.data().split_at(r * len);
            let mut th = Tensor::zeros(&[r, len]);
            let mut sg = Tensor::zeros(&[r, len]);
            gate_forward_parts(za, zb, th.data_mut(), sg.data_mut(), g.data_mut());
            let next = {
                let mut n = layer.res.forward(&g)?;
                n.add_assign(&x)?;
                n
            };
            skip_sum.add_assign(&layer.skip.forward(&g)?)?;
            if keep {
                layer_inputs.push(x);
                gates.push((th, sg));
            }
            x = next;
        }
        let mut head_in = skip_sum;
        add_broadcast(&mut head_in, &self.head_cond.forward(cond.frames())?, hop);
        let head_mid = self.head1.forward(&relu(&head_in))?;
        let logits = self.head2.forward(&relu(&head_mid))?;
        let cache = keep.then(|| DecoderCache {
            inputs,
            cond_frames: cond.frames().clone(),
            hop,
            layer_inputs,
            gates,
            head_in,
            head_mid,
        });
        Ok((logits, cache))
    }

    /// Teacher-forced logits `[quant_levels, T]`; column `t` predicts
    /// `samples[t]` from `samples[..t]`.
    pub fn logits(&self, samples: &[u8], cond: &ConditioningSignal<T>) -> Result<Tensor<T>, ModelError> {
        Ok(self.run(samples, cond, false)?.0)
    }

    pub fn forward_train(
        &self,
        samples: &[u8],
        cond: &ConditioningSignal<T>,
    ) -> Result<(Tensor<T>, DecoderCache<T>), ModelError> {
        let (logits, cache) = self.run(samples, cond, true)?;
        Ok((logits, cache.expect("cache requested")))
    }

    /// Accumulates parameter gradients and returns `dL/dcond` at frame rate.
    pub fn backward(&mut self, cache: &DecoderCache<T>, grad_logits: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let r = self.spec.residual_channels;
        let len = cache.inputs.len();
        let hop = cache.hop;
        let frames = cache.cond_frames.cols();
        let a_mid = relu(&cache.head_mid);
        let g_mid = relu_backward(&cache.head_mid, &self.head2.backward(&a_mid, grad_logits)?);
        let a_in = relu(&cache.head_in);
        let g_skip = relu_backward(&cache.head_in, &self.head1.backward(&a_in, &g_mid)?);
        let mut g_cond = self.head_cond.backward(&cache.cond_frames, &sum_windows(&g_skip, hop, frames))?;

        let mut g_x = Tensor::zeros(&[r, len]);
        let mut gate = Tensor::zeros(&[r, len]);
        let mut g_z = Tensor::zeros(&[2 * r, len]);
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let (th, sg) = &cache.gates[i];
            for ((o, &a), &b) in gate.data_mut().iter_mut().zip(th.data()).zip(sg.data()) {
                *o = a * b;
            }
            let mut g_gate = layer.skip.backward(&gate, &g_skip)?;
            g_gate.add_assign(&layer.res.backward(&gate, &g_x)?)?;
            {
                let (ga, gb) = g_z.data_mut().split_at_mut(r * len);
                gate_backward_parts(th.data(), sg.data(), g_gate.data(), ga, gb);
            }
            g_cond.add_assign(&layer.cond.backward(&cache.cond_frames, &sum_windows(&g_z, hop, frames))?)?;
            g_x.add_assign(&layer.conv.backward(&cache.layer_inputs[i], &g_z)?)?;
        }
        let table = self.embed.grad.data_mut();
        for (t, &i) in cache.inputs.iter().enumerate() {
            let row = &mut table[i as usize * r..(i as usize + 1) * r];
            for (c, v) in row.iter_mut().enumerate() {
                *v += g_x.data()[c * len + t];
            }
        }
        Ok(g_cond)
    }

    pub fn cast<U: Scalar>(&self) -> Decoder<U> {
        Decoder {
            spec: self.spec.clone(),
            embed: self.embed.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| DecoderLayer { conv: l.conv.cast(), cond: l.cond.cast(), res: l.res.cast(), skip: l.skip.cast() })
                .collect(),
            head_cond: self.head_cond.cast(),
            head1: self.head1.cast(),
            head2: self.head2.cast(),
        }
    }
}

impl<T: Scalar> Module<T> for Decoder<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(prefixed(&format!("layers.{i}.conv"), l.conv.params()));
            out.extend(prefixed(&format!("layers.{i}.cond"), l.cond.params()));
            out.extend(prefixed(&format!("layers.{i}.res"), l.res.params()));
            out.extend(prefixed(&format!("layers.{i}.skip"), l.skip.params()));
        }
        out.extend(prefixed("head_cond", self.head_cond.params()));
        out.extend(prefixed("head1", self.head1.params()));
        out.extend(prefixed("head2", self.head2.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = vec![("embed".to_string(), &mut self.embed)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(prefixed(&format!("layers.{i}.conv"), l.conv.params_mut()));
            out.extend(prefixed(&format!("layers.{i}.cond"), l.cond.params_mut()));
            out.extend(prefixed(&format!("layers.{i}.res"), l.res.params_mut()));
            out.extend(prefixed(&format!("layers.{i}.skip"), l.skip.params_mut()));
        }
        out.extend(prefixed("head_cond", self.head_cond.params_mut()));
        out.extend(prefixed("head1", self.head1.params_mut()));
        out.extend(prefixed("head2", self.head2.params_mut()));
        out
    }
}
