//! Autoregressive generation and conversion.
//!
//! [`generate_naive`] reruns the teacher-forced decoder on the whole prefix
//! for every sample. [`generate_incremental`] keeps, for each residual layer,
//! a ring buffer of the past inputs its dilated taps read, so a step costs
//! one matrix-vector product per tap. Both draw one uniform per step from
//! the same seeded stream and sample by inverse CDF, which makes their
//! outputs comparable index by index.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::{self, compand, decode_index, AudioClip, AudioError, START_INDEX};
use crate::model::{Checkpoint, ConditioningSignal, Decoder, ModelError, SvcModel};
use crate::nn::linalg::matvec_acc;
use crate::nn::{argmax, Tensor};
use crate::scalar::{DenormalGuard, Scalar};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("clip has {len} samples; at least {min} are required")]
    TooShort { len: usize, min: usize },
    #[error("temperature must be finite and >= 0, got {0}")]
    BadTemperature(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Draws an index from `softmax(logits / temperature)` by inverse CDF at
/// `u ∈ [0, 1)`. Temperature 0 selects the first maximum.
pub fn sample_index<T: Scalar>(logits: &[T], temperature: f64, u: f64) -> u8 {
    if temperature == 0.0 {
        return argmax(logits) as u8;
    }
    let max = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|v| ((v.as_f64() - max) / temperature).exp()).collect();
    let target = u * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
        }
        acc += w;
        if acc > target {
            return i as u8;
        }
    }
    last as u8
}

fn check_temperature(t: f64) -> Result<(), InferenceError> {
    if !t.is_finite() || t < 0.0 {
        return Err(InferenceError::BadTemperature(t));
    }
    Ok(())
}

/// Reference generator, quadratic in the output length. `on_step` sees the
/// logits used at every step.
pub fn generate_naive_traced<T: Scalar>(
    decoder: &Decoder<T>,
    cond: &ConditioningSignal<T>,
    seed: u64,
    temperature: f64,
    mut on_step: impl FnMut(usize, &[T]) -> bool,
) -> Result<Vec<u8>, InferenceError> {
    check_temperature(temperature)?;
    let _flush = DenormalGuard::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cond.len());
    let mut column = vec![T::zero(); decoder.spec.quant_levels];
    for t in 0..cond.len() {
        // The value at position t is never seen by the logits at t.
        out.push(START_INDEX);
        let logits = decoder.logits(&out, &cond.truncated(t + 1))?;
        for (c, v) in column.iter_mut().enumerate() {
            *v = logits.at(c, t);
        }
        out[t] = sample_index(&column, temperature, rng.gen::<f64>());
        if !on_step(t, &column) {
            break;
        }
    }
    Ok(out)
}

pub fn generate_naive<T: Scalar>(
    decoder: &Decoder<T>,
    cond: &ConditioningSignal<T>,
    seed: u64,
    temperature: f64,
) -> Result<Vec<u8>, InferenceError> {
    generate_naive_traced(decoder, cond, seed, temperature, |_, _| true)
}

struct LayerWeights<T> {
    taps: Vec<Vec<T>>,
    conv_bias: Vec<T>,
    res: Vec<T>,
    res_bias: Vec<T>,
    skip: Vec<T>,
    skip_bias: Vec<T>,
    dilation: usize,
}

/// Ring buffers for every residual layer plus the time index and draw stream.
pub struct GenerationState<T> {
    /// Per layer: `(kernel - 1) * dilation` slots of `residual` values.
    rings: Vec<Vec<T>>,
    slots: Vec<usize>,
    t: usize,
    rng: ChaCha8Rng,
}

impl<T: Scalar> GenerationState<T> {
    pub fn new(decoder: &Decoder<T>, seed: u64) -> Self {
        let r = decoder.spec.residual_channels;
        let k = decoder.spec.kernel_size;
        let slots: Vec<usize> = decoder.spec.dilations().iter().map(|d| (k - 1) * d).collect();
        Self {
            rings: slots.iter().map(|s| vec![T::zero(); s * r]).collect(),
            slots,
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn buffer_sizes(&self) -> &[usize] {
        &self.slots
    }
}

/// Decoder weights repacked for single-step evaluation, with the
/// conditioning projections of one signal precomputed per frame.
pub struct IncrementalDecoder<'a, T> {
    decoder: &'a Decoder<T>,
    layers: Vec<LayerWeights<T>>,
    cond_proj: Vec<Tensor<T>>,
    head_cond: Tensor<T>,
    head1: Vec<T>,
    head2: Vec<T>,
    hop: usize,
}

impl<'a, T: Scalar> IncrementalDecoder<'a, T> {
    pub fn new(decoder: &'a Decoder<T>, cond: &ConditioningSignal<T>) -> Result<Self, InferenceError> {
        if cond.channels() != decoder.spec.conditioning_dim {
            return Err(ModelError::LengthMismatch {
                what: "conditioning channels",
                left: cond.channels(),
                right: decoder.spec.conditioning_dim,
            }
            .into());
        }
        let layers = decoder
            .layers
            .iter()
            .map(|l| LayerWeights {
                taps: (0..l.conv.kernel()).map(|k| l.conv.packed_tap(k)).collect(),
                conv_bias: l.conv.bias.value.data().to_vec(),
                res: l.res.packed_tap(0),
                res_bias: l.res.bias.value.data().to_vec(),
                skip: l.skip.packed_tap(0),
                skip_bias: l.skip.bias.value.data().to_vec(),
                dilation: l.conv.dilation,
            })
            .collect();
        let cond_proj =
            decoder.layers.iter().map(|l| l.cond.forward(cond.frames())).collect::<Result<Vec<_>, _>>().map_err(ModelError::from)?;
        let head_cond = decoder.head_cond.forward(cond.frames()).map_err(ModelError::from)?;
        Ok(Self {
            decoder,
            layers,
            cond_proj,
            head_cond,
            head1: decoder.head1.packed_tap(0),
            head2: decoder.head2.packed_tap(0),
            hop: cond.hop(),
        })
    }

    /// Logits for time `state.time()` given the previous index, then
    /// advances the state.
    pub fn step(&self, state: &mut GenerationState<T>, prev: u8, logits: &mut [T]) {
        let spec = &self.decoder.spec;
        let (r, s) = (spec.residual_channels, spec.skip_channels);
        let kernel = spec.kernel_size;
        let t = state.t;
        let frame = t / self.hop;
        let mut x: Vec<T> = self.decoder.embed.value.row(prev as usize).to_vec();
        let mut z = vec![T::zero(); 2 * r];
        let mut g = vec![T::zero(); r];
        let mut skip = vec![T::zero(); s];
        for (li, lw) in self.layers.iter().enumerate() {
            let proj = &self.cond_proj[li];
            for (c, v) in z.iter_mut().enumerate() {
                *v = lw.conv_bias[c] + proj.at(c, frame);
            }
            let slots = state.slots[li];
            let ring = &mut state.rings[li];
            for (k, w) in lw.taps.iter().enumerate() {
                let back = (kernel - 1 - k) * lw.dilation;
                if back == 0 {
                    matvec_acc(w, &x, &mut z);
                } else if t >= back {
                    let slot = (t - back) % slots;
                    matvec_acc(w, &ring[slot * r..(slot + 1) * r], &mut z);
                }
            }
            if slots > 0 {
                let slot = t % slots;
                ring[slot * r..(slot + 1) * r].copy_from_slice(&x);
            }
            for c in 0..r {
                let (th, sg) = T::tanh_sigmoid(z[c], z[r + c]);
                g[c] = th * sg;
            }
            for (c, v) in skip.iter_mut().enumerate() {
                *v += lw.skip_bias[c];
            }
            matvec_acc(&lw.skip, &g, &mut skip);
            for c in 0..r {
                x[c] += lw.res_bias[c];
            }
            matvec_acc(&lw.res, &g, &mut x);
        }
        let h: Vec<T> = (0..s).map(|c| (skip[c] + self.head_cond.at(c, frame)).max(T::zero())).collect();
        let mut mid = self.decoder.head1.bias.value.data().to_vec();
        matvec_acc(&self.head1, &h, &mut mid);
        mid.iter_mut().for_each(|v| *v = v.max(T::zero()));
        logits.copy_from_slice(self.decoder.head2.bias.value.data());
        matvec_acc(&self.head2, &mid, logits);
        state.t += 1;
    }
}

/// Cached generator; same sampling rule and draw stream as
/// [`generate_naive_traced`].
pub fn generate_incremental_traced<T: Scalar>(
    decoder: &Decoder<T>,
    cond: &ConditioningSignal<T>,
    seed: u64,
    temperature: f64,
    mut on_step: impl FnMut(usize, &[T]) -> bool,
) -> Result<Vec<u8>, InferenceError> {
    check_temperature(temperature)?;
    let _flush = DenormalGuard::new();
    let engine = IncrementalDecoder::new(decoder, cond)?;
    let mut state = GenerationState::new(decoder, seed);
    let mut logits = vec![T::zero(); decoder.spec.quant_levels];
    let mut out = Vec::with_capacity(cond.len());
    let mut prev = START_INDEX;
    for t in 0..cond.len() {
        engine.step(&mut state, prev, &mut logits);
        prev = sample_index(&logits, temperature, state.rng.gen::<f64>());
        out.push(prev);
        if !on_step(t, &logits) {
            break;
        }
    }
    Ok(out)
}

pub fn generate_incremental<T: Scalar>(
    decoder: &Decoder<T>,
    cond: &ConditioningSignal<T>,
    seed: u64,
    temperature: f64,
) -> Result<Vec<u8>, InferenceError> {
    generate_incremental_traced(decoder, cond, seed, temperature, |_, _| true)
}

/// `D[v](E(s))` on a companded signal whose length is a multiple of the
/// pooling period.
pub fn generate_from_companded<T: Scalar>(
    model: &SvcModel<T>,
    companded: &[T],
    embedding: &[T],
    seed: u64,
    temperature: f64,
) -> Result<Vec<u8>, InferenceError> {
    let latent = model.encoder.encode(companded)?;
    let cond = model.condition(&latent, embedding)?;
    generate_incremental(&model.decoder, &cond, seed, temperature)
}

/// Converts `clip` to singer `singer`. The clip is resampled to the model
/// rate, zero-padded to the pooling grid, generated, trimmed and resampled
/// back, so the output has the input's rate and length.
pub fn convert_with_model<T: Scalar>(
    model: &SvcModel<T>,
    clip: &AudioClip,
    singer: usize,
    temperature: f64,
    seed: u64,
) -> Result<AudioClip, InferenceError> {
    let rate = model.spec.sample_rate;
    let work = audio::resample(clip, rate);
    let pool = model.spec.hop();
    if work.len() < pool {
        return Err(InferenceError::TooShort { len: clip.len(), min: pool * clip.sample_rate as usize / rate as usize });
    }
    if singer >= model.k() {
        return Err(ModelError::UnknownSinger { id: singer.to_string(), known: (0..model.k()).map(|i| i.to_string()).collect() }.into());
    }
    let padded = work.len().div_ceil(pool) * pool;
    let mut companded: Vec<T> = work.samples.iter().map(|&x| T::of(compand(x.clamp(-1.0, 1.0) as f64))).collect();
    companded.resize(padded, T::zero());
    let indices = generate_from_companded(model, &companded, model.embeddings.vector(singer), seed, temperature)?;
    let samples: Vec<f32> = indices[..work.len()].iter().map(|&i| decode_index(i) as f32).collect();
    let generated = AudioClip::new(samples, rate)?;
    if rate == clip.sample_rate {
        return Ok(generated);
    }
    let mut back = audio::resample(&generated, clip.sample_rate);
    back.samples.resize(clip.len(), 0.0);
    Ok(back)
}

/// Converts with a checkpoint, looking the target singer up by id.
pub fn convert(
    clip: &AudioClip,
    target_singer_id: &str,
    checkpoint: &Checkpoint,
    temperature: f64,
    seed: u64,
) -> Result<AudioClip, InferenceError> {
    let singer = checkpoint.singer_index(target_singer_id)?;
    convert_with_model(&checkpoint.model, clip, singer, temperature, seed)
}

#[derive(Clone, Debug)]
pub struct ThroughputReport {
    pub steps: usize,
    pub incremental_secs: f64,
    /// Naive steps actually run before stopping.
    pub naive_steps_run: usize,
    pub naive_secs_measured: f64,
    /// Lower bound on the naive time for all `steps`.
    pub naive_secs_lower_bound: f64,
}

impl ThroughputReport {
    /// Lower bound on the incremental speedup.
    pub fn speedup_lower_bound(&self) -> f64 {
        self.naive_secs_lower_bound / self.incremental_secs
    }
}

/// Times both generators on `cond`.
///
/// Naive step `t` runs the full network on `t + 1` samples, so its cost never
/// decreases with `t`. Once the measured time plus the remaining steps at the
/// cheapest recent step cost exceeds `stop_ratio` times the incremental
/// time, the naive run stops and that sum is reported as a lower bound. At
/// least a sixteenth of the steps are always measured.
pub fn benchmark_throughput<T: Scalar>(
    decoder: &Decoder<T>,
    cond: &ConditioningSignal<T>,
    seed: u64,
    stop_ratio: f64,
) -> Result<ThroughputReport, InferenceError> {
    let steps = cond.len();
    let start = Instant::now();
    generate_incremental(decoder, cond, seed, 1.0)?;
    let incremental_secs = start.elapsed().as_secs_f64();

    let budget = stop_ratio * incremental_secs;
    let min_run = steps.div_ceil(16);
    let start = Instant::now();
    let mut last = start;
    let mut recent: Vec<f64> = Vec::new();
    let mut bound = 0.0;
    let mut run = 0;
    generate_naive_traced(decoder, cond, seed, 1.0, |t, _| {
        let now = Instant::now();
        recent.push(now.duration_since(last).as_secs_f64());
        last = now;
        if recent.len() > 8 {
            recent.remove(0);
        }
        run = t + 1;
        let floor = recent.iter().copied().fold(f64::INFINITY, f64::min);
        let elapsed = now.duration_since(start).as_secs_f64();
        bound = elapsed + (steps - run) as f64 * floor;
        bound < budget || run < min_run
    })?;
    Ok(ThroughputReport {
        steps,
        incremental_secs,
        naive_steps_run: run,
        naive_secs_measured: last.duration_since(start).as_secs_f64(),
        naive_secs_lower_bound: bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DecoderSpec, EncoderSpec, ModelSpec};

    fn small_decoder(seed: u64) -> Decoder<f64> {
        let spec = DecoderSpec {
            blocks: 2,
            layers_per_block: 3,
            kernel_size: 2,
            residual_channels: 6,
            skip_channels: 5,
            quant_levels: 256,
            conditioning_dim: 3,
        };
        Decoder::new(&spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn cond(len: usize, hop: usize, seed: u64) -> ConditioningSignal<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ConditioningSignal::from_frames(Tensor::uniform(&[3, len.div_ceil(hop)], 1.0, &mut rng), hop, len)
    }

    #[test]
    fn inverse_cdf_examples() {
        let logits = [0.0f64, 0.0, 0.0, 0.0];
        assert_eq!(sample_index(&logits, 1.0, 0.0), 0);
        assert_eq!(sample_index(&logits, 1.0, 0.3), 1);
        assert_eq!(sample_index(&logits, 1.0, 0.99), 3);
        assert_eq!(sample_index(&[1.0f64, 5.0, 2.0], 0.0, 0.0), 1);
    }

    #[test]
    fn naive_and_incremental_agree_in_f64() {
        let dec = small_decoder(1);
        let c = cond(120, 10, 2);
        let mut a_logits = Vec::new();
        let a = generate_naive_traced(&dec, &c, 9, 1.0, |_, l| {
            a_logits.push(l.to_vec());
            true
        })
        .unwrap();
        let mut b_logits = Vec::new();
        let b = generate_incremental_traced(&dec, &c, 9, 1.0, |_, l| {
            b_logits.push(l.to_vec());
            true
        })
        .unwrap();
        assert_eq!(a, b);
        for (x, y) in a_logits.iter().flatten().zip(b_logits.iter().flatten()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn argmax_generation_is_deterministic_and_full_length() {
        let dec = small_decoder(3);
        let c = cond(57, 8, 4);
        let a = generate_incremental(&dec, &c, 1, 0.0).unwrap();
        let b = generate_incremental(&dec, &c, 2, 0.0).unwrap();
        assert_eq!(a.len(), 57);
        assert_eq!(a, b);
    }

    #[test]
    fn ring_buffers_match_dilations() {
        let dec = small_decoder(5);
        let state = GenerationState::new(&dec, 0);
        assert_eq!(state.buffer_sizes(), &[1, 2, 4, 1, 2, 4]);
        assert_eq!(state.time(), 0);
    }

    #[test]
    fn negative_temperature_is_rejected() {
        let dec = small_decoder(6);
        assert!(matches!(generate_incremental(&dec, &cond(8, 4, 0), 0, -1.0), Err(InferenceError::BadTemperature(_))));
    }

    #[test]
    fn conversion_preserves_length() {
        let spec = ModelSpec {
            sample_rate: 8000,
            encoder: EncoderSpec { blocks: 1, layers_per_block: 2, channels: 4, latent_dim: 3, kernel_size: 3, pool: 40 },
            decoder: DecoderSpec {
                blocks: 1,
                layers_per_block: 2,
                kernel_size: 2,
                residual_channels: 4,
                skip_channels: 4,
                quant_levels: 256,
                conditioning_dim: 5,
            },
            confusion: Default::default(),
            embedding_dim: 2,
        };
        let model = SvcModel::<f32>::new(&spec, 2, 0).unwrap();
        for len in [40, 41, 400] {
            let clip = AudioClip::new((0..len).map(|i| (i as f32 * 0.1).sin() * 0.5).collect(), 8000).unwrap();
            assert_eq!(convert_with_model(&model, &clip, 1, 1.0, 0).unwrap().len(), len);
        }
        let short = AudioClip::new(vec![0.0; 39], 8000).unwrap();
        assert!(matches!(convert_with_model(&model, &short, 0, 1.0, 0), Err(InferenceError::TooShort { .. })));
        let other_rate = AudioClip::new(vec![0.1; 1000], 16000).unwrap();
        let out = convert_with_model(&model, &other_rate, 0, 1.0, 0).unwrap();
        assert_eq!((out.len(), out.sample_rate), (1000, 16000));
    }
}
