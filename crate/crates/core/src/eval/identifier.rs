//! Convolutional singer classifier over feature images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio::AudioClip;
use crate::nn::{
    argmax, cross_entropy_vector, max_pool2d, max_pool2d_backward, relu, relu_backward, softmax, Adam, AdamConfig,
    BatchNorm2d, Conv2d, Linear, Module, Param, Tensor,
};
use crate::nn::image::BatchNormCache;
use crate::scalar::{DenormalGuard, Scalar};

use super::features::{FeatureExtractor, FeatureImage};
use super::EvalError;

#[derive(Clone, Debug, PartialEq)]
pub struct IdModelSpec {
    pub conv_layers: usize,
    pub channels: usize,
    pub kernel: usize,
    pub hidden: usize,
}

impl Default for IdModelSpec {
    fn default() -> Self {
        Self { conv_layers: 5, channels: 32, kernel: 3, hidden: 32 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Width of the random feature crops, in frames.
    pub crop_frames: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for IdTrainConfig {
    fn default() -> Self {
        Self { steps: 300, batch_size: 16, crop_frames: 64, learning_rate: 1e-3, seed: 0 }
    }
}

struct Stage<T> {
    input: Tensor<T>,
    norm: BatchNormCache<T>,
    pre_relu: Tensor<T>,
    pool_arg: Vec<usize>,
}

pub struct IdCache<T> {
    stages: Vec<Stage<T>>,
    grid: Vec<usize>,
    pooled: Tensor<T>,
    hidden: Tensor<T>,
}

/// Conv → batch norm → ReLU → 2×2 max pool, repeated; then a mean over the
/// remaining grid and two fully connected layers.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentifierNet<T> {
    pub convs: Vec<Conv2d<T>>,
    pub norms: Vec<BatchNorm2d<T>>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> IdentifierNet<T> {
    pub fn new(spec: &IdModelSpec, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = spec.channels;
        let convs = (0..spec.conv_layers)
            .map(|i| Conv2d::new(if i == 0 { 1 } else { c }, c, spec.kernel, &mut rng))
            .collect();
        Self {
            convs,
            norms: (0..spec.conv_layers).map(|_| BatchNorm2d::new(c)).collect(),
            fc1: Linear::new(c, spec.hidden, &mut rng),
            fc2: Linear::new(spec.hidden, k, &mut rng),
        }
    }

    pub fn k(&self) -> usize {
        self.fc2.weight.value.rows()
    }

    fn head(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), EvalError> {
        let [n, c, h, w] = *x.shape() else { unreachable!("4-d") };
        let area = T::of_usize(h * w);
        let mut pooled = Tensor::zeros(&[n, c]);
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                pooled.data_mut()[b * c + ch] = x.data()[base..base + h * w].iter().copied().sum::<T>() / area;
            }
        }
        let hidden = self.fc1.forward(&pooled)?;
        let logits = self.fc2.forward(&relu(&hidden))?;
        Ok((pooled, hidden, logits))
    }

    /// Logits `[N, k]` using running batch-norm statistics.
    pub fn forward(&self, images: &Tensor<T>) -> Result<Tensor<T>, EvalError> {
        let mut x = images.clone();
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            let y = norm.forward_eval(&conv.forward(&x)?)?;
            x = max_pool2d(&relu(&y))?.0;
        }
        Ok(self.head(&x)?.2)
    }

    /// Training-mode pass with batch statistics.
    pub fn forward_train(&mut self, images: &Tensor<T>) -> Result<(Tensor<T>, IdCache<T>), EvalError> {
        let mut x = images.clone();
        let mut stages = Vec::with_capacity(self.convs.len());
        for (conv, norm) in self.convs.iter().zip(self.norms.iter_mut()) {
            let z = conv.forward(&x)?;
            let (y, cache) = norm.forward_train(&z)?;
            let (pooled, arg) = max_pool2d(&relu(&y))?;
            stages.push(Stage { input: x, norm: cache, pre_relu: y, pool_arg: arg });
            x = pooled;
        }
        let grid = x.shape().to_vec();
        let (pooled, hidden, logits) = self.head(&x)?;
        Ok((logits, IdCache { stages, grid, pooled, hidden }))
    }

    pub fn backward(&mut self, cache: &IdCache<T>, grad_logits: &Tensor<T>) -> Result<(), EvalError> {
        let g_hidden = relu_backward(&cache.hidden, &self.fc2.backward(&relu(&cache.hidden), grad_logits)?);
        let g_pooled = self.fc1.backward(&cache.pooled, &g_hidden)?;
        let [n, c, h, w] = *cache.grid.as_slice() else { unreachable!("4-d") };
        let area = T::of_usize(h * w);
        let mut g = Tensor::zeros(&cache.grid);
        for b in 0..n {
            for ch in 0..c {
                let v = g_pooled.data()[b * c + ch] / area;
                let base = (b * c + ch) * h * w;
                g.data_mut()[base..base + h * w].iter_mut().for_each(|x| *x = v);
            }
        }
        for (i, stage) in cache.stages.iter().enumerate().rev() {
            let g_act = max_pool2d_backward(stage.pre_relu.shape(), &stage.pool_arg, &g);
            let g_norm = self.norms[i].backward(&stage.norm, &relu_backward(&stage.pre_relu, &g_act))?;
            g = self.convs[i].backward(&stage.input, &g_norm)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Module<T> for IdentifierNet<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, (c, n)) in self.convs.iter().zip(&self.norms).enumerate() {
            out.extend(c.params().into_iter().map(|(k, p)| (format!("conv{i}.{k}"), p)));
            out.extend(n.params().into_iter().map(|(k, p)| (format!("norm{i}.{k}"), p)));
        }
        out.extend(self.fc1.params().into_iter().map(|(k, p)| (format!("fc1.{k}"), p)));
        out.extend(self.fc2.params().into_iter().map(|(k, p)| (format!("fc2.{k}"), p)));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (i, (c, n)) in self.convs.iter_mut().zip(self.norms.iter_mut()).enumerate() {
            out.extend(c.params_mut().into_iter().map(|(k, p)| (format!("conv{i}.{k}"), p)));
            out.extend(n.params_mut().into_iter().map(|(k, p)| (format!("norm{i}.{k}"), p)));
        }
        out.extend(self.fc1.params_mut().into_iter().map(|(k, p)| (format!("fc1.{k}"), p)));
        out.extend(self.fc2.params_mut().into_iter().map(|(k, p)| (format!("fc2.{k}"), p)));
        out
    }
}

/// Stacks equally sized images into `[N, 1, bands, frames]`.
pub fn stack_images<T: Scalar>(images: &[&FeatureImage]) -> Tensor<T> {
    let (bands, frames) = (images[0].bands, images[0].frames);
    let mut data = Vec::with_capacity(images.len() * bands * frames);
    for img in images {
        assert_eq!((img.bands, img.frames), (bands, frames), "images must share a size");
        data.extend(img.data.iter().map(|&v| T::of(v as f64)));
    }
    Tensor::from_vec(&[images.len(), 1, bands, frames], data).expect("sizes checked")
}

/// A trained classifier together with the extractor it was trained on.
pub struct Identifier<F> {
    pub extractor: F,
    pub net: IdentifierNet<f32>,
}

impl<F: FeatureExtractor> Identifier<F> {
    /// Class probabilities for a whole clip.
    pub fn probabilities(&self, clip: &AudioClip) -> Result<Vec<f32>, EvalError> {
        let img = self.extractor.extract(clip)?;
        let logits = self.net.forward(&stack_images::<f32>(&[&img]))?;
        Ok(softmax(logits.data()))
    }

    pub fn predict(&self, clip: &AudioClip) -> Result<usize, EvalError> {
        Ok(argmax(&self.probabilities(clip)?))
    }

    /// Predictions for many clips, in parallel.
    pub fn predict_all(&self, clips: &[&AudioClip]) -> Result<Vec<usize>, EvalError> {
        clips.par_iter().map(|c| self.predict(c)).collect()
    }
}

/// Supervised training on random feature crops of labelled clips.
/// Deterministic for a fixed seed.
pub fn train_identifier<F: FeatureExtractor>(
    extractor: F,
    examples: &[(AudioClip, usize)],
    k: usize,
    spec: &IdModelSpec,
    config: &IdTrainConfig,
) -> Result<Identifier<F>, EvalError> {
    if k < 2 {
        return Err(EvalError::TooFewClasses(k));
    }
    if examples.is_empty() {
        return Err(EvalError::Empty);
    }
    let _flush = DenormalGuard::new();
    if let Some((_, bad)) = examples.iter().find(|(_, y)| *y >= k) {
        return Err(EvalError::LabelOutOfRange { label: *bad, k });
    }
    let images: Vec<FeatureImage> =
        examples.par_iter().map(|(clip, _)| extractor.extract(clip)).collect::<Result<_, _>>()?;
    let width = images.iter().map(|i| i.frames).min().unwrap_or(0).min(config.crop_frames).max(1);
    let mut net = IdentifierNet::<f32>::new(spec, k, config.seed);
    let mut opt = Adam::new(AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1d);
    for step in 0..config.steps {
        let mut crops = Vec::with_capacity(config.batch_size);
        let mut labels = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let i = rng.gen_range(0..images.len());
            let start = rng.gen_range(0..=images[i].frames - width);
            crops.push(images[i].crop(start, width));
            labels.push(examples[i].1);
        }
        let batch = stack_images::<f32>(&crops.iter().collect::<Vec<_>>());
        let (logits, cache) = net.forward_train(&batch)?;
        let n = labels.len();
        let mut grad = Tensor::zeros(logits.shape());
        let mut loss = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            let (l, g) = cross_entropy_vector(logits.row(b), y)?;
            loss += l as f64 / n as f64;
            for (d, v) in grad.row_mut(b).iter_mut().zip(g) {
                *d = v / n as f32;
            }
        }
        net.backward(&cache, &grad)?;
        opt.step(net.params_mut());
        if step % 50 == 0 {
            log::debug!("identifier step {step}: loss {loss:.4}");
        }
    }
    Ok(Identifier { extractor, net })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::features::LogMel;

    fn tone(freqs: &[f64], len: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase: Vec<f64> = freqs.iter().map(|_| rng.gen::<f64>() * std::f64::consts::TAU).collect();
        let s = (0..len)
            .map(|n| {
                let t = n as f64 / 8000.0;
                freqs.iter().zip(&phase).map(|(f, p)| (std::f64::consts::TAU * f * t + p).sin()).sum::<f64>() as f32
                    * 0.2
            })
            .collect();
        AudioClip::new(s, 8000).unwrap()
    }

    #[test]
    fn output_is_a_probability_vector() {
        let net = IdentifierNet::<f64>::new(&IdModelSpec::default(), 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::uniform(&[2, 1, 40, 37], 3.0, &mut rng);
        let logits = net.forward(&x).unwrap();
        assert_eq!(logits.shape(), [2, 3]);
        for b in 0..2 {
            let p = softmax(logits.row(b));
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn separates_low_and_high_tones() {
        let examples: Vec<(AudioClip, usize)> = (0..6)
            .flat_map(|i| [(tone(&[200.0, 400.0], 8000, i), 0), (tone(&[1500.0, 2100.0], 8000, 100 + i), 1)])
            .collect();
        let config = IdTrainConfig { steps: 40, batch_size: 8, crop_frames: 32, ..IdTrainConfig::default() };
        let id = train_identifier(LogMel::standard(8000), &examples, 2, &IdModelSpec::default(), &config).unwrap();
        assert_eq!(id.predict(&tone(&[210.0, 420.0], 8000, 77)).unwrap(), 0);
        assert_eq!(id.predict(&tone(&[1600.0, 2000.0], 8000, 78)).unwrap(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let examples = vec![(tone(&[300.0], 4000, 0), 0), (tone(&[1800.0], 4000, 1), 1)];
        let config = IdTrainConfig { steps: 3, batch_size: 2, crop_frames: 16, ..IdTrainConfig::default() };
        let a = train_identifier(LogMel::standard(8000), &examples, 2, &IdModelSpec::default(), &config).unwrap();
        let b = train_identifier(LogMel::standard(8000), &examples, 2, &IdModelSpec::default(), &config).unwrap();
        assert_eq!(a.net, b.net);
    }

    #[test]
    fn bad_labels_are_rejected() {
        let examples = vec![(tone(&[300.0], 4000, 0), 2)];
        let err = train_identifier(LogMel::standard(8000), &examples, 2, &IdModelSpec::default(), &IdTrainConfig::default());
        assert!(matches!(err, Err(EvalError::LabelOutOfRange { label: 2, k: 2 })));
    }
}
