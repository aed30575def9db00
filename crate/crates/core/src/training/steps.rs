//! Single optimization steps of both training phases.

use crate::dataset::TrainingItem;
use crate::model::{build_conditioning, ModelError, SvcModel};
use crate::nn::{argmax, cross_entropy_vector, softmax_cross_entropy, Adam, Tensor};
use crate::scalar::{DenormalGuard, Scalar};

use super::BacktranslationItem;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConfusionStats {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AutoencoderStats {
    /// Mean teacher-forced cross-entropy of the reconstructions.
    pub reconstruction: f64,
    /// Mean confusion-network cross-entropy on the same latents.
    pub adversarial: f64,
    /// `reconstruction - lambda * adversarial`.
    pub total: f64,
}

pub(crate) fn to_scalars<T: Scalar>(xs: &[f32]) -> Vec<T> {
    xs.iter().map(|&x| T::of(x as f64)).collect()
}

fn targets(indices: &[u8]) -> Vec<usize> {
    indices.iter().map(|&i| i as usize).collect()
}

/// Forward and backward of `D[v_j](E(input))` against `target`, scaled by
/// `scale`. With `lambda`, also backpropagates `-lambda * L(C(E(input)), j)`
/// into the encoder without touching the confusion gradients. Returns the
/// reconstruction and confusion cross-entropies.
fn reconstruction_pass<T: Scalar>(
    model: &mut SvcModel<T>,
    input: &[T],
    target: &[u8],
    singer: usize,
    scale: f64,
    lambda: Option<f64>,
) -> Result<(f64, f64), ModelError> {
    let (latent, ecache) = model.encoder.forward_train(input)?;
    let cond = build_conditioning(&latent, model.embeddings.vector(singer), model.spec.hop())?;
    let (logits, dcache) = model.decoder.forward_train(target, &cond)?;
    let (rec, mut g) = softmax_cross_entropy(&logits, &targets(target))?;
    g.scale(T::of(scale));
    let dcond = model.decoder.backward(&dcache, &g)?;

    let dim = latent.frames.rows();
    let frames = latent.frames.cols();
    let mut dlatent = Tensor::zeros(&[dim, frames]);
    for r in 0..dim {
        dlatent.row_mut(r).copy_from_slice(dcond.row(r));
    }
    let grad_v = model.embeddings.grad_mut(singer);
    for (j, gv) in grad_v.iter_mut().enumerate() {
        *gv += dcond.row(dim + j).iter().copied().sum::<T>();
    }

    let mut adv = 0.0;
    if let Some(lambda) = lambda {
        let (clogits, ccache) = model.confusion.forward_train(&latent)?;
        let (l, mut gc) = cross_entropy_vector(&clogits, singer)?;
        adv = l.as_f64();
        let s = T::of(-lambda * scale);
        gc.iter_mut().for_each(|v| *v *= s);
        dlatent.add_assign(&model.confusion.backward(&ccache, &gc, false)?)?;
    }
    model.encoder.backward(&ecache, &dlatent)?;
    Ok((rec.as_f64(), adv))
}

/// One update of the confusion network on `L(C(E(s^j)), j)`. The encoder
/// is only run forward, so encoder and decoder parameters and gradients
/// are untouched.
pub fn confusion_step<T: Scalar>(
    model: &mut SvcModel<T>,
    opt: &mut Adam<T>,
    batch: &[TrainingItem],
) -> Result<ConfusionStats, ModelError> {
    let _flush = DenormalGuard::new();
    let scale = T::one() / T::of_usize(batch.len());
    let mut stats = ConfusionStats::default();
    for item in batch {
        let latent = model.encoder.encode(&to_scalars::<T>(&item.companded))?;
        let (logits, cache) = model.confusion.forward_train(&latent)?;
        let (l, mut g) = cross_entropy_vector(&logits, item.singer_index)?;
        stats.loss += l.as_f64();
        if argmax(&logits) == item.singer_index {
            stats.accuracy += 1.0;
        }
        g.iter_mut().for_each(|v| *v *= scale);
        model.confusion.backward(&cache, &g, true)?;
    }
    opt.step(model.confusion_params_mut());
    stats.loss /= batch.len() as f64;
    stats.accuracy /= batch.len() as f64;
    Ok(stats)
}

/// Accumulates the gradient of the reconstruction loss minus `lambda` times
/// the confusion loss into encoder, decoder and embeddings.
pub fn autoencoder_gradients<T: Scalar>(
    model: &mut SvcModel<T>,
    batch: &[TrainingItem],
    lambda: f64,
) -> Result<AutoencoderStats, ModelError> {
    let _flush = DenormalGuard::new();
    let scale = 1.0 / batch.len() as f64;
    let (mut rec, mut adv) = (0.0, 0.0);
    for item in batch {
        let input = to_scalars::<T>(&item.companded);
        let (r, a) = reconstruction_pass(model, &input, &item.mulaw.indices, item.singer_index, scale, Some(lambda))?;
        rec += r * scale;
        adv += a * scale;
    }
    Ok(AutoencoderStats { reconstruction: rec, adversarial: adv, total: rec - lambda * adv })
}

/// One update of encoder, decoder and embeddings on the reconstruction loss
/// minus `lambda` times the confusion loss, followed by the unit-ball
/// projection. The confusion network is frozen.
pub fn autoencoder_step<T: Scalar>(
    model: &mut SvcModel<T>,
    opt: &mut Adam<T>,
    batch: &[TrainingItem],
    lambda: f64,
) -> Result<AutoencoderStats, ModelError> {
    let stats = autoencoder_gradients(model, batch, lambda)?;
    opt.step(model.autoencoder_params_mut());
    model.embeddings.project();
    Ok(stats)
}

/// One update on `L(D[v_j](E(s^j_u)), s^j)` scaled by `weight`. The
/// confusion network is not involved.
pub fn backtranslation_step<T: Scalar>(
    model: &mut SvcModel<T>,
    opt: &mut Adam<T>,
    items: &[BacktranslationItem],
    weight: f64,
) -> Result<f64, ModelError> {
    let _flush = DenormalGuard::new();
    let scale = 1.0 / items.len() as f64;
    let mut loss = 0.0;
    for item in items {
        let input: Vec<T> = item.synthetic.companded().iter().map(|&x| T::of(x as f64)).collect();
        let (r, _) = reconstruction_pass(model, &input, &item.source.indices, item.source_singer, scale * weight, None)?;
        loss += r * scale;
    }
    opt.step(model.autoencoder_params_mut());
    model.embeddings.project();
    Ok(loss)
}

/// Loss values without any parameter update.
pub mod objective {
    use super::*;

    pub fn reconstruction<T: Scalar>(model: &SvcModel<T>, input: &[T], target: &[u8], singer: usize) -> Result<f64, ModelError> {
        let logits = model.reconstruction_logits(input, target, singer)?;
        Ok(softmax_cross_entropy(&logits, &targets(target))?.0.as_f64())
    }

    pub fn confusion<T: Scalar>(model: &SvcModel<T>, input: &[T], singer: usize) -> Result<f64, ModelError> {
        let latent = model.encoder.encode(input)?;
        let logits = model.confusion.classify(&latent)?;
        Ok(cross_entropy_vector(&logits, singer)?.0.as_f64())
    }

    /// Mean reconstruction minus `lambda` times mean confusion loss.
    pub fn phase1<T: Scalar>(model: &SvcModel<T>, batch: &[TrainingItem], lambda: f64) -> Result<f64, ModelError> {
        let mut rec = 0.0;
        let mut conf = 0.0;
        for item in batch {
            let input = to_scalars::<T>(&item.companded);
            rec += reconstruction(model, &input, &item.mulaw.indices, item.singer_index)?;
            conf += confusion(model, &input, item.singer_index)?;
        }
        let n = batch.len() as f64;
        Ok(rec / n - lambda * conf / n)
    }

    pub fn backtranslation<T: Scalar>(model: &SvcModel<T>, items: &[BacktranslationItem]) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for item in items {
            let input: Vec<T> = item.synthetic.companded().iter().map(|&x| T::of(x as f64)).collect();
            total += reconstruction(model, &input, &item.source.indices, item.source_singer)?;
        }
        Ok(total / items.len() as f64)
    }

    /// The full second-phase objective, accumulated term by term over both
    /// sets in a single pass.
    pub fn phase2<T: Scalar>(
        model: &SvcModel<T>,
        batch: &[TrainingItem],
        items: &[BacktranslationItem],
        lambda: f64,
        weight: f64,
    ) -> Result<f64, ModelError> {
        let mut total = 0.0;
        let nb = batch.len() as f64;
        let ni = items.len() as f64;
        for item in batch {
            let input = to_scalars::<T>(&item.companded);
            total += reconstruction(model, &input, &item.mulaw.indices, item.singer_index)? / nb;
            total -= lambda * confusion(model, &input, item.singer_index)? / nb;
        }
        for item in items {
            let input: Vec<T> = item.synthetic.companded().iter().map(|&x| T::of(x as f64)).collect();
            total += weight * reconstruction(model, &input, &item.source.indices, item.source_singer)? / ni;
        }
        Ok(total)
    }
}
