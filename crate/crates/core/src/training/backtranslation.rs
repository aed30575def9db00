//! Synthetic pairs for the second phase: a crop of singer `j` converted to
//! a mixup singer `u`, paired with the original crop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio::MuLawClip;
use crate::dataset::{Corpus, TrainingItem};
use crate::inference::generate_from_companded;
use crate::model::{EmbeddingTable, SvcModel};
use crate::nn::Tensor;
use crate::scalar::Scalar;

use super::steps::to_scalars;
use super::TrainError;

#[derive(Clone, Debug, PartialEq)]
pub struct BacktranslationItem {
    /// `s^j_u`, the crop regenerated as the mixup singer.
    pub synthetic: MuLawClip,
    /// The original crop `s^j`.
    pub source: MuLawClip,
    pub source_singer: usize,
    pub other_singer: usize,
    pub alpha: f64,
}

/// `α v_j + (1 - α) v_j'`.
pub fn mixup_embedding<T: Scalar>(
    table: &EmbeddingTable<T>,
    j: usize,
    j_prime: usize,
    alpha: f64,
) -> Result<Vec<T>, TrainError> {
    if j == j_prime {
        return Err(TrainError::SameSinger(j));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TrainError::BadAlpha(alpha));
    }
    let a = T::of(alpha);
    let b = T::of(1.0 - alpha);
    Ok(table.vector(j).iter().zip(table.vector(j_prime)).map(|(&x, &y)| a * x + b * y).collect())
}

/// How synthetic items are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BacktranslationOptions {
    pub temperature: f64,
    /// `None` draws `α ~ U[0, 1]`; `Some(a)` fixes it.
    pub alpha: Option<f64>,
}

impl Default for BacktranslationOptions {
    fn default() -> Self {
        Self { temperature: 1.0, alpha: None }
    }
}

struct Plan {
    crop: TrainingItem,
    other: usize,
    alpha: f64,
    seed: u64,
}

/// Draws `n_items` source crops, partner singers and mixing weights from
/// `seed`, then synthesizes every item. Items are generated in parallel;
/// the result does not depend on the thread count.
pub fn generate_backtranslation_set<T: Scalar>(
    corpus: &Corpus,
    model: &SvcModel<T>,
    n_items: usize,
    crop_len: usize,
    seed: u64,
    options: BacktranslationOptions,
) -> Result<Vec<BacktranslationItem>, TrainError> {
    let k = model.k();
    if k < 2 {
        return Err(TrainError::TooFewSingers(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plans = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        let crop = corpus.sample_item(crop_len, &mut rng)?;
        let j = crop.singer_index;
        let other = (j + rng.gen_range(1..k)) % k;
        let drawn: f64 = rng.gen();
        plans.push(Plan { crop, other, alpha: options.alpha.unwrap_or(drawn), seed: rng.gen() });
    }
    plans
        .into_par_iter()
        .map(|p| {
            let j = p.crop.singer_index;
            let u = mixup_embedding(&model.embeddings, j, p.other, p.alpha)?;
            let input = to_scalars::<T>(&p.crop.companded);
            let indices = generate_from_companded(model, &input, &u, p.seed, options.temperature)?;
            Ok(BacktranslationItem {
                synthetic: MuLawClip { indices, sample_rate: corpus.sample_rate },
                source: p.crop.mulaw,
                source_singer: j,
                other_singer: p.other,
                alpha: p.alpha,
            })
        })
        .collect()
}

/// Identity pairs (`s^j_u = s^j`), mainly for tests.
pub fn identity_items(batch: &[TrainingItem]) -> Vec<BacktranslationItem> {
    batch
        .iter()
        .map(|b| BacktranslationItem {
            synthetic: b.mulaw.clone(),
            source: b.mulaw.clone(),
            source_singer: b.singer_index,
            other_singer: b.singer_index,
            alpha: 1.0,
        })
        .collect()
}

/// Item `i` as container tensors under `bt/{i}/`.
pub(crate) fn to_tensors(items: &[BacktranslationItem]) -> Vec<(String, Tensor<f32>)> {
    let idx = |v: &[u8]| Tensor::from_vec(&[v.len()], v.iter().map(|&x| x as f32).collect()).expect("1-d");
    let mut out = Vec::new();
    for (i, it) in items.iter().enumerate() {
        out.push((format!("bt/{i:06}/synthetic"), idx(&it.synthetic.indices)));
        out.push((format!("bt/{i:06}/source"), idx(&it.source.indices)));
        let meta = vec![it.source_singer as f32, it.other_singer as f32, it.alpha as f32];
        out.push((format!("bt/{i:06}/meta"), Tensor::from_vec(&[3], meta).expect("1-d")));
    }
    out
}

pub(crate) fn from_tensors(tensors: &[(String, Tensor<f32>)], sample_rate: u32) -> Vec<BacktranslationItem> {
    let find = |name: String| tensors.iter().find(|(n, _)| *n == name).map(|(_, t)| t);
    let idx = |t: &Tensor<f32>| t.data().iter().map(|&x| x as u8).collect::<Vec<u8>>();
    let mut out = Vec::new();
    for i in 0.. {
        let (Some(s), Some(src), Some(m)) =
            (find(format!("bt/{i:06}/synthetic")), find(format!("bt/{i:06}/source")), find(format!("bt/{i:06}/meta")))
        else {
            break;
        };
        out.push(BacktranslationItem {
            synthetic: MuLawClip { indices: idx(s), sample_rate },
            source: MuLawClip { indices: idx(src), sample_rate },
            source_singer: m.data()[0] as usize,
            other_singer: m.data()[1] as usize,
            alpha: m.data()[2] as f64,
        });
    }
    out
}
