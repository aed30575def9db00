//! Reconstruct or convert validation audio and score it with the
//! identifier and, for synthetic singers, the centroid oracle.

use rayon::prelude::*;

use crate::audio::{correlation, AudioClip};
use crate::dataset::{Corpus, Split};
use crate::inference::convert_with_model;
use crate::model::SvcModel;
use crate::synthdata::SingerProfile;

use super::features::LogMel;
use super::identifier::{train_identifier, IdModelSpec, IdTrainConfig, Identifier};
use super::oracle::centroid_oracle;
use super::{accuracy, EvalError, ReportRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Regenerate each clip as its own singer.
    Reconstruction,
    /// Regenerate each clip as the next singer in registry order.
    Conversion,
}

impl EvalMode {
    pub fn target(self, source: usize, k: usize) -> usize {
        match self {
            EvalMode::Reconstruction => source,
            EvalMode::Conversion => (source + 1) % k,
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "reconstruction" => Ok(EvalMode::Reconstruction),
            "conversion" => Ok(EvalMode::Conversion),
            other => Err(format!("unknown mode {other:?}; expected reconstruction or conversion")),
        }
    }
}

/// A labelled excerpt of a manifest file.
#[derive(Clone, Debug)]
pub struct Segment {
    pub name: String,
    pub singer: usize,
    pub clip: AudioClip,
}

/// Cuts every file of `split` into consecutive pieces of `seconds`
/// (a trailing remainder is dropped). `seconds <= 0` keeps files whole.
pub fn corpus_segments(corpus: &Corpus, split: Option<Split>, seconds: f64) -> Vec<Segment> {
    let mut out = Vec::new();
    for f in corpus.files.iter().filter(|f| split.is_none_or(|s| f.split == s)) {
        let len = if seconds > 0.0 { (seconds * corpus.sample_rate as f64).round() as usize } else { f.clip.len() };
        if len == 0 || len > f.clip.len() {
            continue;
        }
        for (i, start) in (0..=f.clip.len() - len).step_by(len).enumerate() {
            out.push(Segment { name: format!("{}#{i}", f.path), singer: f.singer, clip: f.clip.slice(start, len) });
        }
    }
    out
}

/// A segment and what the model made of it.
#[derive(Clone, Debug)]
pub struct Generated {
    pub segment: Segment,
    pub target: usize,
    pub output: AudioClip,
}

/// Generates every segment as its mode's target singer, in parallel. Seeds
/// are `seed + index`, so results do not depend on the thread count.
pub fn generate_segments(
    model: &SvcModel<f32>,
    segments: &[Segment],
    mode: EvalMode,
    temperature: f64,
    seed: u64,
) -> Result<Vec<Generated>, EvalError> {
    let k = model.k();
    segments
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let target = mode.target(s.singer, k);
            let output = convert_with_model(model, &s.clip, target, temperature, seed.wrapping_add(i as u64))?;
            Ok(Generated { segment: s.clone(), target, output })
        })
        .collect()
}

/// Maps each singer id to the index of the profile with the same name.
pub fn profile_order(singer_ids: &[String], profiles: &[SingerProfile]) -> Option<Vec<usize>> {
    singer_ids.iter().map(|id| profiles.iter().position(|p| &p.name == id)).collect()
}

/// Fraction of outputs the oracle assigns to their target singer. `None`
/// when some singer has no profile.
pub fn oracle_accuracy(generated: &[Generated], singer_ids: &[String], profiles: &[SingerProfile]) -> Option<f64> {
    let order = profile_order(singer_ids, profiles)?;
    let predicted: Vec<usize> = generated.par_iter().map(|g| centroid_oracle(&g.output, profiles)).collect();
    let truth: Vec<usize> = generated.iter().map(|g| order[g.target]).collect();
    Some(accuracy(&predicted, &truth))
}

/// Mean per-sample correlation between inputs and outputs.
pub fn mean_correlation(generated: &[Generated]) -> f64 {
    if generated.is_empty() {
        return 0.0;
    }
    generated.iter().map(|g| correlation(&g.segment.clip.samples, &g.output.samples)).sum::<f64>()
        / generated.len() as f64
}

/// Identifier trained on whole-file ground truth, on the training split or
/// on every file.
pub fn corpus_identifier(
    corpus: &Corpus,
    all_files: bool,
    spec: &IdModelSpec,
    config: &IdTrainConfig,
) -> Result<Identifier<LogMel>, EvalError> {
    let examples: Vec<(AudioClip, usize)> = corpus
        .files
        .iter()
        .filter(|f| all_files || f.split == Split::Train)
        .map(|f| (f.clip.clone(), f.singer))
        .collect();
    train_identifier(LogMel::standard(corpus.sample_rate), &examples, corpus.k(), spec, config)
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub temperature: f64,
    pub seed: u64,
    pub segment_seconds: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { mode: EvalMode::Conversion, temperature: 1.0, seed: 0, segment_seconds: 2.0 }
    }
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub rows: Vec<ReportRow>,
    pub top1: f64,
    pub oracle: Option<f64>,
    pub mean_correlation: f64,
}

/// Generates the validation segments and scores them against their
/// targets.
pub fn evaluate_model(
    model: &SvcModel<f32>,
    singer_ids: &[String],
    corpus: &Corpus,
    identifier: &Identifier<LogMel>,
    profiles: Option<&[SingerProfile]>,
    options: &EvalOptions,
) -> Result<EvalOutcome, EvalError> {
    let segments = corpus_segments(corpus, Some(Split::Validation), options.segment_seconds);
    if segments.is_empty() {
        return Err(EvalError::Empty);
    }
    let generated = generate_segments(model, &segments, options.mode, options.temperature, options.seed)?;
    let outputs: Vec<&AudioClip> = generated.iter().map(|g| &g.output).collect();
    let predicted = identifier.predict_all(&outputs)?;
    let rows: Vec<ReportRow> = generated
        .iter()
        .zip(&predicted)
        .map(|(g, &p)| ReportRow {
            clip: g.segment.name.clone(),
            true_singer: singer_ids[g.target].clone(),
            predicted_singer: singer_ids[p].clone(),
        })
        .collect();
    let top1 = accuracy(&predicted, &generated.iter().map(|g| g.target).collect::<Vec<_>>());
    Ok(EvalOutcome {
        rows,
        top1,
        oracle: profiles.and_then(|p| oracle_accuracy(&generated, singer_ids, p)),
        mean_correlation: mean_correlation(&generated),
    })
}
