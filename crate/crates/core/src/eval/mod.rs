//! Automatic identification: feature images, the singer classifier, top-1
//! accuracy, and a centroid oracle for synthetic singers.

mod features;
mod identifier;
mod oracle;
mod pipeline;

pub use features::{FeatureExtractor, FeatureImage, LogMel, LOG_FLOOR};
pub use identifier::{
    stack_images, train_identifier, IdCache, IdModelSpec, IdTrainConfig, Identifier, IdentifierNet,
};
pub use oracle::{centroid_oracle, nearest_centroid, spectral_centroid};
pub use pipeline::{
    corpus_identifier, corpus_segments, evaluate_model, generate_segments, mean_correlation, oracle_accuracy,
    profile_order, EvalMode, EvalOptions, EvalOutcome, Generated, Segment,
};

use std::path::Path;

use thiserror::Error;

use crate::audio::AudioClip;
use crate::inference::InferenceError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("clip has {len} samples, shorter than one {window}-sample window")]
    ClipTooShort { len: usize, window: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("identification needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("label {label} outside [0, {k})")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("cannot write report {path}: {reason}")]
    Report { path: String, reason: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Fraction of clips whose predicted singer equals the label.
pub fn top1_accuracy<F: FeatureExtractor>(
    identifier: &Identifier<F>,
    clips: &[(AudioClip, usize)],
) -> Result<f64, EvalError> {
    if clips.is_empty() {
        return Err(EvalError::Empty);
    }
    let refs: Vec<&AudioClip> = clips.iter().map(|(c, _)| c).collect();
    let predicted = identifier.predict_all(&refs)?;
    Ok(accuracy(&predicted, &clips.iter().map(|(_, y)| *y).collect::<Vec<_>>()))
}

/// Share of positions where the two label lists agree.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(predicted.len(), truth.len());
    if truth.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub clip: String,
    pub true_singer: String,
    pub predicted_singer: String,
}

impl ReportRow {
    pub fn correct(&self) -> bool {
        self.true_singer == self.predicted_singer
    }
}

/// One CSV row per clip, then a `summary` row with the top-1 accuracy and,
/// when given, the oracle accuracy.
pub fn write_report(path: &Path, rows: &[ReportRow], oracle_accuracy: Option<f64>) -> Result<(), EvalError> {
    let fail = |e: &dyn std::fmt::Display| EvalError::Report { path: path.display().to_string(), reason: e.to_string() };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| fail(&e))?;
    }
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path).map_err(|e| fail(&e))?;
    w.write_record(["clip", "true_singer", "predicted_singer", "correct"]).map_err(|e| fail(&e))?;
    for r in rows {
        let flag = if r.correct() { "1" } else { "0" };
        w.write_record([r.clip.as_str(), &r.true_singer, &r.predicted_singer, flag]).map_err(|e| fail(&e))?;
    }
    let correct = rows.iter().filter(|r| r.correct()).count();
    let top1 = if rows.is_empty() { 0.0 } else { correct as f64 / rows.len() as f64 };
    let mut summary = vec!["summary".to_string(), format!("top1={top1:.4}"), format!("n={}", rows.len())];
    if let Some(o) = oracle_accuracy {
        summary.push(format!("oracle={o:.4}"));
    }
    w.write_record(&summary).map_err(|e| fail(&e))?;
    w.flush().map_err(|e| fail(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts_matches() {
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]), 0.75);
        assert_eq!(accuracy(&[1, 0], &[1, 0]), 1.0);
    }

    #[test]
    fn complement_labels_sum_to_at_most_one() {
        let pred = [0, 1, 1, 0, 1];
        let truth = [0, 1, 0, 0, 0];
        let flipped: Vec<usize> = truth.iter().map(|t| 1 - t).collect();
        assert!(accuracy(&pred, &truth) + accuracy(&pred, &flipped) <= 1.0 + 1e-12);
    }

    #[test]
    fn report_has_one_row_per_clip_and_a_summary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r/report.csv");
        let rows = vec![
            ReportRow { clip: "a.wav".into(), true_singer: "x".into(), predicted_singer: "x".into() },
            ReportRow { clip: "b,c.wav".into(), true_singer: "y".into(), predicted_singer: "x".into() },
        ];
        write_report(&path, &rows, Some(1.0)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "\"b,c.wav\",y,x,0");
        assert_eq!(lines[3], "summary,top1=0.5000,n=2,oracle=1.0000");
    }
}
