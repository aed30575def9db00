//! Softmax cross-entropy, fused with its gradient.

use super::tensor::{ensure_rank2, Tensor};
use super::NnError;
use crate::scalar::Scalar;

/// Mean over time of `-log softmax(logits[:, t])[targets[t]]` for logits laid
/// out `[classes, time]`. Returns the loss and `dL/dlogits`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<(T, Tensor<T>), NnError> {
    let (classes, len) = ensure_rank2("softmax_cross_entropy", logits)?;
    if targets.len() != len {
        return Err(NnError::ShapeMismatch {
            op: "softmax_cross_entropy",
            detail: format!("{} targets for {len} steps", targets.len()),
        });
    }
    if let Some((t, &bad)) = targets.iter().enumerate().find(|(_, &c)| c >= classes) {
        return Err(NnError::InvalidArgument {
            op: "softmax_cross_entropy",
            detail: format!("target {bad} at step {t} outside [0, {classes})"),
        });
    }
    if len == 0 {
        return Ok((T::zero(), Tensor::zeros(logits.shape())));
    }
    // Row-wise passes keep the [classes, time] layout cache friendly.
    let mut max = vec![T::neg_infinity(); len];
    for c in 0..classes {
        for (m, &v) in max.iter_mut().zip(logits.row(c)) {
            *m = m.max(v);
        }
    }
    let mut grad = Tensor::zeros(&[classes, len]);
    let mut denom = vec![T::zero(); len];
    for c in 0..classes {
        let src = logits.row(c);
        let dst = grad.row_mut(c);
        for t in 0..len {
            let e = (src[t] - max[t]).exp();
            dst[t] = e;
            denom[t] += e;
        }
    }
    let inv_len = T::one() / T::of_usize(len);
    let mut loss = T::zero();
    for t in 0..len {
        loss += denom[t].ln() + max[t] - logits.at(targets[t], t);
    }
    for c in 0..classes {
        let dst = grad.row_mut(c);
        for t in 0..len {
            dst[t] = dst[t] / denom[t] * inv_len;
        }
    }
    for (t, &c) in targets.iter().enumerate() {
        grad.row_mut(c)[t] -= inv_len;
    }
    Ok((loss * inv_len, grad))
}

/// Cross-entropy of a single logit vector against one class.
pub fn cross_entropy_vector<T: Scalar>(logits: &[T], target: usize) -> Result<(T, Vec<T>), NnError> {
    if target >= logits.len() {
        return Err(NnError::InvalidArgument {
            op: "cross_entropy",
            detail: format!("target {target} outside [0, {})", logits.len()),
        });
    }
    let probs = softmax(logits);
    let loss = -probs[target].max(T::min_positive_value()).ln();
    let mut grad = probs;
    grad[target] -= T::one();
    Ok((loss, grad))
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut out: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Index of the first maximum.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Tensor::<f64>::zeros(&[256, 7]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 5, 255, 128, 1, 2, 3]).unwrap();
        assert!((loss - 256f64.ln()).abs() < 1e-12);
        assert!((loss - 5.5452).abs() < 1e-4);
        let two = Tensor::<f64>::zeros(&[2, 3]);
        let (loss2, _) = softmax_cross_entropy(&two, &[0, 1, 1]).unwrap();
        assert!((loss2 - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_gives_tiny_loss() {
        let mut logits = Tensor::<f64>::zeros(&[256, 1]);
        logits.row_mut(42)[0] = 30.0;
        let (loss, _) = softmax_cross_entropy(&logits, &[42]).unwrap();
        assert!(loss <= 1e-9, "{loss}");
    }

    #[test]
    fn target_out_of_range_is_an_error() {
        let logits = Tensor::<f32>::zeros(&[4, 2]);
        assert!(softmax_cross_entropy(&logits, &[0, 4]).is_err());
        assert!(softmax_cross_entropy(&logits, &[0]).is_err());
    }

    #[test]
    fn gradient_columns_sum_to_zero() {
        let logits = Tensor::<f64>::from_vec(&[3, 2], vec![0.1, -1.0, 2.0, 0.3, -0.5, 0.0]).unwrap();
        let (_, g) = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        for t in 0..2 {
            let s: f64 = (0..3).map(|c| g.at(c, t)).sum();
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn argmax_prefers_first_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
