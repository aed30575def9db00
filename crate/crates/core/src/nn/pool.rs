//! Temporal average pooling and repeat-upsampling.

use super::tensor::{ensure_rank2, Tensor};
use super::NnError;
use crate::scalar::Scalar;

/// Window means over time: `[C, T] -> [C, (T - kernel) / stride + 1]`.
pub fn avg_pool<T: Scalar>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<Tensor<T>, NnError> {
    let (c, len) = ensure_rank2("avg_pool", x)?;
    if kernel == 0 || stride == 0 {
        return Err(NnError::InvalidArgument { op: "avg_pool", detail: "kernel and stride must be >= 1".into() });
    }
    if len < kernel {
        return Err(NnError::InvalidArgument {
            op: "avg_pool",
            detail: format!("sequence of {len} steps is shorter than kernel {kernel}"),
        });
    }
    let frames = (len - kernel) / stride + 1;
    let inv = T::one() / T::of_usize(kernel);
    let mut out = Tensor::zeros(&[c, frames]);
    for r in 0..c {
        let src = x.row(r);
        let dst = out.row_mut(r);
        for (f, d) in dst.iter_mut().enumerate() {
            *d = src[f * stride..f * stride + kernel].iter().copied().sum::<T>() * inv;
        }
    }
    Ok(out)
}

pub fn avg_pool_backward<T: Scalar>(
    input_len: usize,
    kernel: usize,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let (c, frames) = ensure_rank2("avg_pool_backward", grad_out)?;
    if input_len < kernel || frames != (input_len - kernel) / stride + 1 {
        return Err(NnError::ShapeMismatch {
            op: "avg_pool_backward",
            detail: format!("{frames} frames do not match input length {input_len}"),
        });
    }
    let inv = T::one() / T::of_usize(kernel);
    let mut g = Tensor::zeros(&[c, input_len]);
    for r in 0..c {
        let src = grad_out.row(r);
        let dst = g.row_mut(r);
        for (f, &gf) in src.iter().enumerate() {
            for d in &mut dst[f * stride..f * stride + kernel] {
                *d += gf * inv;
            }
        }
    }
    Ok(g)
}

/// Each time step repeated `factor` times.
pub fn upsample_repeat<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>, NnError> {
    let (c, len) = ensure_rank2("upsample_repeat", x)?;
    if factor == 0 {
        return Err(NnError::InvalidArgument { op: "upsample_repeat", detail: "factor must be >= 1".into() });
    }
    let mut out = Tensor::zeros(&[c, len * factor]);
    for r in 0..c {
        let src = x.row(r);
        let dst = out.row_mut(r);
        for (t, &v) in src.iter().enumerate() {
            dst[t * factor..(t + 1) * factor].iter_mut().for_each(|d| *d = v);
        }
    }
    Ok(out)
}

/// Sums each run of `factor` gradient steps back onto its source step.
pub fn upsample_repeat_backward<T: Scalar>(grad_out: &Tensor<T>, factor: usize) -> Result<Tensor<T>, NnError> {
    let (c, len) = ensure_rank2("upsample_repeat_backward", grad_out)?;
    if factor == 0 || len % factor != 0 {
        return Err(NnError::ShapeMismatch {
            op: "upsample_repeat_backward",
            detail: format!("length {len} is not a multiple of {factor}"),
        });
    }
    let frames = len / factor;
    let mut g = Tensor::zeros(&[c, frames]);
    for r in 0..c {
        let src = grad_out.row(r);
        for (f, d) in g.row_mut(r).iter_mut().enumerate() {
            *d = src[f * factor..(f + 1) * factor].iter().copied().sum();
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_in_constant_out() {
        let x = Tensor::<f64>::full(&[2, 12], 0.25);
        let y = avg_pool(&x, 4, 4).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn full_window_is_global_mean() {
        let x = Tensor::<f64>::from_vec(&[1, 4], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(avg_pool(&x, 4, 4).unwrap().data(), &[3.0]);
    }

    #[test]
    fn overlapping_windows_match_direct_means() {
        let vals: Vec<f64> = (0..11).map(|i| (i as f64).sqrt()).collect();
        let x = Tensor::from_vec(&[1, 11], vals.clone()).unwrap();
        let y = avg_pool(&x, 3, 2).unwrap();
        assert_eq!(y.cols(), 5);
        for f in 0..5 {
            let expect = (vals[2 * f] + vals[2 * f + 1] + vals[2 * f + 2]) / 3.0;
            assert!((y.data()[f] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn short_input_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 3]);
        assert!(avg_pool(&x, 4, 4).is_err());
    }

    #[test]
    fn repeat_then_pool_is_identity() {
        let x = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        assert_eq!(upsample_repeat(&x, 1).unwrap(), x);
        let up = upsample_repeat(&x, 2).unwrap();
        assert_eq!(up.row(0), &[1.0, 1.0, -2.0, -2.0]);
        assert_eq!(avg_pool(&up, 2, 2).unwrap(), x);
        let up7 = upsample_repeat(&x, 7).unwrap();
        assert_eq!(avg_pool(&up7, 7, 7).unwrap(), x);
    }
}
