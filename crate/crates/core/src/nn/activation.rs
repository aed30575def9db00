//! Elementwise nonlinearities and their derivatives.

use super::tensor::{ensure_same, Tensor};
use super::NnError;
use crate::scalar::Scalar;

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `out = tanh(a) * sigmoid(b)`.
pub fn gate_forward<T: Scalar>(a: &[T], b: &[T], out: &mut [T]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        let (th, sg) = T::tanh_sigmoid(x, y);
        *o = th * sg;
    }
}

/// Like [`gate_forward`], also keeping both factors for the backward pass.
pub fn gate_forward_parts<T: Scalar>(a: &[T], b: &[T], th: &mut [T], sg: &mut [T], out: &mut [T]) {
    for i in 0..a.len() {
        let (t, s) = T::tanh_sigmoid(a[i], b[i]);
        th[i] = t;
        sg[i] = s;
        out[i] = t * s;
    }
}

/// Writes `dL/da` and `dL/db` for the gated unit.
pub fn gate_backward<T: Scalar>(a: &[T], b: &[T], grad_out: &[T], grad_a: &mut [T], grad_b: &mut [T]) {
    for i in 0..a.len() {
        let (th, sg) = T::tanh_sigmoid(a[i], b[i]);
        let g = grad_out[i];
        grad_a[i] = g * sg * (T::one() - th * th);
        grad_b[i] = g * th * sg * (T::one() - sg);
    }
}

/// [`gate_backward`] from the factors saved by [`gate_forward_parts`].
pub fn gate_backward_parts<T: Scalar>(th: &[T], sg: &[T], grad_out: &[T], grad_a: &mut [T], grad_b: &mut [T]) {
    for i in 0..th.len() {
        let (t, s, g) = (th[i], sg[i], grad_out[i]);
        grad_a[i] = g * s * (T::one() - t * t);
        grad_b[i] = g * t * s * (T::one() - s);
    }
}

pub fn gated_unit<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    ensure_same("gated_unit", a, b)?;
    let mut out = Tensor::zeros(a.shape());
    gate_forward(a.data(), b.data(), out.data_mut());
    Ok(out)
}

pub fn gated_unit_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), NnError> {
    ensure_same("gated_unit", a, b)?;
    ensure_same("gated_unit", a, grad_out)?;
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(a.shape());
    gate_backward(a.data(), b.data(), grad_out.data(), ga.data_mut(), gb.data_mut());
    Ok((ga, gb))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Subgradient 0 at the kink.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    for (gi, &xi) in g.data_mut().iter_mut().zip(x.data()) {
        if xi <= T::zero() {
            *gi = T::zero();
        }
    }
    g
}

#[inline]
pub fn elu_scalar<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(elu_scalar)
}

pub fn elu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    for (gi, &xi) in g.data_mut().iter_mut().zip(x.data()) {
        if xi <= T::zero() {
            *gi *= xi.exp();
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_at_origin_is_zero() {
        let z = Tensor::<f64>::zeros(&[1, 1]);
        assert_eq!(gated_unit(&z, &z).unwrap().data(), &[0.0]);
    }

    #[test]
    fn gate_saturates_to_tanh() {
        let a = Tensor::<f64>::from_vec(&[1, 3], vec![-0.7, 0.1, 2.0]).unwrap();
        let b = Tensor::<f64>::full(&[1, 3], 30.0);
        let out = gated_unit(&a, &b).unwrap();
        for (o, x) in out.data().iter().zip(a.data()) {
            assert!((o - x.tanh()).abs() <= 1e-9);
        }
    }

    #[test]
    fn gate_matches_scalar_loop() {
        let a: Vec<f32> = (0..40).map(|i| (i as f32 * 0.31).sin() * 3.0).collect();
        let b: Vec<f32> = (0..40).map(|i| (i as f32 * 0.17).cos() * 4.0).collect();
        let ta = Tensor::from_vec(&[4, 10], a.clone()).unwrap();
        let tb = Tensor::from_vec(&[4, 10], b.clone()).unwrap();
        let out = gated_unit(&ta, &tb).unwrap();
        for i in 0..40 {
            let expect = a[i].tanh() / (1.0 + (-b[i]).exp());
            assert!((out.data()[i] - expect).abs() <= 1e-7);
        }
    }

    #[test]
    fn gate_rejects_shape_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[3, 2]);
        assert!(gated_unit(&a, &b).is_err());
    }

    #[test]
    fn relu_and_elu_values() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-1.0, 0.0, -20.0]).unwrap();
        assert_eq!(relu(&x).data()[0], 0.0);
        let e = elu(&x);
        assert_eq!(e.data()[1], 0.0);
        assert!((e.data()[2] + 1.0).abs() <= 1e-8);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }
}
