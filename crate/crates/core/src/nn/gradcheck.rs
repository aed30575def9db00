//! Central finite-difference gradient checking.

/// Compares the analytic gradient returned by `f` at `x` against central
/// differences with step `eps` and returns the worst relative error.
///
/// Each component's error is divided by `max(|analytic|, |numeric|)`,
/// floored at 1% of the largest gradient magnitude so that components which
/// are numerically zero do not dominate.
pub fn grad_check<F>(f: F, x: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(x);
    assert_eq!(analytic.len(), x.len(), "gradient length");
    let numeric = numeric_gradient(|p| f(p).0, x, eps);
    relative_error(&analytic, &numeric)
}

pub fn numeric_gradient<F>(f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + eps;
            let up = f(&p);
            p[i] = orig - eps;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let floor = 1e-2 * scale;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let num = numeric_gradient(|p| p[0] * p[0], &[3.0], 1e-3);
        assert!((num[0] - 6.0).abs() <= 1e-6);
        let err = grad_check(|p| (p[0] * p[0], vec![2.0 * p[0]]), &[3.0], 1e-3);
        assert!(err <= 1e-9);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let err = grad_check(|p| (p[0].sin(), vec![p[0].sin()]), &[0.4], 1e-3);
        assert!(err > 0.1);
    }
}
