//! The floating-point element type shared by every numeric routine.
//!
//! Training runs in `f32`; gradient checks and the strict inference
//! equivalence tests run in `f64`. Everything downstream is written once
//! against [`Scalar`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Short name used in logs and the parameter container.
    const NAME: &'static str;

    /// `C <- alpha * A * B + beta * C` over raw strided storage.
    ///
    /// # Safety
    /// Every addressed element of `a`, `b` and `c` must be in bounds and
    /// `c` must not alias `a` or `b`. Use [`crate::nn::linalg::gemm`].
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    /// `(tanh(a), sigmoid(b))`, the two halves of the gated activation.
    #[inline]
    fn tanh_sigmoid(a: Self, b: Self) -> (Self, Self) {
        let one = Self::one();
        (a.tanh(), one / (one + (-b).exp()))
    }

    /// Converts a literal; all our constants are representable.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite value")
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        Self::from_usize(x).expect("representable count")
    }
}

/// Branch-free `exp` for `f32` (about 2 ulp), so activation loops vectorize.
#[inline(always)]
pub fn exp_f32(x: f32) -> f32 {
    let x = x.clamp(-87.0, 88.0);
    // Adding 1.5 * 2^23 rounds to nearest and leaves n in the low mantissa bits.
    let shifted = x * std::f32::consts::LOG2_E + 12_582_912.0;
    let n = shifted - 12_582_912.0;
    let ni = shifted.to_bits().wrapping_sub(0x4B40_0000) as i32;
    let r = x - n * 0.693_145_75 - n * 1.428_606_8e-6;
    let p = 1.987_569_1e-4_f32;
    let p = p * r + 1.398_199_9e-3;
    let p = p * r + 8.333_452e-3;
    let p = p * r + 4.166_579_6e-2;
    let p = p * r + 1.666_666_5e-1;
    let p = p * r + 5e-1;
    let e = p * r * r + r + 1.0;
    e * f32::from_bits(((ni + 127) as u32) << 23)
}

/// Flushes subnormal floats to zero on the current thread until dropped,
/// then restores the previous mode. Trained networks drift into subnormal
/// gradients, which are many times slower on x86.
pub struct DenormalGuard {
    #[cfg(target_arch = "x86_64")]
    saved: u32,
}

#[cfg(target_arch = "x86_64")]
#[allow(deprecated)]
impl DenormalGuard {
    const FTZ_DAZ: u32 = 0x8040;

    pub fn new() -> Self {
        use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
        // SAFETY: only the flush-to-zero and denormals-are-zero bits change.
        let saved = unsafe { _mm_getcsr() };
        unsafe { _mm_setcsr(saved | Self::FTZ_DAZ) };
        Self { saved }
    }
}

#[cfg(target_arch = "x86_64")]
#[allow(deprecated)]
impl Drop for DenormalGuard {
    fn drop(&mut self) {
        // SAFETY: restores the value read in `new`.
        unsafe { std::arch::x86_64::_mm_setcsr(self.saved) };
    }
}

#[cfg(not(target_arch = "x86_64"))]
impl DenormalGuard {
    pub fn new() -> Self {
        Self {}
    }
}

impl Default for DenormalGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn tanh_sigmoid(a: f32, b: f32) -> (f32, f32) {
        let th = 2.0 / (1.0 + exp_f32(-2.0 * a)) - 1.0;
        (th, 1.0 / (1.0 + exp_f32(-b)))
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[cfg(target_arch = "x86_64")]
    #[test]
    fn denormal_guard_flushes_and_restores() {
        let tiny = std::hint::black_box(f32::MIN_POSITIVE);
        {
            let _g = DenormalGuard::new();
            assert_eq!(std::hint::black_box(tiny) * 0.5, 0.0);
        }
        assert!(std::hint::black_box(tiny) * 0.5 > 0.0);
    }

    #[test]
    fn fast_exp_is_accurate() {
        let mut worst = 0.0f64;
        for i in -8700..=8800 {
            let x = i as f32 * 0.01;
            let exact = (x as f64).exp();
            worst = worst.max(((exp_f32(x) as f64) - exact).abs() / exact);
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn fast_gate_factors_match_std() {
        for i in -400..=400 {
            let x = i as f32 * 0.05;
            let (th, sg) = f32::tanh_sigmoid(x, x);
            assert!((th - x.tanh()).abs() < 1e-6);
            assert!((sg - 1.0 / (1.0 + (-x).exp())).abs() < 1e-6);
        }
    }
}
