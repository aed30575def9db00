//! One-dimensional dilated convolution over `[channels, time]` sequences.

use rand::Rng;

use super::linalg::{gemm, MatMut, MatRef};
use super::tensor::{ensure_rank2, Module, Param, Tensor};
use super::NnError;
use crate::scalar::Scalar;

/// Where the `(kernel - 1) * dilation` zeros go.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// All padding on the left: output `t` sees inputs `<= t` only.
    Causal,
    /// Split evenly, the extra zero (if any) on the right.
    Same,
}

impl Padding {
    fn split(self, kernel: usize, dilation: usize) -> (usize, usize) {
        let total = (kernel - 1) * dilation;
        match self {
            Padding::Causal => (total, 0),
            Padding::Same => (total / 2, total - total / 2),
        }
    }
}

fn weight_dims<T: Scalar>(weight: &Tensor<T>) -> Result<(usize, usize, usize), NnError> {
    match *weight.shape() {
        [o, i, k] if k >= 1 => Ok((o, i, k)),
        _ => Err(NnError::ShapeMismatch { op: "conv1d", detail: format!("weight shape {:?}", weight.shape()) }),
    }
}

fn pad_input<T: Scalar>(x: &Tensor<T>, left: usize, right: usize) -> Tensor<T> {
    let (c, t) = (x.rows(), x.cols());
    let tp = t + left + right;
    let mut out = Tensor::zeros(&[c, tp]);
    for r in 0..c {
        out.row_mut(r)[left..left + t].copy_from_slice(x.row(r));
    }
    out
}

/// `y[:, t] = b + Σ_k W[:, :, k] · x[:, t + k*dilation - left]`, zero outside
/// the input. Output length equals input length.
pub fn conv1d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    dilation: usize,
    padding: Padding,
) -> Result<Tensor<T>, NnError> {
    let (cin, len) = ensure_rank2("conv1d", x)?;
    let (cout, win, kernel) = weight_dims(weight)?;
    if win != cin {
        return Err(NnError::ShapeMismatch {
            op: "conv1d",
            detail: format!("input has {cin} channels, kernel expects {win}"),
        });
    }
    if dilation == 0 {
        return Err(NnError::InvalidArgument { op: "conv1d", detail: "dilation must be >= 1".into() });
    }
    let mut y = Tensor::zeros(&[cout, len]);
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(NnError::ShapeMismatch { op: "conv1d", detail: format!("bias {} vs {cout}", b.len()) });
        }
        for o in 0..cout {
            let bo = b.data()[o];
            y.row_mut(o).iter_mut().for_each(|v| *v = bo);
        }
    }
    let (left, right) = padding.split(kernel, dilation);
    let padded;
    let src = if left + right == 0 {
        x
    } else {
        padded = pad_input(x, left, right);
        &padded
    };
    let tp = src.cols();
    for k in 0..kernel {
        let wk = MatRef::new(weight.data(), k, cout, cin, cin * kernel, kernel);
        let xs = MatRef::new(src.data(), k * dilation, cin, len, tp, 1);
        gemm(T::one(), wk, xs, T::one(), y.mat_mut());
    }
    Ok(y)
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dilation: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
    grad_weight: Option<&mut Tensor<T>>,
    grad_bias: Option<&mut Tensor<T>>,
) -> Result<Tensor<T>, NnError> {
    let (cin, len) = ensure_rank2("conv1d_backward", x)?;
    let (cout, _, kernel) = weight_dims(weight)?;
    if grad_out.shape() != [cout, len] {
        return Err(NnError::ShapeMismatch {
            op: "conv1d_backward",
            detail: format!("grad {:?} vs [{cout}, {len}]", grad_out.shape()),
        });
    }
    let (left, right) = padding.split(kernel, dilation);
    let padded;
    let src = if left + right == 0 {
        x
    } else {
        padded = pad_input(x, left, right);
        &padded
    };
    let tp = src.cols();
    if let Some(gw) = grad_weight {
        for k in 0..kernel {
            let xs_t = MatRef::new(src.data(), k * dilation, len, cin, 1, tp);
            let gwk = MatMut::new(gw.data_mut(), k, cout, cin, cin * kernel, kernel);
            gemm(T::one(), grad_out.mat(), xs_t, T::one(), gwk);
        }
    }
    if let Some(gb) = grad_bias {
        for o in 0..cout {
            gb.data_mut()[o] += grad_out.row(o).iter().copied().sum::<T>();
        }
    }
    let mut gpad = Tensor::zeros(&[cin, tp]);
    for k in 0..kernel {
        let wk_t = MatRef::new(weight.data(), k, cin, cout, kernel, cin * kernel);
        let gs = MatMut::new(gpad.data_mut(), k * dilation, cin, len, tp, 1);
        gemm(T::one(), wk_t, grad_out.mat(), T::one(), gs);
    }
    if left + right == 0 {
        Ok(gpad)
    } else {
        Ok(gpad.slice_cols(left, len))
    }
}

/// A convolution layer owning its weight `[out, in, kernel]` and bias `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub dilation: usize,
    pub padding: Padding,
}

impl<T: Scalar> Conv1d<T> {
    /// Uniform init on `±1/sqrt(in * kernel)`.
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((cin * kernel) as f64).sqrt();
        Self {
            weight: Param::new(Tensor::uniform(&[cout, cin, kernel], bound, rng)),
            bias: Param::new(Tensor::uniform(&[cout], bound, rng)),
            dilation,
            padding,
        }
    }

    /// Pointwise (`kernel = 1`) projection.
    pub fn pointwise<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        Self::new(cin, cout, 1, 1, Padding::Same, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        conv1d(x, &self.weight.value, Some(&self.bias.value), self.dilation, self.padding)
    }

    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        conv1d_backward(
            x,
            &self.weight.value,
            self.dilation,
            self.padding,
            grad_out,
            Some(&mut self.weight.grad),
            Some(&mut self.bias.grad),
        )
    }

    /// Input gradient only; parameter gradients untouched.
    pub fn backward_input(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        conv1d_backward(x, &self.weight.value, self.dilation, self.padding, grad_out, None, None)
    }

    /// Weight slice for tap `k` packed as a dense row-major `[out, in]` matrix.
    pub fn packed_tap(&self, k: usize) -> Vec<T> {
        let (cout, cin, kernel) = (self.out_channels(), self.in_channels(), self.kernel());
        let w = self.weight.value.data();
        let mut out = Vec::with_capacity(cout * cin);
        for o in 0..cout {
            for i in 0..cin {
                out.push(w[(o * cin + i) * kernel + k]);
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Conv1d<U> {
        Conv1d { weight: self.weight.cast(), bias: self.bias.cast(), dilation: self.dilation, padding: self.padding }
    }
}

impl<T: Scalar> Module<T> for Conv1d<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}
