//! Layers over batched feature images `[batch, channels, height, width]`,
//! used by the singer identification network.

use rand::Rng;

use super::linalg::{gemm, MatMut, MatRef};
use super::tensor::{Module, Param, Tensor};
use super::NnError;
use crate::scalar::Scalar;

fn dims4<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize, usize), NnError> {
    match *x.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(NnError::ShapeMismatch { op, detail: format!("expected [N, C, H, W], got {:?}", x.shape()) }),
    }
}

/// 3x3 (or any odd square) convolution, stride 1, zero "same" padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, kernel: usize, rng: &mut R) -> Self {
        assert!(kernel % 2 == 1, "odd kernel");
        let bound = 1.0 / ((cin * kernel * kernel) as f64).sqrt();
        Self {
            weight: Param::new(Tensor::uniform(&[cout, cin, kernel, kernel], bound, rng)),
            bias: Param::new(Tensor::uniform(&[cout], bound, rng)),
        }
    }

    fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    fn im2col(&self, x: &[T], cin: usize, h: usize, w: usize) -> Vec<T> {
        let k = self.kernel();
        let half = (k / 2) as isize;
        let hw = h * w;
        let mut cols = vec![T::zero(); cin * k * k * hw];
        for c in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - half;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - half;
                            if sx >= 0 && sx < w as isize {
                                dst[y * w + xx] = x[(c * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], cin: usize, h: usize, w: usize) -> Vec<T> {
        let k = self.kernel();
        let half = (k / 2) as isize;
        let hw = h * w;
        let mut x = vec![T::zero(); cin * hw];
        for c in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - half;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - half;
                            if sx >= 0 && sx < w as isize {
                                x[(c * h + sy as usize) * w + sx as usize] += src[y * w + xx];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (n, cin, h, w) = dims4("conv2d", x)?;
        let [cout, win, k, _] = *self.weight.value.shape() else { unreachable!() };
        if win != cin {
            return Err(NnError::ShapeMismatch { op: "conv2d", detail: format!("{cin} channels vs {win}") });
        }
        let hw = h * w;
        let mut out = Tensor::zeros(&[n, cout, h, w]);
        for b in 0..n {
            let cols = self.im2col(&x.data()[b * cin * hw..(b + 1) * cin * hw], cin, h, w);
            let dst = &mut out.data_mut()[b * cout * hw..(b + 1) * cout * hw];
            for o in 0..cout {
                let bo = self.bias.value.data()[o];
                dst[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = bo);
            }
            gemm(
                T::one(),
                MatRef::row_major(self.weight.value.data(), cout, cin * k * k),
                MatRef::row_major(&cols, cin * k * k, hw),
                T::one(),
                MatMut::row_major(dst, cout, hw),
            );
        }
        Ok(out)
    }

    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (n, cin, h, w) = dims4("conv2d_backward", x)?;
        let [cout, _, k, _] = *self.weight.value.shape() else { unreachable!() };
        if grad_out.shape() != [n, cout, h, w] {
            return Err(NnError::ShapeMismatch { op: "conv2d_backward", detail: format!("{:?}", grad_out.shape()) });
        }
        let hw = h * w;
        let ck = cin * k * k;
        let mut gx = Tensor::zeros(x.shape());
        for b in 0..n {
            let cols = self.im2col(&x.data()[b * cin * hw..(b + 1) * cin * hw], cin, h, w);
            let g = &grad_out.data()[b * cout * hw..(b + 1) * cout * hw];
            gemm(
                T::one(),
                MatRef::row_major(g, cout, hw),
                MatRef::row_major(&cols, ck, hw).t(),
                T::one(),
                MatMut::row_major(self.weight.grad.data_mut(), cout, ck),
            );
            for o in 0..cout {
                self.bias.grad.data_mut()[o] += g[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
            }
            let mut gcols = vec![T::zero(); ck * hw];
            gemm(
                T::one(),
                MatRef::row_major(self.weight.value.data(), cout, ck).t(),
                MatRef::row_major(g, cout, hw),
                T::zero(),
                MatMut::row_major(&mut gcols, ck, hw),
            );
            let gi = self.col2im(&gcols, cin, h, w);
            gx.data_mut()[b * cin * hw..(b + 1) * cin * hw].copy_from_slice(&gi);
        }
        Ok(gx)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

/// Per-channel batch normalization with running statistics for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

/// Values saved by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::of(0.1),
            eps: T::of(1e-5),
        }
    }

    /// Normalizes with batch statistics and updates the running estimates.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>), NnError> {
        let (n, c, h, w) = dims4("batch_norm", x)?;
        let hw = h * w;
        let count = T::of_usize(n * hw);
        let mut normalized = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let mut mean = T::zero();
            for b in 0..n {
                let base = (b * c + ch) * hw;
                mean += x.data()[base..base + hw].iter().copied().sum::<T>();
            }
            mean /= count;
            let mut var = T::zero();
            for b in 0..n {
                let base = (b * c + ch) * hw;
                var += x.data()[base..base + hw].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
            }
            var /= count;
            let is = T::one() / (var + self.eps).sqrt();
            inv_std[ch] = is;
            let (g, bt) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
            for b in 0..n {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    let xn = (x.data()[i] - mean) * is;
                    normalized.data_mut()[i] = xn;
                    out.data_mut()[i] = g * xn + bt;
                }
            }
            let m = self.momentum;
            let unbiased = if n * hw > 1 { var * count / (count - T::one()) } else { var };
            self.running_mean[ch] = (T::one() - m) * self.running_mean[ch] + m * mean;
            self.running_var[ch] = (T::one() - m) * self.running_var[ch] + m * unbiased;
        }
        Ok((out, BatchNormCache { normalized, inv_std }))
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (n, c, h, w) = dims4("batch_norm", x)?;
        let hw = h * w;
        let mut out = x.clone();
        for b in 0..n {
            for ch in 0..c {
                let is = T::one() / (self.running_var[ch] + self.eps).sqrt();
                let (g, bt, m) = (self.gamma.value.data()[ch], self.beta.value.data()[ch], self.running_mean[ch]);
                let base = (b * c + ch) * hw;
                for v in &mut out.data_mut()[base..base + hw] {
                    *v = g * (*v - m) * is + bt;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, cache: &BatchNormCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (n, c, h, w) = dims4("batch_norm_backward", grad_out)?;
        let hw = h * w;
        let count = T::of_usize(n * hw);
        let mut gx = Tensor::zeros(grad_out.shape());
        for ch in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for b in 0..n {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    sum_g += grad_out.data()[i];
                    sum_gx += grad_out.data()[i] * cache.normalized.data()[i];
                }
            }
            self.beta.grad.data_mut()[ch] += sum_g;
            self.gamma.grad.data_mut()[ch] += sum_gx;
            let g = self.gamma.value.data()[ch];
            let scale = g * cache.inv_std[ch] / count;
            for b in 0..n {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    gx.data_mut()[i] =
                        scale * (count * grad_out.data()[i] - sum_g - cache.normalized.data()[i] * sum_gx);
                }
            }
        }
        Ok(gx)
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![("gamma".into(), &mut self.gamma), ("beta".into(), &mut self.beta)]
    }
}

/// 2x2 max pooling, stride 2; an axis of extent 1 is left unpooled.
pub fn max_pool2d<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), NnError> {
    let (n, c, h, w) = dims4("max_pool2d", x)?;
    let (ph, pw) = (if h >= 2 { 2 } else { 1 }, if w >= 2 { 2 } else { 1 });
    let (oh, ow) = (h / ph, w / pw);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0usize; n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = (y * ph) * w + xx * pw;
                for dy in 0..ph {
                    for dx in 0..pw {
                        let idx = (y * ph + dy) * w + xx * pw + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                }
                let o = (plane * oh + y) * ow + xx;
                out.data_mut()[o] = src[best];
                arg[o] = plane * h * w + best;
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool2d_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = Tensor::zeros(input_shape);
    for (&src, &go) in argmax.iter().zip(grad_out.data()) {
        g.data_mut()[src] += go;
    }
    g
}

/// Fully connected layer on `[batch, in]` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Param::new(Tensor::uniform(&[fan_out, fan_in], bound, rng)),
            bias: Param::new(Tensor::uniform(&[fan_out], bound, rng)),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let [n, fin] = *x.shape() else {
            return Err(NnError::ShapeMismatch { op: "linear", detail: format!("{:?}", x.shape()) });
        };
        let fout = self.weight.value.rows();
        if self.weight.value.cols() != fin {
            return Err(NnError::ShapeMismatch { op: "linear", detail: format!("{fin} inputs vs {}", self.weight.value.cols()) });
        }
        let mut out = Tensor::zeros(&[n, fout]);
        for b in 0..n {
            out.row_mut(b).copy_from_slice(self.bias.value.data());
        }
        gemm(T::one(), x.mat(), self.weight.value.mat().t(), T::one(), out.mat_mut());
        Ok(out)
    }

    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let n = x.rows();
        if grad_out.rows() != n || grad_out.cols() != self.weight.value.rows() {
            return Err(NnError::ShapeMismatch { op: "linear_backward", detail: format!("{:?}", grad_out.shape()) });
        }
        gemm(T::one(), grad_out.mat().t(), x.mat(), T::one(), self.weight.grad.mat_mut());
        for b in 0..n {
            for (gb, &g) in self.bias.grad.data_mut().iter_mut().zip(grad_out.row(b)) {
                *gb += g;
            }
        }
        let mut gx = Tensor::zeros(x.shape());
        gemm(T::one(), grad_out.mat(), self.weight.value.mat(), T::zero(), gx.mat_mut());
        Ok(gx)
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv2d_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::<f64>::new(2, 3, 3, &mut rng);
        let x = Tensor::<f64>::uniform(&[2, 2, 4, 5], 1.0, &mut rng);
        let y = conv.forward(&x).unwrap();
        let w = conv.weight.value.data();
        for b in 0..2 {
            for o in 0..3 {
                for i in 0..4 {
                    for j in 0..5 {
                        let mut acc = conv.bias.value.data()[o];
                        for c in 0..2 {
                            for dy in 0..3 {
                                for dx in 0..3 {
                                    let (si, sj) = (i as isize + dy as isize - 1, j as isize + dx as isize - 1);
                                    if (0..4).contains(&si) && (0..5).contains(&sj) {
                                        acc += w[((o * 2 + c) * 3 + dy) * 3 + dx]
                                            * x.data()[((b * 2 + c) * 4 + si as usize) * 5 + sj as usize];
                                    }
                                }
                            }
                        }
                        let got = y.data()[((b * 3 + o) * 4 + i) * 5 + j];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn max_pool_floors_and_keeps_unit_axes() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 3, 1], vec![1.0, 5.0, 2.0]).unwrap();
        let (y, _) = max_pool2d(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn batch_norm_train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bn = BatchNorm2d::<f64>::new(2);
        let x = Tensor::<f64>::uniform(&[3, 2, 2, 2], 4.0, &mut rng);
        let (y, _) = bn.forward_train(&x).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> =
                (0..3).flat_map(|b| y.data()[(b * 2 + ch) * 4..(b * 2 + ch) * 4 + 4].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 12.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
