//! Finite-difference checks of every differentiable component in 64-bit
//! precision: the nn primitives, the three networks of the model, the
//! identifier, and the full first-phase objective.
//!
//! Each case draws `points` random inputs and parameter settings, takes the
//! loss `Σ w ⊙ y` for a random fixed `w` (or a cross-entropy where the
//! component ends in logits), and compares the analytic gradient with
//! central differences over inputs and parameters together.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{CropSource, TrainingItem};
use crate::augment::Variant;
use crate::eval::{IdModelSpec, IdentifierNet};
use crate::model::{
    build_conditioning, ConditioningSignal, ConfusionNet, ConfusionSpec, Decoder, DecoderSpec, Encoder, EncoderSpec,
    LatentSequence, ModelSpec, SvcModel,
};
use crate::nn::gradcheck::relative_error;
use crate::nn::{self, BatchNorm2d, Conv1d, Conv2d, Linear, Module, Padding, Param, Tensor};
use crate::training::{autoencoder_gradients, objective};

pub const EPS: f64 = 1e-6;

/// Worst relative error of one component over all sampled points.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCase {
    pub name: &'static str,
    pub worst: f64,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng)
}

/// Uniform on `±1` but at least `margin` away from zero, keeping kinks out
/// of the difference stencil.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor<f64> {
    let mut t = uniform(rng, shape);
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin } * 10.0;
        }
    }
    t
}

fn weighted_sum(y: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

fn values(params: Vec<(String, &Param<f64>)>) -> Vec<f64> {
    params.iter().flat_map(|(_, p)| p.value.data().iter().copied()).collect()
}

fn load(params: Vec<(String, &mut Param<f64>)>, x: &[f64]) {
    let mut o = 0;
    for (_, p) in params {
        let n = p.value.len();
        p.value.data_mut().copy_from_slice(&x[o..o + n]);
        p.zero_grad();
        o += n;
    }
}

fn grads(params: Vec<(String, &Param<f64>)>) -> Vec<f64> {
    params.iter().flat_map(|(_, p)| p.grad.data().iter().copied()).collect()
}

/// Central differences of `loss` at `x`, compared with `analytic`.
fn check(x: &[f64], analytic: &[f64], loss: impl Fn(&[f64]) -> f64) -> f64 {
    let numeric = nn::gradcheck::numeric_gradient(loss, x, EPS);
    relative_error(analytic, &numeric)
}

fn split(x: &[f64], at: usize) -> (&[f64], &[f64]) {
    x.split_at(at)
}

fn tensor(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).expect("shape")
}

fn worst_of(points: usize, seed: u64, mut one: impl FnMut(&mut ChaCha8Rng) -> f64) -> f64 {
    (0..points)
        .map(|p| one(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(p as u64))))
        .fold(0.0, f64::max)
}

fn conv1d_case(rng: &mut ChaCha8Rng, kernel: usize, dilation: usize, padding: Padding) -> f64 {
    let conv = Conv1d::<f64>::new(3, 4, kernel, dilation, padding, rng);
    let x = uniform(rng, &[3, 11]);
    let w = uniform(rng, &[4, 11]);
    let n = x.len();
    let run = |v: &[f64]| {
        let (xi, pv) = split(v, n);
        let mut c = conv.clone();
        load(c.params_mut(), pv);
        let xt = tensor(&[3, 11], xi);
        let y = c.forward(&xt).unwrap();
        let gx = c.backward(&xt, &w).unwrap();
        let mut g = gx.into_vec();
        g.extend(grads(c.params()));
        (weighted_sum(&y, &w), g)
    };
    let mut v = x.data().to_vec();
    v.extend(values(conv.params()));
    check(&v, &run(&v).1, |p| run(p).0)
}

fn elementwise_case(
    rng: &mut ChaCha8Rng,
    forward: fn(&Tensor<f64>) -> Tensor<f64>,
    backward: fn(&Tensor<f64>, &Tensor<f64>) -> Tensor<f64>,
) -> f64 {
    let x = off_kink(rng, &[3, 7], 1e-2);
    let w = uniform(rng, &[3, 7]);
    let run = |v: &[f64]| {
        let xt = tensor(&[3, 7], v);
        (weighted_sum(&forward(&xt), &w), backward(&xt, &w).into_vec())
    };
    check(x.data(), &run(x.data()).1, |p| run(p).0)
}

fn gate_case(rng: &mut ChaCha8Rng) -> f64 {
    let a = uniform(rng, &[3, 6]);
    let b = uniform(rng, &[3, 6]);
    let w = uniform(rng, &[3, 6]);
    let n = a.len();
    let run = |v: &[f64]| {
        let (at, bt) = (tensor(&[3, 6], &v[..n]), tensor(&[3, 6], &v[n..]));
        let y = nn::gated_unit(&at, &bt).unwrap();
        let (ga, gb) = nn::gated_unit_backward(&at, &bt, &w).unwrap();
        let mut g = ga.into_vec();
        g.extend(gb.into_vec());
        (weighted_sum(&y, &w), g)
    };
    let mut v = a.into_vec();
    v.extend(b.into_vec());
    check(&v, &run(&v).1, |p| run(p).0)
}

fn avg_pool_case(rng: &mut ChaCha8Rng) -> f64 {
    let x = uniform(rng, &[3, 12]);
    let w = uniform(rng, &[3, 3]);
    let run = |v: &[f64]| {
        let y = nn::avg_pool(&tensor(&[3, 12], v), 4, 4).unwrap();
        (weighted_sum(&y, &w), nn::avg_pool_backward(12, 4, 4, &w).unwrap().into_vec())
    };
    check(x.data(), &run(x.data()).1, |p| run(p).0)
}

fn upsample_case(rng: &mut ChaCha8Rng) -> f64 {
    let x = uniform(rng, &[3, 4]);
    let w = uniform(rng, &[3, 12]);
    let run = |v: &[f64]| {
        let y = nn::upsample_repeat(&tensor(&[3, 4], v), 3).unwrap();
        (weighted_sum(&y, &w), nn::upsample_repeat_backward(&w, 3).unwrap().into_vec())
    };
    check(x.data(), &run(x.data()).1, |p| run(p).0)
}

fn softmax_xent_case(rng: &mut ChaCha8Rng) -> f64 {
    let x = Tensor::uniform(&[5, 6], 3.0, rng);
    let targets: Vec<usize> = (0..6).map(|_| rng.gen_range(0..5)).collect();
    let run = |v: &[f64]| {
        let (l, g) = nn::softmax_cross_entropy(&tensor(&[5, 6], v), &targets).unwrap();
        (l, g.into_vec())
    };
    check(x.data(), &run(x.data()).1, |p| run(p).0)
}

fn xent_vector_case(rng: &mut ChaCha8Rng) -> f64 {
    let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let target = rng.gen_range(0..5);
    let run = |v: &[f64]| nn::cross_entropy_vector(v, target).unwrap();
    check(&x, &run(&x).1, |p| run(p).0)
}

fn conv2d_case(rng: &mut ChaCha8Rng) -> f64 {
    let conv = Conv2d::<f64>::new(2, 3, 3, rng);
    let shape = [2, 2, 5, 6];
    let x = uniform(rng, &shape);
    let w = uniform(rng, &[2, 3, 5, 6]);
    let n = x.len();
    let run = |v: &[f64]| {
        let (xi, pv) = split(v, n);
        let mut c = conv.clone();
        load(c.params_mut(), pv);
        let xt = tensor(&shape, xi);
        let y = c.forward(&xt).unwrap();
        let mut g = c.backward(&xt, &w).unwrap().into_vec();
        g.extend(grads(c.params()));
        (weighted_sum(&y, &w), g)
    };
    let mut v = x.data().to_vec();
    v.extend(values(conv.params()));
    check(&v, &run(&v).1, |p| run(p).0)
}

fn batch_norm_case(rng: &mut ChaCha8Rng) -> f64 {
    let mut bn = BatchNorm2d::<f64>::new(2);
    bn.gamma.value = Tensor::uniform(&[2], 1.0, rng);
    bn.beta.value = Tensor::uniform(&[2], 1.0, rng);
    let shape = [3, 2, 3, 4];
    let x = uniform(rng, &shape);
    let w = uniform(rng, &shape);
    let n = x.len();
    let run = |v: &[f64]| {
        let (xi, pv) = split(v, n);
        let mut b = bn.clone();
        load(b.params_mut(), pv);
        let (y, cache) = b.forward_train(&tensor(&shape, xi)).unwrap();
        let mut g = b.backward(&cache, &w).unwrap().into_vec();
        g.extend(grads(b.params()));
        (weighted_sum(&y, &w), g)
    };
    let mut v = x.data().to_vec();
    v.extend(values(bn.params()));
    check(&v, &run(&v).1, |p| run(p).0)
}

fn max_pool_case(rng: &mut ChaCha8Rng) -> f64 {
    let shape = [2, 2, 4, 6];
    let x = uniform(rng, &shape);
    let w = uniform(rng, &[2, 2, 2, 3]);
    let run = |v: &[f64]| {
        let (y, arg) = nn::max_pool2d(&tensor(&shape, v)).unwrap();
        (weighted_sum(&y, &w), nn::max_pool2d_backward(&shape, &arg, &w).into_vec())
    };
    check(x.data(), &run(x.data()).1, |p| run(p).0)
}

fn linear_case(rng: &mut ChaCha8Rng) -> f64 {
    let lin = Linear::<f64>::new(4, 5, rng);
    let x = uniform(rng, &[3, 4]);
    let w = uniform(rng, &[3, 5]);
    let n = x.len();
    let run = |v: &[f64]| {
        let (xi, pv) = split(v, n);
        let mut l = lin.clone();
        load(l.params_mut(), pv);
        let xt = tensor(&[3, 4], xi);
        let y = l.forward(&xt).unwrap();
        let mut g = l.backward(&xt, &w).unwrap().into_vec();
        g.extend(grads(l.params()));
        (weighted_sum(&y, &w), g)
    };
    let mut v = x.data().to_vec();
    v.extend(values(lin.params()));
    check(&v, &run(&v).1, |p| run(p).0)
}

fn encoder_case(rng: &mut ChaCha8Rng) -> f64 {
    let spec = EncoderSpec { blocks: 1, layers_per_block: 2, channels: 3, latent_dim: 2, kernel_size: 3, pool: 8 };
    let enc = Encoder::<f64>::new(&spec, rng);
    let input: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = uniform(rng, &[2, 3]);
    let run = |v: &[f64]| {
        let mut e = enc.clone();
        load(e.params_mut(), v);
        let (lat, cache) = e.forward_train(&input).unwrap();
        e.backward(&cache, &w).unwrap();
        (weighted_sum(&lat.frames, &w), grads(e.params()))
    };
    let v = values(enc.params());
    check(&v, &run(&v).1, |p| run(p).0)
}

fn decoder_case(rng: &mut ChaCha8Rng) -> f64 {
    let spec = DecoderSpec {
        blocks: 1,
        layers_per_block: 3,
        kernel_size: 2,
        residual_channels: 3,
        skip_channels: 3,
        quant_levels: 256,
        conditioning_dim: 4,
    };
    let dec = Decoder::<f64>::new(&spec, rng);
    let samples: Vec<u8> = (0..12).map(|_| rng.gen()).collect();
    let targets: Vec<usize> = samples.iter().map(|&s| s as usize).collect();
    let frames = uniform(rng, &[4, 3]);
    let n = frames.len();
    let run = |v: &[f64]| {
        let (fi, pv) = split(v, n);
        let mut d = dec.clone();
        load(d.params_mut(), pv);
        let cond = ConditioningSignal::from_frames(tensor(&[4, 3], fi), 4, 12);
        let (logits, cache) = d.forward_train(&samples, &cond).unwrap();
        let (l, g) = nn::softmax_cross_entropy(&logits, &targets).unwrap();
        let mut gv = d.backward(&cache, &g).unwrap().into_vec();
        gv.extend(grads(d.params()));
        (l, gv)
    };
    let mut v = frames.data().to_vec();
    v.extend(values(dec.params()));
    check(&v, &run(&v).1, |p| run(p).0)
}

fn confusion_case(rng: &mut ChaCha8Rng) -> f64 {
    let net = ConfusionNet::<f64>::new(&ConfusionSpec { layers: 2, channels: 3, kernel_size: 3 }, 2, 3, rng);
    let latent = uniform(rng, &[2, 5]);
    let target = rng.gen_range(0..3);
    let n = latent.len();
    let run = |v: &[f64]| {
        let (li, pv) = split(v, n);
        let mut c = net.clone();
        load(c.params_mut(), pv);
        let (logits, cache) = c.forward_train(&LatentSequence { frames: tensor(&[2, 5], li) }).unwrap();
        let (l, g) = nn::cross_entropy_vector(&logits, target).unwrap();
        let mut gv = c.backward(&cache, &g, true).unwrap().into_vec();
        gv.extend(grads(c.params()));
        (l, gv)
    };
    let mut v = latent.data().to_vec();
    v.extend(values(net.params()));
    check(&v, &run(&v).1, |p| run(p).0)
}

fn conditioning_case(rng: &mut ChaCha8Rng) -> f64 {
    // Gradient of a decoder loss with respect to latent and embedding,
    // through the frame-plus-embedding concatenation.
    let spec = DecoderSpec {
        blocks: 1,
        layers_per_block: 2,
        kernel_size: 2,
        residual_channels: 3,
        skip_channels: 3,
        quant_levels: 256,
        conditioning_dim: 5,
    };
    let dec = Decoder::<f64>::new(&spec, rng);
    let samples: Vec<u8> = (0..8).map(|_| rng.gen()).collect();
    let targets: Vec<usize> = samples.iter().map(|&s| s as usize).collect();
    let latent = uniform(rng, &[3, 2]);
    let emb: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let run = |v: &[f64]| {
        let lat = LatentSequence { frames: tensor(&[3, 2], &v[..6]) };
        let cond = build_conditioning(&lat, &v[6..], 4).unwrap();
        let mut d = dec.clone();
        let (logits, cache) = d.forward_train(&samples, &cond).unwrap();
        let (l, g) = nn::softmax_cross_entropy(&logits, &targets).unwrap();
        let dc = d.backward(&cache, &g).unwrap();
        let mut gv: Vec<f64> = dc.data()[..6].to_vec();
        gv.extend((3..5).map(|r| dc.row(r).iter().sum::<f64>()));
        (l, gv)
    };
    let mut v = latent.data().to_vec();
    v.extend(&emb);
    check(&v, &run(&v).1, |p| run(p).0)
}

fn identifier_case(rng: &mut ChaCha8Rng) -> f64 {
    let spec = IdModelSpec { conv_layers: 2, channels: 2, kernel: 3, hidden: 3 };
    let net = IdentifierNet::<f64>::new(&spec, 2, rng.gen());
    let x = uniform(rng, &[3, 1, 4, 6]);
    let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..2)).collect();
    let run = |v: &[f64]| {
        let mut m = net.clone();
        load(m.params_mut(), v);
        let (logits, cache) = m.forward_train(&x).unwrap();
        let mut grad = Tensor::zeros(logits.shape());
        let mut loss = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            let (l, g) = nn::cross_entropy_vector(logits.row(b), y).unwrap();
            loss += l;
            grad.row_mut(b).copy_from_slice(&g);
        }
        m.backward(&cache, &grad).unwrap();
        (loss, grads(m.params()))
    };
    let v = values(net.params());
    check(&v, &run(&v).1, |p| run(p).0)
}

fn tiny_model_spec() -> ModelSpec {
    ModelSpec {
        sample_rate: 8000,
        encoder: EncoderSpec { blocks: 1, layers_per_block: 2, channels: 3, latent_dim: 2, kernel_size: 3, pool: 8 },
        decoder: DecoderSpec {
            blocks: 1,
            layers_per_block: 2,
            kernel_size: 2,
            residual_channels: 3,
            skip_channels: 3,
            quant_levels: 256,
            conditioning_dim: 4,
        },
        confusion: ConfusionSpec { layers: 1, channels: 3, kernel_size: 3 },
        embedding_dim: 2,
    }
}

fn phase1_objective_case(rng: &mut ChaCha8Rng) -> f64 {
    let model = SvcModel::<f64>::new(&tiny_model_spec(), 2, rng.gen()).expect("valid spec");
    let batch: Vec<TrainingItem> = (0..2)
        .map(|j| {
            let audio: Vec<f32> = (0..16).map(|_| rng.gen_range(-0.8..0.8)).collect();
            let source = CropSource { path: String::new(), start: 0, variant: Variant::Identity };
            TrainingItem::from_audio(&audio, 8000, j, source)
        })
        .collect();
    let lambda = 0.5;
    let ae_values = |m: &mut SvcModel<f64>| -> Vec<f64> {
        m.autoencoder_params_mut().iter().flat_map(|(_, p)| p.value.data().to_vec()).collect()
    };
    let mut probe = model.clone();
    let v = ae_values(&mut probe);
    load(probe.autoencoder_params_mut(), &v);
    autoencoder_gradients(&mut probe, &batch, lambda).unwrap();
    let analytic: Vec<f64> = probe.autoencoder_params_mut().iter().flat_map(|(_, p)| p.grad.data().to_vec()).collect();
    check(&v, &analytic, |p| {
        let mut m = model.clone();
        load(m.autoencoder_params_mut(), p);
        objective::phase1(&m, &batch, lambda).unwrap()
    })
}

/// Runs every case at `points` random settings.
pub fn suite(points: usize, seed: u64) -> Vec<GradientCase> {
    type Case = (&'static str, fn(&mut ChaCha8Rng) -> f64);
    let cases: [Case; 19] = [
        ("conv1d causal", |r| conv1d_case(r, 2, 2, Padding::Causal)),
        ("conv1d same", |r| conv1d_case(r, 3, 3, Padding::Same)),
        ("conv1d pointwise", |r| conv1d_case(r, 1, 1, Padding::Same)),
        ("gated unit", gate_case),
        ("relu", |r| elementwise_case(r, nn::relu, nn::relu_backward)),
        ("elu", |r| elementwise_case(r, nn::elu, nn::elu_backward)),
        ("avg pool", avg_pool_case),
        ("upsample repeat", upsample_case),
        ("softmax cross-entropy", softmax_xent_case),
        ("vector cross-entropy", xent_vector_case),
        ("conv2d", conv2d_case),
        ("batch norm", batch_norm_case),
        ("max pool 2x2", max_pool_case),
        ("linear", linear_case),
        ("encoder", encoder_case),
        ("decoder", decoder_case),
        ("conditioning", conditioning_case),
        ("confusion net", confusion_case),
        ("identifier net", identifier_case),
    ];
    let mut out: Vec<GradientCase> = cases
        .iter()
        .enumerate()
        .map(|(i, (name, f))| GradientCase { name, worst: worst_of(points, seed ^ (i as u64 + 1), f) })
        .collect();
    out.push(GradientCase { name: "phase-one objective", worst: worst_of(points, seed ^ 0xff, phase1_objective_case) });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broken_backward_is_detected() {
        // relu's derivative used for elu is wrong on the negative side.
        let worst = worst_of(3, 1, |r| elementwise_case(r, nn::elu, nn::relu_backward));
        assert!(worst > 1e-2, "{worst}");
    }

    #[test]
    fn primitives_pass_at_two_points() {
        for case in suite(2, 7) {
            assert!(case.worst <= 1e-4, "{}: {}", case.name, case.worst);
        }
    }
}
