//! Central-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::{Activation, BatchNorm1d, Conv1d, Dense, MaxPool1d, Relu};
use super::loss::weighted_bce;
use super::lstm::{BiLstm, Lstm};
use super::tensor::{join_name, Layer, Params, Tensor};
use crate::error::Result;

pub const STEP: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Max relative error between `analytic` and the central-difference
/// gradient of `f` at `theta`.
pub fn grad_check(mut f: impl FnMut(&[f64]) -> Result<f64>, theta: &[f64], analytic: &[f64]) -> Result<f64> {
    let mut x = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + STEP;
        let plus = f(&x)?;
        x[i] = orig - STEP;
        let minus = f(&x)?;
        x[i] = orig;
        worst = worst.max(rel_err(analytic[i], (plus - minus) / (2.0 * STEP)));
    }
    Ok(worst)
}

/// Checks the gradient buffers already accumulated in `params` against
/// central differences of `loss`, which must not touch the buffers.
pub fn check_params<P: Params + ?Sized>(params: &mut P, mut loss: impl FnMut(&mut P) -> Result<f64>) -> Result<f64> {
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    params.visit("", &mut |_, t| {
        if let Some(g) = t.grad() {
            analytic.push(g.to_vec());
        }
    });
    let mut worst: f64 = 0.0;
    for (ti, grads) in analytic.iter().enumerate() {
        for (ei, &a) in grads.iter().enumerate() {
            nudge(params, ti, ei, STEP);
            let plus = loss(params)?;
            nudge(params, ti, ei, -2.0 * STEP);
            let minus = loss(params)?;
            nudge(params, ti, ei, STEP);
            worst = worst.max(rel_err(a, (plus - minus) / (2.0 * STEP)));
        }
    }
    Ok(worst)
}

fn nudge<P: Params + ?Sized>(params: &mut P, tensor: usize, elem: usize, delta: f64) {
    let mut seen = 0;
    params.visit("", &mut |_, t| {
        if t.is_trainable() {
            if seen == tensor {
                t.data_mut()[elem] += delta;
            }
            seen += 1;
        }
    });
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// Checks a layer under the scalar loss `sum(out * R)` for a random `R`,
/// over both its parameters and its input.
pub fn check_layer(layer: &mut dyn Layer, input: &Tensor, rng: &mut impl Rng) -> Result<f64> {
    layer.zero_grad();
    let out = layer.forward_train(input)?;
    let r = random_tensor(out.shape(), rng);
    let dx = layer.backward(&r)?;
    let shape = input.shape().to_vec();
    let err_params = check_params(layer, |l| Ok(dot(&l.forward_train(input)?, &r)))?;
    let err_input = grad_check(
        |x| Ok(dot(&layer.forward_train(&Tensor::from_vec(&shape, x.to_vec())?)?, &r)),
        input.data(),
        dx.data(),
    )?;
    layer.zero_grad();
    Ok(err_params.max(err_input))
}

/// Layers applied in order.
pub struct Chain(pub Vec<Box<dyn Layer>>);

impl Params for Chain {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, l) in self.0.iter_mut().enumerate() {
            l.visit(&join_name(prefix, &i.to_string()), f);
        }
    }
}

impl Layer for Chain {
    fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for l in &mut self.0 {
            x = l.forward_train(&x)?;
        }
        Ok(x)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for l in self.0.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub name: String,
    pub max_rel_err: f64,
    pub seeds: usize,
}

fn bce_check(rng: &mut impl Rng) -> Result<f64> {
    let n = 6;
    let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
    let target: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let beta = rng.gen_range(0.5..10.0);
    let (_, grad) = weighted_bce(&pred, &target, beta)?;
    grad_check(|p| Ok(weighted_bce(p, &target, beta)?.0), &pred, &grad)
}

/// Per-layer maximum relative error over `seeds`.
pub fn layer_suite(seeds: &[u64]) -> Result<Vec<GradReport>> {
    type Case = fn(&mut ChaCha8Rng) -> Result<f64>;
    let cases: [(&str, Case); 9] = [
        ("dense_relu", |r| {
            let mut l = Dense::new(4, 5, Activation::Relu, r);
            let x = random_tensor(&[3, 4], r);
            check_layer(&mut l, &x, r)
        }),
        ("dense_sigmoid", |r| {
            let mut l = Dense::new(4, 3, Activation::Sigmoid, r);
            let x = random_tensor(&[3, 4], r);
            check_layer(&mut l, &x, r)
        }),
        ("dense_identity", |r| {
            let mut l = Dense::new(3, 2, Activation::Identity, r);
            let x = random_tensor(&[2, 3], r);
            check_layer(&mut l, &x, r)
        }),
        ("conv1d", |r| {
            let mut l = Conv1d::new(2, 3, 3, r);
            let x = random_tensor(&[2, 2, 9], r);
            check_layer(&mut l, &x, r)
        }),
        ("batchnorm1d", |r| {
            let mut l = BatchNorm1d::new(2);
            // non-trivial affine parameters
            for v in l.gamma.data_mut().iter_mut().chain(l.beta.data_mut()) {
                *v = r.gen_range(0.5..1.5);
            }
            let x = random_tensor(&[3, 2, 4], r);
            check_layer(&mut l, &x, r)
        }),
        ("conv_relu_bn_pool", |r| {
            let mut l = Chain(vec![
                Box::new(Conv1d::new(1, 4, 3, r)),
                Box::new(Relu::new()),
                Box::new(BatchNorm1d::new(4)),
                Box::new(MaxPool1d::new()),
            ]);
            let x = random_tensor(&[2, 1, 14], r);
            check_layer(&mut l, &x, r)
        }),
        ("lstm", |r| {
            let mut l = Lstm::new(3, 4, false, r);
            let x = random_tensor(&[2, 3, 3], r);
            check_layer(&mut l, &x, r)
        }),
        ("bilstm", |r| {
            let mut l = BiLstm::new(3, 4, r);
            let x = random_tensor(&[2, 3, 3], r);
            check_layer(&mut l, &x, r)
        }),
        ("weighted_bce", |r| bce_check(r)),
    ];
    cases
        .iter()
        .map(|(name, case)| {
            let mut worst: f64 = 0.0;
            for &s in seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                worst = worst.max(case(&mut rng)?);
            }
            Ok(GradReport {
                name: name.to_string(),
                max_rel_err: worst,
                seeds: seeds.len(),
            })
        })
        .collect()
}
