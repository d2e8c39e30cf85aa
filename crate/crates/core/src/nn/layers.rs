//! Convolution, batch normalization, pooling, and dense layers.
//!
//! Sequence tensors are `[batch, channels, length]`; dense tensors are
//! `[batch, features]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{expect_cache, join_name, Layer, Params, Tensor};
use crate::error::{Error, Result};

/// Valid (unpadded) stride-1 1-D cross-correlation with bias.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Tensor,
    cache: Option<Tensor>,
}

impl Conv1d {
    pub fn new(in_channels: usize, filters: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / (in_channels * kernel) as f64).sqrt();
        Self {
            weight: Tensor::uniform_param(&[filters, in_channels, kernel], bound, rng),
            bias: Tensor::uniform_param(&[filters], bound, rng),
            cache: None,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn filters(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_len(input_len: usize, kernel: usize) -> Result<usize> {
        if input_len < kernel {
            return Err(Error::Shape(format!(
                "convolution over length {input_len} needs at least kernel size {kernel}"
            )));
        }
        Ok(input_len - kernel + 1)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, l) = x.dims3()?;
        let (f, wc, k) = self.weight.dims3()?;
        if c != wc {
            return Err(Error::Shape(format!("conv expects {wc} channels, got {c}")));
        }
        let lo = Self::output_len(l, k)?;
        let w = self.weight.data();
        let xd = x.data();
        let mut out = vec![0.0; b * f * lo];
        for bi in 0..b {
            for fi in 0..f {
                let o = &mut out[(bi * f + fi) * lo..(bi * f + fi + 1) * lo];
                o.fill(self.bias.data()[fi]);
                for ci in 0..c {
                    let xrow = &xd[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                    let wrow = &w[(fi * c + ci) * k..(fi * c + ci + 1) * k];
                    for (t, ot) in o.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for j in 0..k {
                            acc += wrow[j] * xrow[t + j];
                        }
                        *ot += acc;
                    }
                }
            }
        }
        Tensor::from_vec(&[b, f, lo], out)
    }
}

impl Params for Conv1d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join_name(prefix, "weight"), &mut self.weight);
        f(&join_name(prefix, "bias"), &mut self.bias);
    }
}

impl Layer for Conv1d {
    fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.infer(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = expect_cache(&mut self.cache, "conv1d")?;
        let (b, c, l) = x.dims3()?;
        let (f, _, k) = self.weight.dims3()?;
        let lo = l - k + 1;
        if grad_out.shape() != [b, f, lo] {
            return Err(Error::Shape(format!("conv grad has shape {:?}", grad_out.shape())));
        }
        let g = grad_out.data();
        let xd = x.data();
        let mut dx = vec![0.0; x.len()];
        let w = self.weight.data().to_vec();
        {
            let dw = self.weight.grad_mut().expect("conv weight is trainable");
            for bi in 0..b {
                for fi in 0..f {
                    let grow = &g[(bi * f + fi) * lo..(bi * f + fi + 1) * lo];
                    for ci in 0..c {
                        let xrow = &xd[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                        let base = (fi * c + ci) * k;
                        for j in 0..k {
                            let mut acc = 0.0;
                            for t in 0..lo {
                                acc += grow[t] * xrow[t + j];
                            }
                            dw[base + j] += acc;
                        }
                        let dxrow = &mut dx[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                        for (t, gt) in grow.iter().enumerate() {
                            for j in 0..k {
                                dxrow[t + j] += gt * w[base + j];
                            }
                        }
                    }
                }
            }
        }
        let db = self.bias.grad_mut().expect("conv bias is trainable");
        for bi in 0..b {
            for fi in 0..f {
                db[fi] += g[(bi * f + fi) * lo..(bi * f + fi + 1) * lo].iter().sum::<f64>();
            }
        }
        Tensor::from_vec(&[b, c, l], dx)
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: (usize, usize, usize),
}

/// Per-channel batch normalization over batch and length.
pub struct BatchNorm1d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    cache: Option<BnCache>,
}

impl std::fmt::Debug for BatchNorm1d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BatchNorm1d")
            .field("channels", &self.gamma.len())
            .finish()
    }
}

impl Clone for BatchNorm1d {
    fn clone(&self) -> Self {
        Self {
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            running_mean: self.running_mean.clone(),
            running_var: self.running_var.clone(),
            cache: None,
        }
    }
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], 1.0).requires_grad(),
            beta: Tensor::zeros(&[channels]).requires_grad(),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            cache: None,
        }
    }

    /// Eval mode: normalizes with the running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, l) = self.check(x)?;
        let mut out = x.data().to_vec();
        for bi in 0..b {
            for ci in 0..c {
                let scale = self.gamma.data()[ci] / (self.running_var.data()[ci] + BN_EPS).sqrt();
                let (m, sh) = (self.running_mean.data()[ci], self.beta.data()[ci]);
                for v in &mut out[(bi * c + ci) * l..(bi * c + ci + 1) * l] {
                    *v = (*v - m) * scale + sh;
                }
            }
        }
        Tensor::from_vec(x.shape(), out)
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let (b, c, l) = x.dims3()?;
        if c != self.gamma.len() {
            return Err(Error::Shape(format!(
                "batch norm expects {} channels, got {c}",
                self.gamma.len()
            )));
        }
        Ok((b, c, l))
    }
}

impl Params for BatchNorm1d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join_name(prefix, "gamma"), &mut self.gamma);
        f(&join_name(prefix, "beta"), &mut self.beta);
        f(&join_name(prefix, "running_mean"), &mut self.running_mean);
        f(&join_name(prefix, "running_var"), &mut self.running_var);
    }
}

impl Layer for BatchNorm1d {
    /// Train mode: batch statistics with population variance; running
    /// statistics move by `BN_MOMENTUM` using the unbiased variance.
    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (b, c, l) = self.check(x)?;
        let n = b * l;
        if n < 2 {
            return Err(Error::Shape(format!(
                "batch norm in train mode needs at least 2 values per channel, got {n}"
            )));
        }
        let xd = x.data();
        let mut out = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        for ci in 0..c {
            let mut sum = 0.0;
            for bi in 0..b {
                sum += xd[(bi * c + ci) * l..(bi * c + ci + 1) * l].iter().sum::<f64>();
            }
            let mean = sum / n as f64;
            let mut sq = 0.0;
            for bi in 0..b {
                sq += xd[(bi * c + ci) * l..(bi * c + ci + 1) * l]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            let var = sq / n as f64;
            let is = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ci] = is;
            let (g, sh) = (self.gamma.data()[ci], self.beta.data()[ci]);
            for bi in 0..b {
                for i in (bi * c + ci) * l..(bi * c + ci + 1) * l {
                    xhat[i] = (xd[i] - mean) * is;
                    out[i] = g * xhat[i] + sh;
                }
            }
            let unbiased = sq / (n - 1) as f64;
            let rm = &mut self.running_mean.data_mut()[ci];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean;
            let rv = &mut self.running_var.data_mut()[ci];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased;
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            shape: (b, c, l),
        });
        Tensor::from_vec(x.shape(), out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = expect_cache(&mut self.cache, "batchnorm1d")?;
        let (b, c, l) = cache.shape;
        if grad_out.shape() != [b, c, l] {
            return Err(Error::Shape(format!("batch norm grad has shape {:?}", grad_out.shape())));
        }
        let g = grad_out.data();
        let n = (b * l) as f64;
        let mut dx = vec![0.0; g.len()];
        let gamma = self.gamma.data().to_vec();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for ci in 0..c {
            let idx = || (0..b).flat_map(move |bi| (bi * c + ci) * l..(bi * c + ci + 1) * l);
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for i in idx() {
                sum_g += g[i];
                sum_gx += g[i] * cache.xhat[i];
            }
            dgamma[ci] = sum_gx;
            dbeta[ci] = sum_g;
            let k = gamma[ci] * cache.inv_std[ci] / n;
            for i in idx() {
                dx[i] = k * (n * g[i] - sum_g - cache.xhat[i] * sum_gx);
            }
        }
        for (d, v) in self.gamma.grad_mut().expect("gamma is trainable").iter_mut().zip(dgamma) {
            *d += v;
        }
        for (d, v) in self.beta.grad_mut().expect("beta is trainable").iter_mut().zip(dbeta) {
            *d += v;
        }
        Tensor::from_vec(&[b, c, l], dx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn infer(x: &Tensor) -> Tensor {
        let data = x.data().iter().map(|v| v.max(0.0)).collect();
        Tensor::from_vec(x.shape(), data).expect("same shape")
    }
}

impl Params for Relu {
    fn visit(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor)) {}
}

impl Layer for Relu {
    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        Ok(Self::infer(x))
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = expect_cache(&mut self.mask, "relu")?;
        if mask.len() != grad_out.len() {
            return Err(Error::Shape("relu grad size mismatch".into()));
        }
        let data = grad_out
            .data()
            .iter()
            .zip(&mask)
            .map(|(g, &m)| if m { *g } else { 0.0 })
            .collect();
        Tensor::from_vec(grad_out.shape(), data)
    }
}

pub const POOL_WINDOW: usize = 3;

struct PoolCache {
    argmax: Vec<usize>,
    input_shape: Vec<usize>,
}

/// Non-overlapping max pooling; the trailing remainder is dropped and ties
/// go to the lowest index.
#[derive(Default)]
pub struct MaxPool1d {
    cache: Option<PoolCache>,
}

impl std::fmt::Debug for MaxPool1d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MaxPool1d")
    }
}

impl Clone for MaxPool1d {
    fn clone(&self) -> Self {
        Self::default()
    }
}

impl MaxPool1d {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output_len(input_len: usize) -> Result<usize> {
        if input_len < POOL_WINDOW {
            return Err(Error::Shape(format!(
                "max pooling over length {input_len} needs at least {POOL_WINDOW}"
            )));
        }
        Ok(input_len / POOL_WINDOW)
    }

    fn run(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let (b, c, l) = x.dims3()?;
        let lo = Self::output_len(l)?;
        let xd = x.data();
        let mut out = Vec::with_capacity(b * c * lo);
        let mut argmax = Vec::with_capacity(b * c * lo);
        for row in 0..b * c {
            for w in 0..lo {
                let start = row * l + w * POOL_WINDOW;
                let mut best = start;
                for i in start + 1..start + POOL_WINDOW {
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
        Ok((Tensor::from_vec(&[b, c, lo], out)?, argmax))
    }

    pub fn infer(x: &Tensor) -> Result<Tensor> {
        Ok(Self::run(x)?.0)
    }
}

impl Params for MaxPool1d {
    fn visit(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor)) {}
}

impl Layer for MaxPool1d {
    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (out, argmax) = Self::run(x)?;
        self.cache = Some(PoolCache {
            argmax,
            input_shape: x.shape().to_vec(),
        });
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = expect_cache(&mut self.cache, "maxpool1d")?;
        if grad_out.len() != cache.argmax.len() {
            return Err(Error::Shape("max pool grad size mismatch".into()));
        }
        let mut dx = Tensor::zeros(&cache.input_shape);
        let d = dx.data_mut();
        for (g, &i) in grad_out.data().iter().zip(&cache.argmax) {
            d[i] += g;
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Affine map `x W + b` followed by an activation. `W` is `[in, out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
    cache: Option<(Tensor, Tensor)>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / inputs.max(1) as f64).sqrt();
        Self {
            weight: Tensor::uniform_param(&[inputs, outputs], bound, rng),
            bias: Tensor::uniform_param(&[outputs], bound, rng),
            activation,
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (b, din) = x.dims2()?;
        let (win, dout) = self.weight.dims2()?;
        if din != win {
            return Err(Error::Shape(format!("dense expects {win} inputs, got {din}")));
        }
        let w = self.weight.data();
        let mut out = vec![0.0; b * dout];
        for bi in 0..b {
            let xr = &x.data()[bi * din..(bi + 1) * din];
            let o = &mut out[bi * dout..(bi + 1) * dout];
            o.copy_from_slice(self.bias.data());
            for (i, xv) in xr.iter().enumerate() {
                for (ov, wv) in o.iter_mut().zip(&w[i * dout..(i + 1) * dout]) {
                    *ov += xv * wv;
                }
            }
            for ov in o.iter_mut() {
                *ov = self.activation.apply(*ov);
            }
        }
        Tensor::from_vec(&[b, dout], out)
    }
}

impl Params for Dense {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join_name(prefix, "weight"), &mut self.weight);
        f(&join_name(prefix, "bias"), &mut self.bias);
    }
}

impl Layer for Dense {
    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.infer(x)?;
        self.cache = Some((x.clone(), y.clone()));
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (x, y) = expect_cache(&mut self.cache, "dense")?;
        let (b, din) = x.dims2()?;
        let dout = self.outputs();
        if grad_out.shape() != [b, dout] {
            return Err(Error::Shape(format!("dense grad has shape {:?}", grad_out.shape())));
        }
        let dz: Vec<f64> = grad_out
            .data()
            .iter()
            .zip(y.data())
            .map(|(g, &yv)| g * self.activation.derivative(yv))
            .collect();
        let w = self.weight.data().to_vec();
        let mut dx = vec![0.0; b * din];
        {
            let dw = self.weight.grad_mut().expect("dense weight is trainable");
            for bi in 0..b {
                let xr = &x.data()[bi * din..(bi + 1) * din];
                let dzr = &dz[bi * dout..(bi + 1) * dout];
                for i in 0..din {
                    let row = &mut dw[i * dout..(i + 1) * dout];
                    let mut acc = 0.0;
                    for (o, dzv) in dzr.iter().enumerate() {
                        row[o] += xr[i] * dzv;
                        acc += dzv * w[i * dout + o];
                    }
                    dx[bi * din + i] = acc;
                }
            }
        }
        let db = self.bias.grad_mut().expect("dense bias is trainable");
        for bi in 0..b {
            for (d, v) in db.iter_mut().zip(&dz[bi * dout..(bi + 1) * dout]) {
                *d += v;
            }
        }
        Tensor::from_vec(&[b, din], dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn conv_output_length() {
        let conv = Conv1d::new(1, 16, 3, &mut rng());
        let x = Tensor::zeros(&[2, 1, 10]);
        assert_eq!(conv.infer(&x).unwrap().shape(), &[2, 16, 8]);
        assert!(matches!(conv.infer(&Tensor::zeros(&[1, 1, 2])), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_delta_kernel_shifts() {
        let mut conv = Conv1d::new(1, 1, 3, &mut rng());
        conv.weight.data_mut().copy_from_slice(&[0.0, 1.0, 0.0]);
        conv.bias.data_mut()[0] = 0.0;
        let x = Tensor::from_vec(&[1, 1, 6], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(conv.infer(&x).unwrap().data(), &[2., 3., 4., 5.]);
    }

    #[test]
    fn batchnorm_normalizes_channel() {
        let mut bn = BatchNorm1d::new(1);
        let x = Tensor::from_vec(&[1, 1, 3], vec![1., 2., 3.]).unwrap();
        let y = bn.forward_train(&x).unwrap();
        // population variance 2/3
        let s = (2.0f64 / 3.0 + BN_EPS).sqrt();
        for (got, want) in y.data().iter().zip([-1.0 / s, 0.0, 1.0 / s]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((y.data()[0] + 1.22474).abs() < 1e-4);
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - 1.0).abs() < 1e-12);

        let c = Tensor::filled(&[2, 1, 3], 4.0);
        let y = BatchNorm1d::new(1).forward_train(&c).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let one = Tensor::zeros(&[1, 1, 1]);
        assert!(BatchNorm1d::new(1).forward_train(&one).is_err());
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let bn = BatchNorm1d::new(1);
        let x = Tensor::from_vec(&[1, 1, 2], vec![1.0, -1.0]).unwrap();
        let y = bn.infer(&x).unwrap();
        let s = (1.0 + BN_EPS).sqrt();
        assert!((y.data()[0] - 1.0 / s).abs() < 1e-12);
    }

    #[test]
    fn maxpool_drops_remainder_and_ties_low() {
        let x = Tensor::from_vec(&[1, 1, 7], vec![1., 5., 2., 4., 4., 4., 9.]).unwrap();
        let mut pool = MaxPool1d::new();
        let y = pool.forward_train(&x).unwrap();
        assert_eq!(y.data(), &[5., 4.]);
        let g = pool.backward(&Tensor::from_vec(&[1, 1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0., 1., 0., 1., 0., 0., 0.]);
        assert_eq!(MaxPool1d::output_len(380).unwrap(), 126);
        assert!(MaxPool1d::output_len(2).is_err());
    }

    #[test]
    fn dense_identity_and_relu() {
        let mut d = Dense::new(2, 2, Activation::Identity, &mut rng());
        d.weight.data_mut().copy_from_slice(&[1., 0., 0., 1.]);
        d.bias.data_mut().fill(0.0);
        let x = Tensor::from_vec(&[1, 2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(d.infer(&x).unwrap(), x);
        d.activation = Activation::Relu;
        assert_eq!(d.infer(&x).unwrap().data(), &[0.0, 2.0]);
        assert!(d.infer(&Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(sigmoid(-800.0).is_finite());
    }
}
