//! Single-layer LSTM returning the final hidden state, and its
//! bidirectional wrapper.
//!
//! Inputs are `[batch, time, features]`. Gate blocks are ordered
//! input, forget, cell, output.

use rand::Rng;

use super::layers::sigmoid;
use super::tensor::{expect_cache, join_name, Layer, Params, Tensor};
use crate::error::{Error, Result};

struct Step {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, `[batch, 4H]`.
    gates: Vec<f64>,
    c: Vec<f64>,
}

struct LstmCache {
    steps: Vec<Step>,
    batch: usize,
    time: usize,
}

pub struct Lstm {
    /// `[4H, D]`
    pub w_ih: Tensor,
    /// `[4H, H]`
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
    /// Processes time steps last to first.
    pub reverse: bool,
    cache: Option<LstmCache>,
}

impl std::fmt::Debug for Lstm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lstm")
            .field("input", &self.input_size())
            .field("hidden", &self.hidden_size())
            .field("reverse", &self.reverse)
            .finish()
    }
}

impl Clone for Lstm {
    fn clone(&self) -> Self {
        Self {
            w_ih: self.w_ih.clone(),
            w_hh: self.w_hh.clone(),
            b_ih: self.b_ih.clone(),
            b_hh: self.b_hh.clone(),
            reverse: self.reverse,
            cache: None,
        }
    }
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, reverse: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Tensor::uniform_param(&[4 * hidden, input], bound, rng),
            w_hh: Tensor::uniform_param(&[4 * hidden, hidden], bound, rng),
            b_ih: Tensor::uniform_param(&[4 * hidden], bound, rng),
            b_hh: Tensor::uniform_param(&[4 * hidden], bound, rng),
            reverse,
            cache: None,
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.shape()[1]
    }

    fn order(&self, time: usize) -> Vec<usize> {
        if self.reverse {
            (0..time).rev().collect()
        } else {
            (0..time).collect()
        }
    }

    fn run(&self, x: &Tensor, keep: bool) -> Result<(Tensor, Vec<Step>)> {
        let (b, t, d) = x.dims3()?;
        if d != self.input_size() {
            return Err(Error::Shape(format!(
                "lstm expects {} features, got {d}",
                self.input_size()
            )));
        }
        if t == 0 {
            return Err(Error::Shape("lstm needs at least one time step".into()));
        }
        if !x.all_finite() {
            return Err(Error::Data("lstm input has a non-finite value".into()));
        }
        let h = self.hidden_size();
        let g4 = 4 * h;
        let (wih, whh) = (self.w_ih.data(), self.w_hh.data());
        let bias: Vec<f64> = self.b_ih.data().iter().zip(self.b_hh.data()).map(|(a, b)| a + b).collect();
        let mut hs = vec![0.0; b * h];
        let mut cs = vec![0.0; b * h];
        let mut steps = Vec::new();
        for ti in self.order(t) {
            let mut xt = vec![0.0; b * d];
            for bi in 0..b {
                xt[bi * d..(bi + 1) * d].copy_from_slice(&x.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d]);
            }
            let mut gates = vec![0.0; b * g4];
            let mut c_new = vec![0.0; b * h];
            let mut h_new = vec![0.0; b * h];
            for bi in 0..b {
                let xr = &xt[bi * d..(bi + 1) * d];
                let hr = &hs[bi * h..(bi + 1) * h];
                let gr = &mut gates[bi * g4..(bi + 1) * g4];
                for (r, gv) in gr.iter_mut().enumerate() {
                    let mut z = bias[r];
                    for (w, xv) in wih[r * d..(r + 1) * d].iter().zip(xr) {
                        z += w * xv;
                    }
                    for (w, hv) in whh[r * h..(r + 1) * h].iter().zip(hr) {
                        z += w * hv;
                    }
                    *gv = if (2 * h..3 * h).contains(&r) { z.tanh() } else { sigmoid(z) };
                }
                for j in 0..h {
                    let (i, f, g, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                    let c = f * cs[bi * h + j] + i * g;
                    c_new[bi * h + j] = c;
                    h_new[bi * h + j] = o * c.tanh();
                }
            }
            if keep {
                steps.push(Step {
                    x: xt,
                    h_prev: std::mem::replace(&mut hs, h_new),
                    c_prev: std::mem::replace(&mut cs, c_new.clone()),
                    gates,
                    c: c_new,
                });
            } else {
                hs = h_new;
                cs = c_new;
            }
        }
        Ok((Tensor::from_vec(&[b, h], hs)?, steps))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x, false)?.0)
    }
}

impl Params for Lstm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join_name(prefix, "w_ih"), &mut self.w_ih);
        f(&join_name(prefix, "w_hh"), &mut self.w_hh);
        f(&join_name(prefix, "b_ih"), &mut self.b_ih);
        f(&join_name(prefix, "b_hh"), &mut self.b_hh);
    }
}

impl Layer for Lstm {
    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let (out, steps) = self.run(x, true)?;
        self.cache = Some(LstmCache { steps, batch: b, time: t });
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = expect_cache(&mut self.cache, "lstm")?;
        let (b, t) = (cache.batch, cache.time);
        let (h, d) = (self.hidden_size(), self.input_size());
        let g4 = 4 * h;
        if grad_out.shape() != [b, h] {
            return Err(Error::Shape(format!("lstm grad has shape {:?}", grad_out.shape())));
        }
        let wih = self.w_ih.data().to_vec();
        let whh = self.w_hh.data().to_vec();
        let mut dwih = vec![0.0; wih.len()];
        let mut dwhh = vec![0.0; whh.len()];
        let mut db = vec![0.0; g4];
        let mut dx = vec![0.0; b * t * d];
        let mut dh = grad_out.data().to_vec();
        let mut dc = vec![0.0; b * h];
        let order = self.order(t);
        for (step, &ti) in cache.steps.iter().zip(&order).rev() {
            let mut dz = vec![0.0; b * g4];
            for bi in 0..b {
                let gr = &step.gates[bi * g4..(bi + 1) * g4];
                for j in 0..h {
                    let k = bi * h + j;
                    let (i, f, g, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                    let tc = step.c[k].tanh();
                    let dcell = dc[k] + dh[k] * o * (1.0 - tc * tc);
                    let row = &mut dz[bi * g4..(bi + 1) * g4];
                    row[j] = dcell * g * i * (1.0 - i);
                    row[h + j] = dcell * step.c_prev[k] * f * (1.0 - f);
                    row[2 * h + j] = dcell * i * (1.0 - g * g);
                    row[3 * h + j] = dh[k] * tc * o * (1.0 - o);
                    dc[k] = dcell * f;
                }
            }
            let mut dh_prev = vec![0.0; b * h];
            for bi in 0..b {
                let dzr = &dz[bi * g4..(bi + 1) * g4];
                let xr = &step.x[bi * d..(bi + 1) * d];
                let hr = &step.h_prev[bi * h..(bi + 1) * h];
                let dxr = &mut dx[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                let dhr = &mut dh_prev[bi * h..(bi + 1) * h];
                for (r, &z) in dzr.iter().enumerate() {
                    if z == 0.0 {
                        continue;
                    }
                    db[r] += z;
                    for c in 0..d {
                        dwih[r * d + c] += z * xr[c];
                        dxr[c] += z * wih[r * d + c];
                    }
                    for c in 0..h {
                        dwhh[r * h + c] += z * hr[c];
                        dhr[c] += z * whh[r * h + c];
                    }
                }
            }
            dh = dh_prev;
        }
        let add = |t: &mut Tensor, v: &[f64]| {
            for (a, b) in t.grad_mut().expect("lstm weights are trainable").iter_mut().zip(v) {
                *a += b;
            }
        };
        add(&mut self.w_ih, &dwih);
        add(&mut self.w_hh, &dwhh);
        add(&mut self.b_ih, &db);
        add(&mut self.b_hh, &db);
        Tensor::from_vec(&[b, t, d], dx)
    }
}

/// Forward and reverse LSTMs over the same input; output is the
/// concatenation `[forward final, backward final]`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let forward = Lstm::new(input, hidden, false, rng);
        let backward = Lstm::new(input, hidden, true, rng);
        Self { forward, backward }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Tensor::concat_cols(&[&self.forward.infer(x)?, &self.backward.infer(x)?])
    }
}

impl Params for BiLstm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.forward.visit(&join_name(prefix, "fwd"), f);
        self.backward.visit(&join_name(prefix, "bwd"), f);
    }
}

impl Layer for BiLstm {
    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let a = self.forward.forward_train(x)?;
        let b = self.backward.forward_train(x)?;
        Tensor::concat_cols(&[&a, &b])
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let h = self.forward.hidden_size();
        let parts = grad_out.split_cols(&[h, h])?;
        let mut dx = self.forward.backward(&parts[0])?;
        let db = self.backward.backward(&parts[1])?;
        for (a, b) in dx.data_mut().iter_mut().zip(db.data()) {
            *a += b;
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_closed_form() {
        // With all weights zero and biases zero every gate is 0.5 and g = 0,
        // so the state never moves off zero.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = Lstm::new(2, 3, false, &mut rng);
        l.visit("", &mut |_, t| t.data_mut().fill(0.0));
        let x = Tensor::filled(&[2, 4, 2], 1.0);
        assert!(l.infer(&x).unwrap().data().iter().all(|&v| v == 0.0));

        // Cell bias only: g = tanh(1), c1 = 0.5 tanh(1), h1 = 0.5 tanh(c1).
        l.b_ih.data_mut()[2 * 3] = 1.0;
        let x1 = Tensor::zeros(&[1, 1, 2]);
        let c1 = 0.5 * 1f64.tanh();
        let h = l.infer(&x1).unwrap();
        assert!((h.data()[0] - 0.5 * c1.tanh()).abs() < 1e-15);
    }

    #[test]
    fn reverse_equals_forward_on_flipped_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fwd = Lstm::new(2, 3, false, &mut rng);
        let mut rev = fwd.clone();
        rev.reverse = true;
        let x = Tensor::from_vec(&[1, 3, 2], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap();
        let flipped = Tensor::from_vec(&[1, 3, 2], vec![-0.5, 0.6, 0.3, 0.4, 0.1, -0.2]).unwrap();
        assert_eq!(rev.infer(&x).unwrap(), fwd.infer(&flipped).unwrap());
    }

    #[test]
    fn bilstm_width_and_shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bi = BiLstm::new(32, 32, &mut rng);
        let x = Tensor::zeros(&[2, 40, 32]);
        assert_eq!(bi.infer(&x).unwrap().shape(), &[2, 64]);
        assert!(bi.infer(&Tensor::zeros(&[2, 40, 31])).is_err());
        assert!(bi.infer(&Tensor::zeros(&[2, 0, 32])).is_err());
    }
}
