use super::tensor::Params;
use crate::error::{Error, Result};

/// Plain stochastic gradient descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
}

impl Sgd {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        Ok(Self { learning_rate })
    }

    /// Applies `p -= lr * grad` to every trainable tensor, then zeroes the
    /// gradients. Nothing is updated if any gradient is non-finite.
    pub fn step(&self, params: &mut dyn Params) -> Result<()> {
        let mut bad = None;
        params.visit("", &mut |name, t| {
            if bad.is_none() && t.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                bad = Some(name.to_string());
            }
        });
        if let Some(name) = bad {
            return Err(Error::Numeric(format!("non-finite gradient in `{name}`")));
        }
        let lr = self.learning_rate;
        params.visit("", &mut |_, t| {
            if let (data, Some(grad)) = t.data_and_grad_mut() {
                for (p, g) in data.iter_mut().zip(grad.iter_mut()) {
                    *p -= lr * *g;
                    *g = 0.0;
                }
            }
        });
        Ok(())
    }
}
