use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-12;

fn clamp(y: f64) -> f64 {
    y.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Loss of one prediction `y` against target `t` with positive weight `beta`.
pub fn weighted_bce_single(y: f64, t: f64, beta: f64) -> f64 {
    let y = clamp(y);
    -(beta * t * y.ln() + (1.0 - t) * (1.0 - y).ln())
}

/// Batch-mean weighted binary cross-entropy and its gradient with respect
/// to each prediction.
pub fn weighted_bce(pred: &[f64], target: &[f64], beta: f64) -> Result<(f64, Vec<f64>)> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be a positive real, got {beta}")));
    }
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "loss needs equal non-empty lengths, got {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&y, &t) in pred.iter().zip(target) {
        loss += weighted_bce_single(y, t, beta);
        let g = if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&y) {
            -(beta * t / y - (1.0 - t) / (1.0 - y))
        } else {
            // clamped region is flat
            0.0
        };
        grad.push(g / n);
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_values() {
        let (l, _) = weighted_bce(&[0.5], &[1.0], 1.0).unwrap();
        assert!((l - -(0.5f64).ln()).abs() < 1e-12);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let (l, _) = weighted_bce(&[0.8], &[1.0], 2.0).unwrap();
        assert!((l - -2.0 * 0.8f64.ln()).abs() < 1e-12);
        assert!((l - 0.446287).abs() < 1e-6);
        let (l, _) = weighted_bce(&[1e-300], &[0.0], 1.0).unwrap();
        assert!(l.abs() < 1e-11);
    }

    #[test]
    fn clamping_keeps_loss_finite() {
        for (y, t) in [(0.0, 1.0), (1.0, 0.0), (0.0, 0.0), (1.0, 1.0)] {
            let (l, g) = weighted_bce(&[y], &[t], 4.0).unwrap();
            assert!(l.is_finite() && g[0].is_finite());
        }
    }

    #[test]
    fn beta_must_be_positive() {
        assert!(matches!(weighted_bce(&[0.5], &[1.0], 0.0), Err(Error::Config(_))));
        assert!(matches!(weighted_bce(&[0.5], &[1.0], -1.0), Err(Error::Config(_))));
        assert!(weighted_bce(&[0.5], &[1.0, 0.0], 1.0).is_err());
    }
}
