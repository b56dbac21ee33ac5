//! Training objectives: thermal reconstruction, thermal-weighted balanced
//! color loss, gated per-exposure losses, and their weighted total.
//!
//! Norms are mean squared error. The balanced loss normalizes residuals by
//! the detached prediction so dark raw pixels are not under-weighted, and is
//! scaled by the detached thermal prediction (floored at `w_min`) to
//! emphasize warm foreground objects without abandoning cold background.

use crate::exposure::ExposureLadder;
use crate::real::Real;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {got} vs {want}")]
    ShapeMismatch { got: usize, want: usize },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_t: f64,
    pub lambda_b: f64,
    pub lambda_i: Vec<f64>,
    /// Balanced-loss denominator guard.
    pub epsilon: f64,
    /// Floor of the thermal weight in the balanced loss.
    pub w_min: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_t: 1.0,
            lambda_b: 1.0,
            lambda_i: vec![1.0; 4],
            epsilon: 1e-3,
            w_min: 0.1,
        }
    }
}

fn check_shapes(got: usize, want: usize) -> Result<(), LossError> {
    if got == want {
        Ok(())
    } else {
        Err(LossError::ShapeMismatch { got, want })
    }
}

/// Mean squared error between rendered and captured thermal values.
pub fn thermal_loss<F: Real>(pred: &[F], truth: &[F]) -> Result<F, LossError> {
    check_shapes(pred.len(), truth.len())?;
    let n = F::lit(pred.len() as f64);
    let sum: F = pred.iter().zip(truth).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok(sum / n)
}

/// One channel term of the balanced loss; `pred_detached` and
/// `thermal_detached` are treated as constants by the gradient.
#[inline]
pub fn balanced_term<F: Real>(
    pred: F,
    truth: F,
    pred_detached: F,
    thermal_detached: F,
    epsilon: F,
    w_min: F,
) -> F {
    let weight = if thermal_detached > w_min { thermal_detached } else { w_min };
    let r = (pred - truth) / (pred_detached + epsilon) * weight;
    r * r
}

/// Thermal-weighted relative color loss on the composited estimate: mean over
/// pixels and channels of `((C_hat - C) / (sg(C_hat) + eps) * max(sg(H), w_min))^2`.
pub fn balanced_loss<F: Real>(
    pred: &[[F; 3]],
    truth: &[[F; 3]],
    thermal: &[F],
    weights: &LossWeights,
) -> Result<F, LossError> {
    check_shapes(pred.len(), truth.len())?;
    check_shapes(thermal.len(), pred.len())?;
    let eps = F::lit(weights.epsilon);
    let w_min = F::lit(weights.w_min);
    let mut sum = F::zero();
    for ((p, t), &h) in pred.iter().zip(truth).zip(thermal) {
        for c in 0..3 {
            sum = sum + balanced_term(p[c], t[c], p[c], h, eps, w_min);
        }
    }
    Ok(sum / F::lit((pred.len() * 3) as f64))
}

/// Gated supervision of head `i` at its simulated exposure: mean of
/// `(mu * (C_hat_i - cumgain_i * C))^2` with the base head's gain equal to 1.
pub fn exposure_loss<F: Real>(
    head_index: usize,
    pred_head: &[[F; 3]],
    truth: &[[F; 3]],
    ladder: &ExposureLadder,
    mu: &[[F; 3]],
) -> Result<F, LossError> {
    check_shapes(pred_head.len(), truth.len())?;
    check_shapes(mu.len(), pred_head.len())?;
    let gain = F::lit(ladder.cumulative_gain(head_index));
    let mut sum = F::zero();
    for ((p, t), m) in pred_head.iter().zip(truth).zip(mu) {
        for c in 0..3 {
            let r = m[c] * (p[c] - gain * t[c]);
            sum = sum + r * r;
        }
    }
    Ok(sum / F::lit((pred_head.len() * 3) as f64))
}

/// Weighted total of all loss components.
pub fn total_loss<F: Real>(thermal: F, balanced: F, exposure: &[F], weights: &LossWeights) -> F {
    let mut total = F::lit(weights.lambda_t) * thermal + F::lit(weights.lambda_b) * balanced;
    for (k, &l) in exposure.iter().enumerate() {
        let lambda = weights.lambda_i.get(k).copied().unwrap_or(1.0);
        total = total + F::lit(lambda) * l;
    }
    total
}
