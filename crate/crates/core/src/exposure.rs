//! Multi-exposure machinery: the smoothing sign function, recursive
//! compositing of per-head colors, and the saturation gate that masks
//! supervision of a head once the previous head's amplified prediction clips.

use crate::real::Real;
use serde::{Deserialize, Serialize};

/// Amplification ladder between exposure heads. `gains[i]` amplifies head `i`
/// into head `i + 1`'s intensity range; the base head has an implicit gain of
/// 1, so the cumulative gain of head `i` is the product of the first `i`
/// entries.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExposureLadder {
    pub gains: Vec<f64>,
    pub gamma: f64,
}

impl Default for ExposureLadder {
    fn default() -> Self {
        ExposureLadder { gains: vec![10.0, 10.0, 10.0], gamma: 0.9 }
    }
}

impl ExposureLadder {
    pub fn new(gains: Vec<f64>, gamma: f64) -> Self {
        let ladder = ExposureLadder { gains, gamma };
        assert!(ladder.is_valid(), "gains must be > 0 and gamma in (0,1)");
        ladder
    }

    pub fn is_valid(&self) -> bool {
        self.gains.iter().all(|&g| g > 0.0) && (0.0..1.0).contains(&self.gamma) && self.gamma > 0.0
    }

    pub fn head_count(&self) -> usize {
        self.gains.len() + 1
    }

    /// Gain applied between head `i` and head `i + 1` (the paper's
    /// amplification coefficient of head `i + 1`).
    pub fn gain_after(&self, i: usize) -> f64 {
        self.gains[i]
    }

    /// Cumulative gain of head `i`: product of gains 1..=i, with gain_0 = 1.
    pub fn cumulative_gain(&self, i: usize) -> f64 {
        self.gains[..i].iter().product()
    }
}

/// Smoothing linear sign function: the blend weight for trusting head `i`'s
/// own color against the next head's down-scaled estimate.
///
/// Equivalent to `clamp(gain_next * c / gamma, 0, 1)`, which is how the tape
/// path evaluates it.
pub fn smooth_sign<F: Real>(c: F, gain_next: F, gamma: F) -> F {
    let v = gain_next * c;
    if v >= gamma {
        F::one()
    } else if v >= F::zero() {
        v / gamma
    } else {
        F::zero()
    }
}

/// Hard sign variant (no smoothing): used only as a regression guard that the
/// smoothing is load-bearing for continuity.
pub fn hard_sign<F: Real>(c: F, gain_next: F, gamma: F) -> F {
    if gain_next * c >= gamma {
        F::one()
    } else {
        F::zero()
    }
}

/// Recursive composite of one channel across all heads, finest (last) head
/// first: `ct_i = f_i c_i + (1 - f_i) ct_{i+1} / gain_{i+1}`, returning the
/// base-exposure estimate `ct_0`.
pub fn composite_channel<F: Real>(head_values: &[F], ladder: &ExposureLadder) -> F {
    composite_channel_with(head_values, ladder, smooth_sign)
}

pub fn composite_channel_with<F: Real>(
    head_values: &[F],
    ladder: &ExposureLadder,
    sign_fn: impl Fn(F, F, F) -> F,
) -> F {
    assert_eq!(head_values.len(), ladder.head_count(), "head count mismatch");
    let j = head_values.len() - 1;
    let gamma = F::lit(ladder.gamma);
    let mut ct = head_values[j];
    for i in (0..j).rev() {
        let gain = F::lit(ladder.gain_after(i));
        let f = sign_fn(head_values[i], gain, gamma);
        ct = f * head_values[i] + (F::one() - f) * ct / gain;
    }
    ct
}

/// Composite per channel over RGB head colors.
pub fn composite<F: Real>(head_colors: &[[F; 3]], ladder: &ExposureLadder) -> [F; 3] {
    let mut out = [F::zero(); 3];
    let mut channel = vec![F::zero(); head_colors.len()];
    for (c, o) in out.iter_mut().enumerate() {
        for (k, hc) in head_colors.iter().enumerate() {
            channel[k] = hc[c];
        }
        *o = composite_channel(&channel, ladder);
    }
    out
}

/// How the saturation gate treats channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GateMode {
    /// Each channel gates independently (default).
    #[default]
    PerChannel,
    /// A pixel gates all channels once any channel saturates.
    AnyChannel,
}

/// Dependency gate for head `i`'s supervision: 1 for the base head, and for
/// higher heads 1 only while the amplified previous-head prediction is below
/// saturation. The previous prediction must be detached by the caller.
pub fn gate_mu<F: Real>(i: usize, prev_head_channel: F, gain_i: F) -> F {
    if i == 0 || gain_i * prev_head_channel < F::one() {
        F::one()
    } else {
        F::zero()
    }
}

/// Per-channel gate over an RGB prediction of head `i - 1`.
pub fn gate_mu_rgb<F: Real>(
    i: usize,
    prev_head_color: [F; 3],
    ladder: &ExposureLadder,
    mode: GateMode,
) -> [F; 3] {
    if i == 0 {
        return [F::one(); 3];
    }
    let gain = F::lit(ladder.gain_after(i - 1));
    let mut mu = [F::zero(); 3];
    for c in 0..3 {
        mu[c] = gate_mu(i, prev_head_color[c], gain);
    }
    if mode == GateMode::AnyChannel && mu.iter().any(|&m| m == F::zero()) {
        mu = [F::zero(); 3];
    }
    mu
}
