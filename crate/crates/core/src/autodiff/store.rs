//! Flat trainable-parameter storage with Adam state.

use crate::real::Real;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient at parameter {0}; step refused")]
    NonFiniteGradient(usize),
}

/// A contiguous range of parameters sharing a learning-rate scale.
#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub offset: usize,
    pub len: usize,
    pub lr_scale: f64,
}

/// All trainable values plus gradient and Adam moment vectors.
///
/// The four vectors always have equal length; gradients are zeroed by
/// [`ParameterStore::adam_step`] after a successful update.
pub struct ParameterStore<F: Real> {
    pub values: Vec<F>,
    pub grads: Vec<F>,
    m: Vec<F>,
    v: Vec<F>,
    step: u64,
    groups: Vec<ParamGroup>,
}

impl<F: Real> ParameterStore<F> {
    pub fn new() -> Self {
        ParameterStore {
            values: Vec::new(),
            grads: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
            groups: Vec::new(),
        }
    }

    /// Append a group of parameters, returning its offset.
    pub fn push_group(&mut self, values: &[F], lr_scale: f64) -> usize {
        let offset = self.values.len();
        self.values.extend_from_slice(values);
        self.grads.resize(self.values.len(), F::zero());
        self.m.resize(self.values.len(), F::zero());
        self.v.resize(self.values.len(), F::zero());
        self.groups.push(ParamGroup { offset, len: values.len(), lr_scale });
        offset
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(F::zero());
    }

    /// Merge an externally accumulated gradient buffer into this store.
    pub fn accumulate_grads(&mut self, other: &[F]) {
        assert_eq!(other.len(), self.grads.len());
        for (g, &o) in self.grads.iter_mut().zip(other) {
            *g = *g + o;
        }
    }

    /// One bias-corrected Adam update over all groups. Gradients are cleared
    /// and the step counter advances on success; a non-finite gradient
    /// refuses the step and leaves everything untouched.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<(), OptimError> {
        if let Some(i) = self.grads.iter().position(|g| !g.is_finite()) {
            return Err(OptimError::NonFiniteGradient(i));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = F::lit(beta1);
        let b2 = F::lit(beta2);
        let eps = F::lit(eps);
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);
        for group in &self.groups {
            let lr_g = F::lit(lr * group.lr_scale);
            let range = group.offset..group.offset + group.len;
            for i in range {
                let g = self.grads[i];
                self.m[i] = b1 * self.m[i] + (F::one() - b1) * g;
                self.v[i] = b2 * self.v[i] + (F::one() - b2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                self.values[i] = self.values[i] - lr_g * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.zero_grads();
        Ok(())
    }
}

impl<F: Real> Default for ParameterStore<F> {
    fn default() -> Self {
        Self::new()
    }
}
