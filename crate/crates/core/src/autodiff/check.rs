//! Finite-difference gradient verification.

use crate::real::Real;

/// Outcome of a gradient check. Failures are reported, never thrown.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compare an analytic gradient against central differences
/// `(f(x+h) - f(x-h)) / 2h` per coordinate, with `h = h_scale * max(1, |x_i|)`.
///
/// Relative error is `|ad - fd| / max(1, |ad|, |fd|)`, i.e. absolute below
/// unit magnitude, which keeps finite-difference roundoff from flagging
/// near-zero gradients.
pub fn grad_check<F: Real>(
    mut value_fn: impl FnMut(&[F]) -> F,
    analytic_grad: &[F],
    point: &[F],
    h_scale: f64,
) -> GradCheckReport {
    assert_eq!(analytic_grad.len(), point.len());
    assert!(h_scale > 0.0, "perturbation must be positive");
    let mut x: Vec<F> = point.to_vec();
    let mut max_rel_err = 0.0f64;
    let mut worst_coord = 0;
    for i in 0..x.len() {
        let xi = x[i];
        let h = F::lit(h_scale * xi.to_f64().abs().max(1.0));
        x[i] = xi + h;
        let fp = value_fn(&x).to_f64();
        x[i] = xi - h;
        let fm = value_fn(&x).to_f64();
        x[i] = xi;
        let fd = (fp - fm) / (2.0 * h.to_f64());
        let ad = analytic_grad[i].to_f64();
        let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_coord = i;
        }
    }
    GradCheckReport { max_rel_err, worst_coord, checked: x.len() }
}
