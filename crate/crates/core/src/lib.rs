//! Differentiable volume rendering for joint thermal + raw-visible low-light
//! scene reconstruction, with analytic synthetic scenes and a quadrature
//! oracle for verification.

pub mod autodiff;
pub mod dataset;
pub mod encoding;
pub mod exposure;
pub mod field;
pub mod isp;
pub mod losses;
pub mod metrics;
pub mod renderer;
pub mod synthworld;
pub mod util;
pub mod real;

pub use real::Real;
