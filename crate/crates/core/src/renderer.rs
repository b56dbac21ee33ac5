//! Ray generation, stratified sampling, and discrete volume rendering with
//! Retinex-style accumulation: reflectance and illumination are accumulated
//! separately along the ray and multiplied in image space afterwards.

use crate::field::{Field, FieldError, FieldSample};
use crate::real::Real;
use rand::Rng;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("numeric error at sample {index}: {source}")]
    Sample { index: usize, source: FieldError },
}

/// Pinhole camera: intrinsics in pixels plus a rigid camera-to-world
/// transform. Camera frame is x-right, y-down, z-forward.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major rigid camera-to-world transform.
    pub c2w: [[f64; 4]; 4],
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(RenderError::Camera("focal lengths must be positive".into()));
        }
        if !(0.0 < self.near && self.near < self.far) {
            return Err(RenderError::Camera("need 0 < near < far".into()));
        }
        // Rotation block orthonormal to 1e-6.
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| self.c2w[k][i] * self.c2w[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return Err(RenderError::Camera("rotation block not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// Camera placed at `eye` looking at `target`, with `up` fixing roll.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Camera {
        let forward = normalize(sub(target, eye));
        let right = normalize(cross(forward, up));
        let down = cross(forward, right);
        let mut c2w = [[0.0; 4]; 4];
        for i in 0..3 {
            c2w[i][0] = right[i];
            c2w[i][1] = down[i];
            c2w[i][2] = forward[i];
            c2w[i][3] = eye[i];
        }
        c2w[3][3] = 1.0;
        Camera {
            fx,
            fy,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            c2w,
            near,
            far,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.c2w[0][3], self.c2w[1][3], self.c2w[2][3]]
    }

    /// Ray through pixel coordinates (px, py) via inverse intrinsics.
    pub fn ray(&self, px: f64, py: f64) -> Ray {
        let dc = [(px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0];
        let mut dw = [0.0; 3];
        for i in 0..3 {
            dw[i] = self.c2w[i][0] * dc[0] + self.c2w[i][1] * dc[1] + self.c2w[i][2] * dc[2];
        }
        Ray {
            origin: self.position(),
            dir: normalize(dw),
            t_near: self.near,
            t_far: self.far,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ray {
    pub origin: [f64; 3],
    /// Unit direction.
    pub dir: [f64; 3],
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }
}

/// Axis-aligned scene bounds, mapped onto the unit cube for encoding.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn unit() -> Aabb {
        Aabb { min: [0.0; 3], max: [1.0; 3] }
    }

    pub fn to_unit(&self, x: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = (x[a] - self.min[a]) / (self.max[a] - self.min[a]);
        }
        out
    }
}

pub fn make_rays(camera: &Camera, pixels: &[(u32, u32)]) -> Vec<Ray> {
    pixels.iter().map(|&(px, py)| camera.ray(px as f64, py as f64)).collect()
}

/// Stratified depths along a ray: one sample per bin of `[t_near, t_far]`
/// split into `n` equal bins; bin centers when `jitter` is `None`.
/// `delta[i] = t[i+1] - t[i]`, with the last delta closing to `t_far`.
#[derive(Debug, Clone)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

pub fn sample_stratified(ray: &Ray, n: usize, mut jitter: Option<&mut dyn FnMut() -> f64>) -> RaySamples {
    assert!(n >= 1);
    let span = ray.t_far - ray.t_near;
    let bin = span / n as f64;
    let mut t = Vec::with_capacity(n);
    for i in 0..n {
        let u = match jitter.as_mut() {
            Some(f) => f(),
            None => 0.5,
        };
        t.push(ray.t_near + (i as f64 + u) * bin);
    }
    let mut delta = Vec::with_capacity(n);
    for i in 0..n {
        if i + 1 < n {
            delta.push(t[i + 1] - t[i]);
        } else {
            delta.push(ray.t_far - t[i]);
        }
    }
    RaySamples { t, delta }
}

/// Uniform jitter source backed by any RNG.
pub fn jitter_from_rng<R: Rng>(rng: &mut R) -> impl FnMut() -> f64 + '_ {
    move || rng.gen_range(0.0..1.0)
}

/// Per-sample opacity, transmittance, and compositing weights:
/// `alpha_i = 1 - exp(-sigma_i delta_i)`, `T_i = exp(-sum_{j<i} sigma_j delta_j)`,
/// `w_i = alpha_i T_i`. The weights sum to at most 1.
#[derive(Debug, Clone)]
pub struct WeightTerms<F> {
    pub alpha: Vec<F>,
    pub transmittance: Vec<F>,
    pub weights: Vec<F>,
}

pub fn compute_weights<F: Real>(sigma: &[F], delta: &[F]) -> WeightTerms<F> {
    assert_eq!(sigma.len(), delta.len());
    let n = sigma.len();
    let mut alpha = Vec::with_capacity(n);
    let mut transmittance = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut tau_acc = F::zero();
    for i in 0..n {
        let tau = sigma[i] * delta[i];
        let a = F::one() - (-tau).exp();
        let t = (-tau_acc).exp();
        alpha.push(a);
        transmittance.push(t);
        weights.push(a * t);
        tau_acc = tau_acc + tau;
    }
    WeightTerms { alpha, transmittance, weights }
}

/// Anything the renderer can sample: the neural field, or an analytic scene
/// standing in for it as a debug hook.
pub trait SampleField<F: Real> {
    fn head_count(&self) -> usize;
    /// `x` in world coordinates; implementations handle their own mapping.
    fn sample(&self, x: [F; 3], d: [F; 3]) -> Result<FieldSample<F>, FieldError>;
}

/// Neural field bound to parameters and scene bounds.
pub struct NeuralSampleField<'a, F: Real> {
    pub field: &'a Field,
    pub params: &'a [F],
    pub bounds: Aabb,
}

impl<'a, F: Real> SampleField<F> for NeuralSampleField<'a, F> {
    fn head_count(&self) -> usize {
        self.field.config.ill_heads
    }

    fn sample(&self, x: [F; 3], d: [F; 3]) -> Result<FieldSample<F>, FieldError> {
        let xw = [x[0].to_f64(), x[1].to_f64(), x[2].to_f64()];
        let u = self.bounds.to_unit(xw);
        let xu = [F::lit(u[0]), F::lit(u[1]), F::lit(u[2])];
        self.field.query(self.params, xu, d)
    }
}

/// One rendered pixel.
#[derive(Debug, Clone)]
pub struct RenderOutput<F> {
    /// Accumulated reflectance.
    pub reflectance: [F; 3],
    /// Accumulated illumination per exposure head.
    pub illumination: Vec<F>,
    /// Image-space products: `head_colors[k] = reflectance * illumination[k]`.
    pub head_colors: Vec<[F; 3]>,
    /// Classic per-point radiance accumulation `sum w_i (ref_i * ill_{i,0})`,
    /// the quantity the quadrature oracle integrates.
    pub color_pointwise: [F; 3],
    pub thermal: F,
    /// Sum of weights, in [0, 1].
    pub opacity: F,
    /// Expected termination depth (diagnostic).
    pub depth: F,
}

#[derive(Debug, Clone)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { samples_per_ray: 128 }
    }
}

/// Render one pixel with deterministic stratified sampling: query the field
/// at every sample, accumulate reflectance / illuminations / thermal with the
/// same weights, and form per-head colors as image-space products afterwards
/// (never per point).
pub fn render_pixel<F: Real, S: SampleField<F>>(
    field: &S,
    ray: &Ray,
    cfg: &RenderConfig,
) -> Result<RenderOutput<F>, RenderError> {
    let samples = sample_stratified(ray, cfg.samples_per_ray, None);
    let heads = field.head_count();
    let d = [F::lit(ray.dir[0]), F::lit(ray.dir[1]), F::lit(ray.dir[2])];

    let n = samples.t.len();
    let mut sigma = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n);
    for (i, &t) in samples.t.iter().enumerate() {
        let xw = ray.at(t);
        let x = [F::lit(xw[0]), F::lit(xw[1]), F::lit(xw[2])];
        let s = field.sample(x, d).map_err(|source| RenderError::Sample { index: i, source })?;
        sigma.push(s.sigma);
        points.push(s);
    }
    let delta: Vec<F> = samples.delta.iter().map(|&v| F::lit(v)).collect();
    let wt = compute_weights(&sigma, &delta);

    let mut reflectance = [F::zero(); 3];
    let mut illumination = vec![F::zero(); heads];
    let mut color_pointwise = [F::zero(); 3];
    let mut thermal = F::zero();
    let mut opacity = F::zero();
    let mut depth = F::zero();
    for (i, s) in points.iter().enumerate() {
        let w = wt.weights[i];
        for c in 0..3 {
            reflectance[c] = reflectance[c] + w * s.reflectance[c];
            color_pointwise[c] = color_pointwise[c] + w * s.reflectance[c] * s.illumination[0];
        }
        for k in 0..heads {
            illumination[k] = illumination[k] + w * s.illumination[k];
        }
        thermal = thermal + w * s.thermal;
        opacity = opacity + w;
        depth = depth + w * F::lit(samples.t[i]);
    }
    let head_colors = illumination
        .iter()
        .map(|&ill| [reflectance[0] * ill, reflectance[1] * ill, reflectance[2] * ill])
        .collect();
    Ok(RenderOutput {
        reflectance,
        illumination,
        head_colors,
        color_pointwise,
        thermal,
        opacity,
        depth,
    })
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}
