//! Analytic ground-truth scenes (geometry, lighting, temperature), a dense
//! midpoint-quadrature oracle for the continuous rendering integral, and
//! synthetic dataset emission.

use crate::field::{FieldError, FieldSample};
use crate::isp::{simulate_short_exposure, write_lraw, write_preview, LinearImage, NoiseModel};
use crate::renderer::{Aabb, Camera, Ray, SampleField};
use crate::util::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum SynthError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("isp: {0}")]
    Isp(#[from] crate::isp::IspError),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("need at least 2 views, got {0}")]
    TooFewViews(usize),
    #[error("degenerate camera placement at view {0}")]
    DegenerateCamera(usize),
}

#[derive(Debug, Clone)]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
}

impl Shape {
    pub fn contains(&self, x: [f64; 3]) -> bool {
        match self {
            Shape::Sphere { center, radius } => {
                let d2: f64 = (0..3).map(|a| (x[a] - center[a]).powi(2)).sum();
                d2 <= radius * radius
            }
            Shape::Box { min, max } => (0..3).all(|a| x[a] >= min[a] && x[a] <= max[a]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Primitive {
    pub shape: Shape,
    /// Uniform density inside the shape.
    pub density: f64,
    /// Albedo per channel in [0, 1].
    pub albedo: [f64; 3],
    /// Thermal emission in [0, 1].
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub struct PointLight {
    pub position: [f64; 3],
    pub intensity: f64,
    pub falloff: f64,
}

/// Piecewise-constant volumetric scene inside the unit cube. Overlapping
/// primitives resolve to the first in list order.
#[derive(Debug, Clone)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub lights: Vec<PointLight>,
    pub ambient: f64,
}

/// One ground-truth sample: density, visible radiance, thermal emission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSample {
    pub sigma: f64,
    pub radiance: [f64; 3],
    pub thermal: f64,
}

impl AnalyticScene {
    /// Lighting factor at a point: ambient plus inverse-falloff point lights.
    fn lighting(&self, x: [f64; 3]) -> f64 {
        let mut light = self.ambient;
        for l in &self.lights {
            let d2: f64 = (0..3).map(|a| (x[a] - l.position[a]).powi(2)).sum();
            let d = d2.sqrt().max(1e-6);
            light += l.intensity / d.powf(l.falloff);
        }
        light
    }

    pub fn eval(&self, x: [f64; 3]) -> SceneSample {
        for p in &self.primitives {
            if p.shape.contains(x) {
                let light = self.lighting(x);
                return SceneSample {
                    sigma: p.density,
                    radiance: [p.albedo[0] * light, p.albedo[1] * light, p.albedo[2] * light],
                    thermal: p.temperature,
                };
            }
        }
        SceneSample { sigma: 0.0, radiance: [0.0; 3], thermal: 0.0 }
    }
}

/// Anything the quadrature oracle can integrate.
pub trait Medium: Sync {
    fn eval(&self, x: [f64; 3]) -> SceneSample;
}

impl Medium for AnalyticScene {
    fn eval(&self, x: [f64; 3]) -> SceneSample {
        AnalyticScene::eval(self, x)
    }
}

/// Dense midpoint-rule evaluation of the continuous rendering integral:
/// transmittance accumulates full subintervals before the current one plus
/// half of it, with no trainable parameters involved.
pub fn oracle_render<M: Medium + ?Sized>(medium: &M, ray: &Ray, nq: usize) -> ([f64; 3], f64) {
    assert!(nq >= 1);
    let dt = (ray.t_far - ray.t_near) / nq as f64;
    let mut color = [0.0f64; 3];
    let mut thermal = 0.0f64;
    let mut tau = 0.0f64;
    for k in 0..nq {
        let t = ray.t_near + (k as f64 + 0.5) * dt;
        let s = medium.eval(ray.at(t));
        let trans = (-(tau + 0.5 * s.sigma * dt)).exp();
        let w = trans * s.sigma * dt;
        for c in 0..3 {
            color[c] += w * s.radiance[c];
        }
        thermal += w * s.thermal;
        tau += s.sigma * dt;
    }
    (color, thermal)
}

/// Debug hook: expose an analytic medium to the renderer as a field whose
/// reflectance carries the full radiance and whose illumination is 1, so the
/// renderer's per-point accumulation is directly comparable to the oracle.
pub struct AnalyticSampleField<'a, M: Medium + ?Sized> {
    pub medium: &'a M,
    pub heads: usize,
}

impl<'a, M: Medium + ?Sized> SampleField<f64> for AnalyticSampleField<'a, M> {
    fn head_count(&self) -> usize {
        self.heads
    }

    fn sample(&self, x: [f64; 3], _d: [f64; 3]) -> Result<FieldSample<f64>, FieldError> {
        let s = self.medium.eval(x);
        Ok(FieldSample {
            sigma: s.sigma,
            reflectance: s.radiance,
            illumination: vec![1.0; self.heads],
            thermal: s.thermal,
        })
    }
}

// ---- presets -------------------------------------------------------------

pub const PRESET_NAMES: [&str; 3] = ["warm-sphere-night", "two-rooms", "cold-boxes"];

/// Built-in scenes covering the thermal-helps, multi-exposure-helps, and
/// thermal-useless regimes.
pub fn preset(name: &str) -> Option<AnalyticScene> {
    match name {
        "warm-sphere-night" => Some(AnalyticScene {
            primitives: vec![
                Primitive {
                    shape: Shape::Sphere { center: [0.5, 0.5, 0.32], radius: 0.16 },
                    density: 60.0,
                    albedo: [0.75, 0.45, 0.28],
                    temperature: 0.9,
                },
                Primitive {
                    shape: Shape::Sphere { center: [0.74, 0.34, 0.22], radius: 0.11 },
                    density: 60.0,
                    albedo: [0.30, 0.50, 0.70],
                    temperature: 0.35,
                },
                Primitive {
                    shape: Shape::Box { min: [0.04, 0.04, 0.0], max: [0.96, 0.96, 0.1] },
                    density: 60.0,
                    albedo: [0.40, 0.42, 0.38],
                    temperature: 0.05,
                },
            ],
            lights: vec![PointLight { position: [0.25, 0.75, 0.85], intensity: 0.09, falloff: 2.0 }],
            ambient: 0.03,
        }),
        "two-rooms" => Some(AnalyticScene {
            primitives: vec![
                Primitive {
                    shape: Shape::Box { min: [0.48, 0.04, 0.0], max: [0.52, 0.96, 0.62] },
                    density: 90.0,
                    albedo: [0.45, 0.45, 0.45],
                    temperature: 0.10,
                },
                Primitive {
                    shape: Shape::Sphere { center: [0.24, 0.52, 0.26], radius: 0.13 },
                    density: 70.0,
                    albedo: [0.70, 0.55, 0.30],
                    temperature: 0.60,
                },
                Primitive {
                    shape: Shape::Sphere { center: [0.76, 0.44, 0.24], radius: 0.13 },
                    density: 70.0,
                    albedo: [0.35, 0.55, 0.75],
                    temperature: 0.60,
                },
                Primitive {
                    shape: Shape::Box { min: [0.04, 0.04, 0.0], max: [0.96, 0.96, 0.08] },
                    density: 90.0,
                    albedo: [0.38, 0.40, 0.36],
                    temperature: 0.05,
                },
            ],
            lights: vec![
                PointLight { position: [0.24, 0.50, 0.85], intensity: 0.28, falloff: 2.0 },
                PointLight { position: [0.76, 0.50, 0.85], intensity: 0.0025, falloff: 2.0 },
            ],
            ambient: 0.0015,
        }),
        "cold-boxes" => Some(AnalyticScene {
            primitives: vec![
                Primitive {
                    shape: Shape::Box { min: [0.18, 0.3, 0.0], max: [0.42, 0.62, 0.34] },
                    density: 70.0,
                    albedo: [0.62, 0.40, 0.32],
                    temperature: 0.0,
                },
                Primitive {
                    shape: Shape::Box { min: [0.56, 0.34, 0.0], max: [0.84, 0.58, 0.46] },
                    density: 70.0,
                    albedo: [0.34, 0.48, 0.66],
                    temperature: 0.0,
                },
                Primitive {
                    shape: Shape::Box { min: [0.04, 0.04, 0.0], max: [0.96, 0.96, 0.08] },
                    density: 70.0,
                    albedo: [0.42, 0.42, 0.40],
                    temperature: 0.0,
                },
            ],
            lights: vec![PointLight { position: [0.5, 0.6, 0.9], intensity: 0.07, falloff: 2.0 }],
            ambient: 0.02,
        }),
        _ => None,
    }
}

// ---- dataset emission ------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetSpec {
    pub views: usize,
    pub image_size: u32,
    pub ring_radius: f64,
    pub ring_height: f64,
    pub fov_deg: f64,
    pub short_gain: f64,
    pub long_gain: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    /// Quadrature subintervals per ray for ground-truth rendering.
    pub oracle_quadrature: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            views: 18,
            image_size: 64,
            ring_radius: 1.05,
            ring_height: 0.85,
            fov_deg: 48.0,
            short_gain: 1.0 / 64.0,
            long_gain: 1.0,
            noise: NoiseModel { k_shot: 2e-5, sigma_read: 2e-3 },
            seed: 7,
            oracle_quadrature: 768,
        }
    }
}

const SCENE_CENTER: [f64; 3] = [0.5, 0.5, 0.3];

/// Cameras on a ring around the scene center, all looking inward.
pub fn ring_cameras(spec: &DatasetSpec) -> Vec<Camera> {
    let size = spec.image_size;
    let focal = size as f64 / (2.0 * (spec.fov_deg.to_radians() / 2.0).tan());
    (0..spec.views)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / spec.views as f64;
            let eye = [
                0.5 + spec.ring_radius * theta.cos(),
                0.5 + spec.ring_radius * theta.sin(),
                spec.ring_height,
            ];
            let dist: f64 = (0..3).map(|a| (eye[a] - SCENE_CENTER[a]).powi(2)).sum::<f64>().sqrt();
            let half_diag = 3f64.sqrt() / 2.0;
            Camera::look_at(
                eye,
                SCENE_CENTER,
                [0.0, 0.0, 1.0],
                focal,
                focal,
                size,
                size,
                (dist - half_diag).max(0.05),
                dist + half_diag,
            )
        })
        .collect()
}

/// Noiseless linear renders of one view: visible radiance and thermal.
pub fn render_ground_truth(scene: &AnalyticScene, camera: &Camera, nq: usize) -> (LinearImage, LinearImage) {
    let mut visible = LinearImage::new(camera.width, camera.height, 3);
    let mut thermal = LinearImage::new(camera.width, camera.height, 1);
    let rows: Vec<(Vec<f32>, Vec<f32>)> = (0..camera.height)
        .into_par_iter()
        .map(|y| {
            let mut vis_row = Vec::with_capacity(camera.width as usize * 3);
            let mut th_row = Vec::with_capacity(camera.width as usize);
            for x in 0..camera.width {
                let ray = camera.ray(x as f64, y as f64);
                let (c, h) = oracle_render(scene, &ray, nq);
                vis_row.extend(c.iter().map(|&v| v as f32));
                th_row.push(h as f32);
            }
            (vis_row, th_row)
        })
        .collect();
    for (y, (vis_row, th_row)) in rows.into_iter().enumerate() {
        let w = camera.width as usize;
        visible.data[y * w * 3..(y + 1) * w * 3].copy_from_slice(&vis_row);
        thermal.data[y * w..(y + 1) * w].copy_from_slice(&th_row);
    }
    (visible, thermal)
}

/// Emit a complete dataset: per view a noisy short-exposure LRAW, a noiseless
/// long-exposure LRAW, a noiseless thermal LRAW, and a postprocessed preview,
/// plus one poses manifest. Deterministic under the spec seed.
pub fn emit_dataset(scene: &AnalyticScene, spec: &DatasetSpec, out_dir: &Path) -> Result<crate::dataset::Manifest, SynthError> {
    if spec.views < 2 {
        return Err(SynthError::TooFewViews(spec.views));
    }
    std::fs::create_dir_all(out_dir)?;
    let cameras = ring_cameras(spec);
    for (k, cam) in cameras.iter().enumerate() {
        cam.validate().map_err(|_| SynthError::DegenerateCamera(k))?;
    }

    let views: Vec<crate::dataset::ViewEntry> = cameras
        .par_iter()
        .enumerate()
        .map(|(k, camera)| -> Result<crate::dataset::ViewEntry, SynthError> {
            let (clean_visible, thermal) = render_ground_truth(scene, camera, spec.oracle_quadrature);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, k as u64));
            let short = simulate_short_exposure(&clean_visible, spec.short_gain, &spec.noise, &mut rng);
            let long = simulate_short_exposure(&clean_visible, spec.long_gain, &NoiseModel::none(), &mut rng);

            let short_name = format!("view_{k}_short.lraw");
            let long_name = format!("view_{k}_long.lraw");
            let thermal_name = format!("view_{k}_thermal.lraw");
            let preview_name = format!("view_{k}_preview.ppm");
            write_lraw(&short, &out_dir.join(&short_name))?;
            write_lraw(&long, &out_dir.join(&long_name))?;
            write_lraw(&thermal, &out_dir.join(&thermal_name))?;
            write_preview(&long, &[1.0, 1.0, 1.0], 1.0, &out_dir.join(&preview_name))?;
            Ok(crate::dataset::ViewEntry {
                index: k,
                camera: camera.clone(),
                short: short_name,
                long: long_name,
                thermal: thermal_name,
                preview: preview_name,
            })
        })
        .collect::<Result<_, _>>()?;

    let manifest = crate::dataset::Manifest {
        seed: spec.seed,
        short_gain: spec.short_gain,
        long_gain: spec.long_gain,
        noise: spec.noise,
        bounds: Aabb::unit(),
        views,
    };
    manifest.save(&out_dir.join("poses.json"))?;
    Ok(manifest)
}

/// A ray from a random viewpoint outside the scene toward a random interior
/// target (for oracle-agreement sweeps).
pub fn random_scene_ray(rng: &mut ChaCha8Rng) -> Ray {
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let z = rng.gen_range(0.4..1.1);
    let radius = rng.gen_range(0.9..1.3);
    let eye = [0.5 + radius * theta.cos(), 0.5 + radius * theta.sin(), z];
    let target = [
        rng.gen_range(0.25..0.75),
        rng.gen_range(0.25..0.75),
        rng.gen_range(0.05..0.5),
    ];
    let dir = [target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]];
    let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    let dist: f64 = n;
    Ray {
        origin: eye,
        dir: [dir[0] / n, dir[1] / n, dir[2] / n],
        t_near: (dist - 0.87).max(0.05),
        t_far: dist + 0.87,
    }
}
