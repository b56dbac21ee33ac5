//! The neural scene function: a density trunk over hash-grid features plus
//! parallel view-dependent heads for reflectance, per-exposure illumination
//! scalars, and thermal radiance.

use crate::autodiff::{NodeId, ParameterStore, Tape};
use crate::encoding::{
    encode_direction, encode_position, encode_position_tape, DirectionEncodingConfig,
    GridLayout, HashGridConfig,
};
use crate::real::Real;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum FieldError {
    #[error("non-finite output from {head} head")]
    NonFinite { head: &'static str },
}

#[derive(Error, Debug)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic; not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt config block: {0}")]
    BadConfig(#[from] serde_json::Error),
    #[error("truncated parameter payload")]
    Truncated,
}

/// Architecture of the scene function.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FieldConfig {
    pub grid: HashGridConfig,
    pub dir_enc: DirectionEncodingConfig,
    /// Hidden width of the density trunk.
    pub trunk_width: usize,
    /// Hidden layers in the trunk.
    pub trunk_depth: usize,
    /// Hidden width of each prediction head.
    pub head_width: usize,
    /// Hidden layers in each head.
    pub head_depth: usize,
    /// Illumination heads (j + 1).
    pub ill_heads: usize,
    /// Geometry feature width passed from trunk to heads.
    pub geo_features: usize,
    /// Ceiling of the exponential illumination activation.
    pub u_max: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            grid: HashGridConfig::default(),
            dir_enc: DirectionEncodingConfig::default(),
            trunk_width: 64,
            trunk_depth: 2,
            head_width: 32,
            head_depth: 1,
            ill_heads: 4,
            geo_features: 15,
            u_max: 10.0,
        }
    }
}

/// One point sample of the field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample<F> {
    /// Volume density per unit length, >= 0.
    pub sigma: F,
    /// Reflectance per channel, in [0, 1].
    pub reflectance: [F; 3],
    /// One linear-radiance illumination scalar per exposure head, >= 0.
    pub illumination: Vec<F>,
    /// Thermal radiance in [0, 1].
    pub thermal: F,
}

#[derive(Debug, Clone)]
struct LinearLayout {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone)]
struct MlpLayout {
    layers: Vec<LinearLayout>,
}

/// Field architecture bound to concrete parameter-vector offsets.
pub struct Field {
    pub config: FieldConfig,
    grid_layout: GridLayout,
    grid_base: usize,
    mlp_base: usize,
    trunk: MlpLayout,
    ref_head: MlpLayout,
    ill_heads: Vec<MlpLayout>,
    thermal_head: MlpLayout,
    total_params: usize,
}

fn plan_mlp(cursor: &mut usize, mut input: usize, hidden: usize, depth: usize, output: usize) -> MlpLayout {
    let mut layers = Vec::new();
    for _ in 0..depth {
        layers.push(LinearLayout { w: *cursor, b: *cursor + hidden * input, rows: hidden, cols: input });
        *cursor += hidden * input + hidden;
        input = hidden;
    }
    layers.push(LinearLayout { w: *cursor, b: *cursor + output * input, rows: output, cols: input });
    *cursor += output * input + output;
    MlpLayout { layers }
}

impl Field {
    pub fn new(config: FieldConfig) -> Self {
        assert!(config.ill_heads >= 1, "need at least one illumination head");
        let grid_layout = config.grid.layout();
        let grid_base = 0usize;
        let mlp_base = grid_layout.total;
        let mut cursor = mlp_base;
        let enc_len = config.grid.output_len();
        let trunk = plan_mlp(&mut cursor, enc_len, config.trunk_width, config.trunk_depth, 1 + config.geo_features);
        let head_in = config.geo_features + config.dir_enc.output_len();
        let ref_head = plan_mlp(&mut cursor, head_in, config.head_width, config.head_depth, 3);
        let ill_heads = (0..config.ill_heads)
            .map(|_| plan_mlp(&mut cursor, head_in, config.head_width, config.head_depth, 1))
            .collect();
        let thermal_head = plan_mlp(&mut cursor, head_in, config.head_width, config.head_depth, 1);
        Field {
            config,
            grid_layout,
            grid_base,
            mlp_base,
            trunk,
            ref_head,
            ill_heads,
            thermal_head,
            total_params: cursor,
        }
    }

    pub fn param_count(&self) -> usize {
        self.total_params
    }

    pub fn grid_param_count(&self) -> usize {
        self.grid_layout.total
    }

    /// Parameter range of one illumination head (for ablation bookkeeping).
    pub fn ill_head_range(&self, k: usize) -> std::ops::Range<usize> {
        let first = &self.ill_heads[k].layers[0];
        let last = self.ill_heads[k].layers.last().unwrap();
        first.w..last.b + last.rows
    }

    pub fn thermal_head_range(&self) -> std::ops::Range<usize> {
        let first = &self.thermal_head.layers[0];
        let last = self.thermal_head.layers.last().unwrap();
        first.w..last.b + last.rows
    }

    /// Seeded initialization: grid tables uniform in [-1e-4, 1e-4], MLP
    /// weights uniform within +-1/sqrt(fan_in), biases zero.
    pub fn init_params<F: Real>(&self, seed: u64, lr_scale_grid: f64, lr_scale_mlp: f64) -> ParameterStore<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let tables: Vec<F> = self.config.grid.init_tables(&mut rng);
        store.push_group(&tables, lr_scale_grid);

        let mut mlp = vec![F::zero(); self.total_params - self.mlp_base];
        let fill = |layout: &MlpLayout, mlp: &mut [F], rng: &mut ChaCha8Rng| {
            for layer in &layout.layers {
                let bound = 1.0 / (layer.cols as f64).sqrt();
                for i in 0..layer.rows * layer.cols {
                    mlp[layer.w - self.mlp_base + i] = F::lit(rng.gen_range(-bound..bound));
                }
                // biases stay zero
            }
        };
        fill(&self.trunk, &mut mlp, &mut rng);
        fill(&self.ref_head, &mut mlp, &mut rng);
        for head in &self.ill_heads {
            fill(head, &mut mlp, &mut rng);
        }
        fill(&self.thermal_head, &mut mlp, &mut rng);
        store.push_group(&mlp, lr_scale_mlp);
        debug_assert_eq!(store.len(), self.total_params);
        store
    }

    fn mlp_plain<F: Real>(&self, params: &[F], layout: &MlpLayout, input: &[F]) -> Vec<F> {
        let mut cur = input.to_vec();
        for (li, layer) in layout.layers.iter().enumerate() {
            let mut next = vec![F::zero(); layer.rows];
            for r in 0..layer.rows {
                let row = &params[layer.w + r * layer.cols..layer.w + (r + 1) * layer.cols];
                let mut acc = params[layer.b + r];
                for (w, x) in row.iter().zip(&cur) {
                    acc = acc + *w * *x;
                }
                next[r] = if li + 1 < layout.layers.len() && acc < F::zero() {
                    F::zero() // hidden ReLU
                } else {
                    acc
                };
            }
            cur = next;
        }
        cur
    }

    fn mlp_tape<F: Real>(&self, tape: &mut Tape<F>, params: &[F], layout: &MlpLayout, input: NodeId) -> NodeId {
        let mut cur = input;
        for (li, layer) in layout.layers.iter().enumerate() {
            let mv = tape.matvec(params, layer.w, layer.rows, layer.cols, cur);
            let b = tape.param(params, layer.b, layer.rows);
            let z = tape.add(mv, b);
            cur = if li + 1 < layout.layers.len() { tape.relu(z) } else { z };
        }
        cur
    }

    /// Evaluate the field at a point (unit-cube coordinates) and unit view
    /// direction. Plain straight-line path used for inference and as the
    /// independent cross-check of the tape path.
    pub fn query<F: Real>(&self, params: &[F], x: [F; 3], d: [F; 3]) -> Result<FieldSample<F>, FieldError> {
        let enc = encode_position(&self.config.grid, &self.grid_layout, params, self.grid_base, x);
        let trunk_out = self.mlp_plain(params, &self.trunk, &enc);
        let sigma = softplus(trunk_out[0]);
        let dir = encode_direction(d, &self.config.dir_enc)
            .map_err(|_| FieldError::NonFinite { head: "direction" })?;
        let mut head_in = Vec::with_capacity(self.config.geo_features + dir.len());
        head_in.extend_from_slice(&trunk_out[1..]);
        head_in.extend_from_slice(&dir);

        let ref_out = self.mlp_plain(params, &self.ref_head, &head_in);
        let reflectance = [sigmoid(ref_out[0]), sigmoid(ref_out[1]), sigmoid(ref_out[2])];
        let u_max = F::lit(self.config.u_max);
        let mut illumination = Vec::with_capacity(self.config.ill_heads);
        for head in &self.ill_heads {
            let u = self.mlp_plain(params, head, &head_in)[0];
            illumination.push(exp_activation(u, u_max));
        }
        let h_out = self.mlp_plain(params, &self.thermal_head, &head_in)[0];
        let thermal = sigmoid(h_out);

        let sample = FieldSample { sigma, reflectance, illumination, thermal };
        if !sample.sigma.is_finite() {
            return Err(FieldError::NonFinite { head: "density" });
        }
        if sample.reflectance.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite { head: "reflectance" });
        }
        if sample.illumination.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite { head: "illumination" });
        }
        if !sample.thermal.is_finite() {
            return Err(FieldError::NonFinite { head: "thermal" });
        }
        Ok(sample)
    }

    /// Direction features as a reusable tape constant (one per ray).
    pub fn direction_node<F: Real>(&self, tape: &mut Tape<F>, d: [F; 3]) -> NodeId {
        let dir = encode_direction(d, &self.config.dir_enc).expect("unit direction");
        tape.constant(&dir)
    }

    /// Tape version of [`Field::query`]; gradients flow into the hash tables
    /// and the MLP weights. Skips the thermal head when not wanted.
    pub fn query_tape<F: Real>(
        &self,
        tape: &mut Tape<F>,
        params: &[F],
        x: [F; 3],
        dir_feat: NodeId,
        want_thermal: bool,
    ) -> FieldTapeSample {
        let enc = encode_position_tape(tape, &self.config.grid, &self.grid_layout, params, self.grid_base, x);
        let trunk_out = self.mlp_tape(tape, params, &self.trunk, enc);
        let sigma_raw = tape.slice(trunk_out, 0, 1);
        let sigma = tape.softplus(sigma_raw);
        let geom = tape.slice(trunk_out, 1, self.config.geo_features);
        let head_in = tape.concat(&[geom, dir_feat]);

        let ref_out = self.mlp_tape(tape, params, &self.ref_head, head_in);
        let reflectance = tape.sigmoid(ref_out);

        let u_max = F::lit(self.config.u_max);
        let ill_parts: Vec<NodeId> = self
            .ill_heads
            .iter()
            .map(|head| {
                let u = self.mlp_tape(tape, params, head, head_in);
                let capped = tape.clamp(u, F::neg_infinity(), u_max);
                tape.exp(capped)
            })
            .collect();
        let illumination = tape.concat(&ill_parts);

        let thermal = want_thermal.then(|| {
            let u = self.mlp_tape(tape, params, &self.thermal_head, head_in);
            tape.sigmoid(u)
        });
        FieldTapeSample { sigma, reflectance, illumination, thermal }
    }
}

/// Node handles for one tape-evaluated field sample.
#[derive(Debug, Clone, Copy)]
pub struct FieldTapeSample {
    pub sigma: NodeId,
    pub reflectance: NodeId,
    pub illumination: NodeId,
    pub thermal: Option<NodeId>,
}

/// Exponential activation with a hard ceiling: `exp(min(u, u_max))`.
/// The derivative is `exp(u)` below the ceiling and 0 above it.
pub fn exp_activation<F: Real>(u: F, u_max: F) -> F {
    if u <= u_max {
        u.exp()
    } else {
        u_max.exp()
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn softplus<F: Real>(x: F) -> F {
    let m = if x > F::zero() { x } else { F::zero() };
    m + (F::one() + (-x.abs()).exp()).ln()
}

// ---- checkpoint file format -------------------------------------------

const CKPT_MAGIC: &[u8; 7] = b"TNFCKPT";
const CKPT_VERSION: u32 = 1;

/// Write a checkpoint: magic, version, JSON config block, then the flat
/// 32-bit little-endian parameter vector.
pub fn write_checkpoint<M: Serialize>(path: &Path, meta: &M, params: &[f32]) -> Result<(), CheckpointError> {
    let json = serde_json::to_vec(meta)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<M: serde::de::DeserializeOwned>(path: &Path) -> Result<(M, Vec<f32>), CheckpointError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != CKPT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != CKPT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    r.read_exact(&mut buf4)?;
    let json_len = u32::from_le_bytes(buf4) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json).map_err(|_| CheckpointError::Truncated)?;
    let meta: M = serde_json::from_slice(&json)?;
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let count = u64::from_le_bytes(buf8) as usize;
    let mut params = vec![0f32; count];
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes).map_err(|_| CheckpointError::Truncated)?;
    for (p, chunk) in params.iter_mut().zip(bytes.chunks_exact(4)) {
        *p = f32::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok((meta, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    fn tiny_config() -> FieldConfig {
        FieldConfig {
            grid: HashGridConfig {
                levels: 2,
                features: 2,
                log2_table_size: 6,
                base_resolution: 4,
                growth: 1.5,
            },
            dir_enc: DirectionEncodingConfig { frequencies: 2 },
            trunk_width: 8,
            trunk_depth: 2,
            head_width: 8,
            head_depth: 1,
            ill_heads: 3,
            geo_features: 7,
            u_max: 10.0,
        }
    }

    #[test]
    fn fresh_field_outputs_are_sane() {
        let field = Field::new(tiny_config());
        let store = field.init_params::<f64>(11, 1.0, 1.0);
        let s = field.query(&store.values, [0.4, 0.5, 0.6], [0.0, 0.0, 1.0]).unwrap();
        // Pre-activation is near zero at init, so sigma ~ softplus(0) = ln 2.
        assert!((s.sigma - (2f64).ln()).abs() < 0.2, "sigma {}", s.sigma);
        assert!(s.reflectance.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(s.illumination.iter().all(|v| *v >= 0.0 && v.is_finite()));
        assert!((0.0..=1.0).contains(&s.thermal));
    }

    #[test]
    fn query_is_deterministic() {
        let field = Field::new(tiny_config());
        let store = field.init_params::<f64>(12, 1.0, 1.0);
        let a = field.query(&store.values, [0.2, 0.8, 0.5], [0.0, 1.0, 0.0]).unwrap();
        let b = field.query(&store.values, [0.2, 0.8, 0.5], [0.0, 1.0, 0.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tape_and_plain_paths_agree() {
        let field = Field::new(tiny_config());
        let store = field.init_params::<f64>(13, 1.0, 1.0);
        let x = [0.3, 0.6, 0.2];
        let d = [0.0, 0.0, 1.0];
        let plain = field.query(&store.values, x, d).unwrap();

        let mut tape = Tape::new();
        let dir = field.direction_node(&mut tape, d);
        let s = field.query_tape(&mut tape, &store.values, x, dir, true);
        assert!((tape.value(s.sigma)[0] - plain.sigma).abs() < 1e-12);
        for c in 0..3 {
            assert!((tape.value(s.reflectance)[c] - plain.reflectance[c]).abs() < 1e-12);
        }
        for k in 0..3 {
            assert!((tape.value(s.illumination)[k] - plain.illumination[k]).abs() < 1e-12);
        }
        assert!((tape.value(s.thermal.unwrap())[0] - plain.thermal).abs() < 1e-12);
    }

    #[test]
    fn sample_gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let field = Field::new(tiny_config());
        // Random parameters of unit scale: a freshly initialized field has
        // every ReLU pre-activation within the finite-difference step of its
        // kink, which central differences cannot measure.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        let mut store = field.init_params::<f64>(14, 1.0, 1.0);
        for v in store.values.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        let x = [0.37, 0.52, 0.61];
        let d = [0.0, 0.0, 1.0];

        // Check d(sum of all outputs)/d(params) through every head.
        let eval = |p: &[f64]| {
            let s = field.query(p, x, d).unwrap();
            s.sigma + s.reflectance.iter().sum::<f64>() + s.illumination.iter().sum::<f64>() + s.thermal
        };
        let mut tape = Tape::new();
        let dir = field.direction_node(&mut tape, d);
        let s = field.query_tape(&mut tape, &store.values, x, dir, true);
        let parts = [s.sigma, s.reflectance, s.illumination, s.thermal.unwrap()];
        let cat = tape.concat(&parts);
        let sum = tape.sum_reduce(cat);
        let mut grads = vec![0.0; store.len()];
        tape.backward(sum, &[1.0], &store.values, &mut grads).unwrap();

        let report = grad_check(eval, &grads, &store.values, 1e-5);
        assert!(report.passes(1e-4), "rel err {} at {}", report.max_rel_err, report.worst_coord);
        // Touched hash rows carry nonzero gradient.
        assert!(grads[..field.grid_param_count()].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn range_invariants_hold_for_any_parameters() {
        use rand::{Rng, SeedableRng};
        let field = Field::new(tiny_config());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..25 {
            let params: Vec<f64> = (0..field.param_count()).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let s = field.query(&params, x, [0.0, 0.0, 1.0]).unwrap();
            assert!(s.sigma >= 0.0);
            assert!(s.reflectance.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(s.illumination.iter().all(|v| (0.0..=(10.0f64).exp() + 1.0).contains(v)));
            assert!((0.0..=1.0).contains(&s.thermal));
        }
    }

    #[test]
    fn exp_activation_examples() {
        assert!((exp_activation(0.0f64, 10.0) - 1.0).abs() < 1e-12);
        assert!((exp_activation(-2.0f64, 10.0) - (-2.0f64).exp()).abs() < 1e-12);
        assert!((exp_activation(15.0f64, 10.0) - (10.0f64).exp()).abs() < 1e-9);

        // Gradient is zero above the ceiling.
        let mut tape = Tape::<f64>::new();
        let u = tape.input(&[15.0]);
        let capped = tape.clamp(u, f64::NEG_INFINITY, 10.0);
        let y = tape.exp(capped);
        let mut grads = vec![];
        tape.backward(y, &[1.0], &[], &mut grads).unwrap();
        assert_eq!(tape.adjoint(u), &[0.0]);
    }

    #[test]
    fn reflectance_can_be_view_dependent() {
        // Fit one point to different targets from two directions; if the
        // design were isotropic this could not reach both.
        let mut cfg = tiny_config();
        cfg.ill_heads = 1;
        let field = Field::new(cfg);
        let mut store = field.init_params::<f64>(5, 1.0, 1.0);
        let x = [0.5, 0.5, 0.5];
        let d1 = [0.0, 0.0, 1.0];
        let d2 = [0.0, 0.0, -1.0];
        let targets = [0.2, 0.8];

        let mut grads = vec![0.0; store.len()];
        let mut tape = Tape::new();
        for _ in 0..400 {
            grads.fill(0.0);
            for (d, t) in [d1, d2].iter().zip(targets) {
                tape.reset();
                let dir = field.direction_node(&mut tape, *d);
                let s = field.query_tape(&mut tape, &store.values, x, dir, false);
                let tgt = tape.constant(&[t, t, t]);
                let r = tape.sub(s.reflectance, tgt);
                let sq = tape.mul(r, r);
                let loss = tape.sum_reduce(sq);
                tape.backward(loss, &[1.0], &store.values, &mut grads).unwrap();
            }
            store.accumulate_grads(&grads);
            store.adam_step(3e-3, 0.9, 0.999, 1e-8).unwrap();
        }
        let r1 = field.query(&store.values, x, d1).unwrap().reflectance[0];
        let r2 = field.query(&store.values, x, d2).unwrap().reflectance[0];
        assert!((r1 - 0.2).abs() < 0.05, "r1 = {r1}");
        assert!((r2 - 0.8).abs() < 0.05, "r2 = {r2}");
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = std::env::temp_dir().join("nightglow_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.ckpt");
        let cfg = tiny_config();
        let params: Vec<f32> = (0..100).map(|i| i as f32 * 0.5).collect();
        write_checkpoint(&path, &cfg, &params).unwrap();
        let (meta, loaded): (FieldConfig, Vec<f32>) = read_checkpoint(&path).unwrap();
        assert_eq!(meta, cfg);
        assert_eq!(loaded, params);

        // Corrupt magic is a typed error.
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        match read_checkpoint::<FieldConfig>(&path) {
            Err(CheckpointError::BadMagic) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }
}
