//! Positional encoding via multi-resolution hash grids and frequency-based
//! direction encoding.
//!
//! Positions live in the unit cube; each grid level trilinearly interpolates
//! the 8 corner rows of its feature table, so gradients reach exactly those
//! rows. Coarse levels whose corner lattice fits in the table use a dense
//! injective index instead of hashing.

use crate::autodiff::{NodeId, Tape};
use crate::real::Real;
use rand::Rng;
use std::sync::atomic::{AtomicBool, Ordering};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum EncodingError {
    #[error("direction must be unit length (got |d| = {0})")]
    NotUnitLength(f64),
}

/// Hash-grid hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct HashGridConfig {
    /// Number of resolution levels.
    pub levels: usize,
    /// Feature channels per level.
    pub features: usize,
    /// log2 of the per-level table size.
    pub log2_table_size: u32,
    /// Cells per axis at the coarsest level.
    pub base_resolution: u32,
    /// Per-level resolution growth factor (> 1).
    pub growth: f64,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            levels: 8,
            features: 2,
            log2_table_size: 15,
            base_resolution: 16,
            growth: 1.5,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> bool {
        self.levels >= 1 && self.features >= 1 && self.growth > 1.0 && self.base_resolution >= 1
    }

    /// Cells per axis at level `l` (nondecreasing in `l`).
    pub fn resolution(&self, level: usize) -> u32 {
        (self.base_resolution as f64 * self.growth.powi(level as i32)).floor() as u32
    }

    /// Output feature length of [`encode_position`].
    pub fn output_len(&self) -> usize {
        self.levels * self.features
    }

    pub fn layout(&self) -> GridLayout {
        let hash_rows = 1usize << self.log2_table_size;
        let mut level_offsets = Vec::with_capacity(self.levels);
        let mut level_rows = Vec::with_capacity(self.levels);
        let mut total = 0usize;
        for l in 0..self.levels {
            let corners = self.resolution(l) as usize + 1;
            let dense = corners.pow(3);
            let rows = dense.min(hash_rows);
            level_offsets.push(total);
            level_rows.push(rows);
            total += rows * self.features;
        }
        GridLayout { level_offsets, level_rows, total }
    }

    /// Fresh table values, uniform in [-1e-4, 1e-4].
    pub fn init_tables<F: Real>(&self, rng: &mut impl Rng) -> Vec<F> {
        let layout = self.layout();
        (0..layout.total).map(|_| F::lit(rng.gen_range(-1e-4..1e-4))).collect()
    }
}

/// Parameter-vector layout of all level tables.
#[derive(Debug, Clone)]
pub struct GridLayout {
    pub level_offsets: Vec<usize>,
    pub level_rows: Vec<usize>,
    pub total: usize,
}

/// Frequency-encoding hyperparameters for view directions.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct DirectionEncodingConfig {
    pub frequencies: usize,
}

impl Default for DirectionEncodingConfig {
    fn default() -> Self {
        DirectionEncodingConfig { frequencies: 4 }
    }
}

impl DirectionEncodingConfig {
    pub fn output_len(&self) -> usize {
        3 + 6 * self.frequencies
    }
}

static OUT_OF_BOUNDS: AtomicBool = AtomicBool::new(false);

/// Debug-mode flag set when `encode_position` had to clamp a query.
pub fn position_was_clamped() -> bool {
    OUT_OF_BOUNDS.load(Ordering::Relaxed)
}

pub fn clear_clamp_flag() {
    OUT_OF_BOUNDS.store(false, Ordering::Relaxed)
}

/// Spatial hash over integer lattice coordinates: per-axis prime multipliers
/// (1, 2654435761, 805459861), XOR-combined, masked to the table size.
#[inline]
pub fn hash_index(coords: [u32; 3], log2_table_size: u32) -> u32 {
    let h = coords[0]
        ^ coords[1].wrapping_mul(2_654_435_761)
        ^ coords[2].wrapping_mul(805_459_861);
    h & ((1u32 << log2_table_size) - 1)
}

/// Row index for a lattice corner at `level`: dense injective when the corner
/// lattice fits the table, hashed otherwise.
#[inline]
fn corner_row(cfg: &HashGridConfig, layout: &GridLayout, level: usize, coords: [u32; 3]) -> u32 {
    let corners = cfg.resolution(level) as usize + 1;
    if corners.pow(3) <= layout.level_rows[level] {
        coords[0] + corners as u32 * (coords[1] + corners as u32 * coords[2])
    } else {
        hash_index(coords, cfg.log2_table_size)
    }
}

/// The 8 corner rows and trilinear weights for a query at one level.
fn corners_at<F: Real>(
    cfg: &HashGridConfig,
    layout: &GridLayout,
    level: usize,
    x: [F; 3],
) -> ([u32; 8], [F; 8]) {
    let res = cfg.resolution(level);
    let mut cell = [0u32; 3];
    let mut frac = [F::zero(); 3];
    for a in 0..3 {
        let pos = x[a] * F::lit(res as f64);
        let c = pos.floor().to_f64().max(0.0).min((res - 1) as f64) as u32;
        cell[a] = c;
        frac[a] = pos - F::lit(c as f64);
    }
    let mut rows = [0u32; 8];
    let mut weights = [F::zero(); 8];
    for k in 0..8usize {
        let dx = (k & 1) as u32;
        let dy = ((k >> 1) & 1) as u32;
        let dz = ((k >> 2) & 1) as u32;
        let coords = [cell[0] + dx, cell[1] + dy, cell[2] + dz];
        rows[k] = corner_row(cfg, layout, level, coords);
        let wx = if dx == 1 { frac[0] } else { F::one() - frac[0] };
        let wy = if dy == 1 { frac[1] } else { F::one() - frac[1] };
        let wz = if dz == 1 { frac[2] } else { F::one() - frac[2] };
        weights[k] = wx * wy * wz;
    }
    (rows, weights)
}

fn clamp_unit<F: Real>(x: [F; 3]) -> [F; 3] {
    let mut out = x;
    let mut clamped = false;
    for v in out.iter_mut() {
        if *v < F::zero() {
            *v = F::zero();
            clamped = true;
        } else if *v > F::one() {
            *v = F::one();
            clamped = true;
        }
    }
    if clamped && cfg!(debug_assertions) {
        OUT_OF_BOUNDS.store(true, Ordering::Relaxed);
    }
    out
}

/// Interpolated grid features for `x` in the unit cube (plain evaluation).
/// `table_base` is the offset of the grid block inside `params`.
pub fn encode_position<F: Real>(
    cfg: &HashGridConfig,
    layout: &GridLayout,
    params: &[F],
    table_base: usize,
    x: [F; 3],
) -> Vec<F> {
    let x = clamp_unit(x);
    let feat = cfg.features;
    let mut out = vec![F::zero(); cfg.output_len()];
    for l in 0..cfg.levels {
        let (rows, weights) = corners_at(cfg, layout, l, x);
        let base = table_base + layout.level_offsets[l];
        let dst = &mut out[l * feat..(l + 1) * feat];
        for k in 0..8 {
            let row = base + rows[k] as usize * feat;
            for c in 0..feat {
                dst[c] = dst[c] + weights[k] * params[row + c];
            }
        }
    }
    out
}

/// Tape version of [`encode_position`]: one gather node per level, so one
/// backward pass touches exactly `8 * levels` table rows.
pub fn encode_position_tape<F: Real>(
    tape: &mut Tape<F>,
    cfg: &HashGridConfig,
    layout: &GridLayout,
    params: &[F],
    table_base: usize,
    x: [F; 3],
) -> NodeId {
    let x = clamp_unit(x);
    let mut parts = Vec::with_capacity(cfg.levels);
    for l in 0..cfg.levels {
        let (rows, weights) = corners_at(cfg, layout, l, x);
        let base = table_base + layout.level_offsets[l];
        parts.push(tape.gather_lerp(params, base, cfg.features, rows, weights));
    }
    tape.concat(&parts)
}

/// Frequency encoding of a unit direction: `d` followed by
/// `[sin(2^k pi d), cos(2^k pi d)]` for `k = 0..K-1`, componentwise.
pub fn encode_direction<F: Real>(
    d: [F; 3],
    cfg: &DirectionEncodingConfig,
) -> Result<Vec<F>, EncodingError> {
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().to_f64();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(EncodingError::NotUnitLength(norm));
    }
    let mut out = Vec::with_capacity(cfg.output_len());
    out.extend_from_slice(&d);
    for k in 0..cfg.frequencies {
        let scale = F::lit((1u64 << k) as f64 * std::f64::consts::PI);
        for a in 0..3 {
            out.push((d[a] * scale).sin());
        }
        for a in 0..3 {
            out.push((d[a] * scale).cos());
        }
    }
    Ok(out)
}
