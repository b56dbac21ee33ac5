//! Raw-domain image simulation and finishing: exposure scaling with
//! shot + read sensor noise, the fixed sRGB display pipeline, and the LRAW
//! on-disk format for linear multi-channel rasters.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum IspError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic; not an LRAW file")]
    BadMagic,
    #[error("unsupported LRAW version {0}")]
    BadVersion(u32),
    #[error("truncated LRAW payload")]
    Truncated,
    #[error("image dimensions overflow")]
    DimensionOverflow,
}

/// Linear high-dynamic-range raster, normalized so 1.0 = sensor saturation.
/// Data is row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    pub width: u32,
    pub height: u32,
    /// 1 (thermal/grayscale) or 3 (visible).
    pub channels: u32,
    pub data: Vec<f32>,
}

impl LinearImage {
    pub fn new(width: u32, height: u32, channels: u32) -> Self {
        let len = width as usize * height as usize * channels as usize;
        LinearImage { width, height, channels, data: vec![0.0; len] }
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [f32] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &mut self.data[i..i + c]
    }

    /// Fraction of values below `threshold`.
    pub fn fraction_below(&self, threshold: f32) -> f64 {
        let n = self.data.iter().filter(|&&v| v < threshold).count();
        n as f64 / self.data.len() as f64
    }
}

/// Heteroscedastic Gaussian sensor noise: variance `k_shot * signal` plus a
/// constant read floor `sigma_read^2`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct NoiseModel {
    pub k_shot: f64,
    pub sigma_read: f64,
}

impl NoiseModel {
    pub fn none() -> NoiseModel {
        NoiseModel { k_shot: 0.0, sigma_read: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.k_shot == 0.0 && self.sigma_read == 0.0
    }
}

/// Simulate a capture at exposure `gain`: scale the clean radiance, add
/// per-pixel Gaussian noise with variance `k_shot * gain * clean + sigma_read^2`,
/// and clamp to the sensor range.
pub fn simulate_short_exposure<R: Rng>(
    clean: &LinearImage,
    gain: f64,
    noise: &NoiseModel,
    rng: &mut R,
) -> LinearImage {
    assert!(gain > 0.0);
    let mut out = clean.clone();
    for v in out.data.iter_mut() {
        let signal = gain * *v as f64;
        let var = noise.k_shot * signal + noise.sigma_read * noise.sigma_read;
        let eta = if var > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            z * var.sqrt()
        } else {
            0.0
        };
        *v = (signal + eta).clamp(0.0, 1.0) as f32;
    }
    out
}

/// Standard sRGB transfer curve on a clamped linear value.
pub fn srgb_transfer(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Fixed finishing pipeline: per-channel white balance and display gain,
/// clamp, sRGB transfer, 8-bit quantization. Monotone per channel.
pub fn postprocess(raw: &LinearImage, wb: &[f64], display_gain: f64) -> Vec<u8> {
    assert_eq!(wb.len(), raw.channels as usize, "one white-balance gain per channel");
    let c = raw.channels as usize;
    raw.data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let lin = (display_gain * wb[i % c] * v as f64).clamp(0.0, 1.0);
            (255.0 * srgb_transfer(lin)).round() as u8
        })
        .collect()
}

// ---- LRAW format --------------------------------------------------------
//
// magic "LRAW" | u32 version=1 | u32 width | u32 height | u32 channels |
// f32 little-endian data, row-major, channel-interleaved.

const LRAW_MAGIC: &[u8; 4] = b"LRAW";
const LRAW_VERSION: u32 = 1;

pub fn write_lraw(image: &LinearImage, path: &Path) -> Result<(), IspError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(LRAW_MAGIC)?;
    w.write_all(&LRAW_VERSION.to_le_bytes())?;
    w.write_all(&image.width.to_le_bytes())?;
    w.write_all(&image.height.to_le_bytes())?;
    w.write_all(&image.channels.to_le_bytes())?;
    for v in &image.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_lraw(path: &Path) -> Result<LinearImage, IspError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| IspError::BadMagic)?;
    if &magic != LRAW_MAGIC {
        return Err(IspError::BadMagic);
    }
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    let version = u32::from_le_bytes(b);
    if version != LRAW_VERSION {
        return Err(IspError::BadVersion(version));
    }
    r.read_exact(&mut b)?;
    let width = u32::from_le_bytes(b);
    r.read_exact(&mut b)?;
    let height = u32::from_le_bytes(b);
    r.read_exact(&mut b)?;
    let channels = u32::from_le_bytes(b);
    let len = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(channels as usize))
        .ok_or(IspError::DimensionOverflow)?;
    if len > (1 << 30) {
        return Err(IspError::DimensionOverflow);
    }
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes).map_err(|_| IspError::Truncated)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(LinearImage { width, height, channels, data })
}

// ---- 8-bit previews ------------------------------------------------------

/// Binary PPM (P6) for 3-channel 8-bit data.
pub fn write_ppm(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<(), IspError> {
    assert_eq!(rgb.len(), width as usize * height as usize * 3);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", width, height)?;
    w.write_all(rgb)?;
    Ok(())
}

/// Binary PGM (P5) for single-channel 8-bit data.
pub fn write_pgm(path: &Path, width: u32, height: u32, gray: &[u8]) -> Result<(), IspError> {
    assert_eq!(gray.len(), width as usize * height as usize);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", width, height)?;
    w.write_all(gray)?;
    Ok(())
}

/// Postprocess and write the right preview format for the channel count.
pub fn write_preview(image: &LinearImage, wb: &[f64], gain: f64, path: &Path) -> Result<(), IspError> {
    let bytes = postprocess(image, wb, gain);
    if image.channels == 3 {
        write_ppm(path, image.width, image.height, &bytes)
    } else {
        write_pgm(path, image.width, image.height, &bytes)
    }
}
