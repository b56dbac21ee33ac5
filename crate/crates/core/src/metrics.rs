//! Image-quality metrics on postprocessed images: PSNR and single-scale SSIM
//! (11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03, unit dynamic
//! range, averaged over valid window positions).

use crate::isp::LinearImage;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {got} vs {want}")]
    ShapeMismatch { got: usize, want: usize },
    #[error("image {w}x{h} smaller than the {win}x{win} SSIM window")]
    TooSmall { w: usize, h: usize, win: usize },
}

/// Cap reported for identical images (and any value above it).
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio in decibels: `10 log10(peak^2 / MSE)`.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::ShapeMismatch { got: a.len(), want: b.len() });
    }
    assert!(peak > 0.0, "peak must be positive");
    let mse: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

const SSIM_WIN: usize = 11;

fn gaussian_kernel() -> [f64; SSIM_WIN * SSIM_WIN] {
    let sigma = 1.5f64;
    let mut k = [0.0; SSIM_WIN * SSIM_WIN];
    let mut sum = 0.0;
    for y in 0..SSIM_WIN {
        for x in 0..SSIM_WIN {
            let dy = y as f64 - (SSIM_WIN as f64 - 1.0) / 2.0;
            let dx = x as f64 - (SSIM_WIN as f64 - 1.0) / 2.0;
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            k[y * SSIM_WIN + x] = v;
            sum += v;
        }
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Structural similarity between two grayscale images in [0, 1] range.
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::ShapeMismatch { got: a.len(), want: b.len() });
    }
    if a.len() != width * height {
        return Err(MetricsError::ShapeMismatch { got: a.len(), want: width * height });
    }
    if width < SSIM_WIN || height < SSIM_WIN {
        return Err(MetricsError::TooSmall { w: width, h: height, win: SSIM_WIN });
    }
    let ker = gaussian_kernel();
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..=(height - SSIM_WIN) {
        for wx in 0..=(width - SSIM_WIN) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            for ky in 0..SSIM_WIN {
                let row = (wy + ky) * width + wx;
                for kx in 0..SSIM_WIN {
                    let w = ker[ky * SSIM_WIN + kx];
                    mu_a += w * a[row + kx];
                    mu_b += w * b[row + kx];
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for ky in 0..SSIM_WIN {
                let row = (wy + ky) * width + wx;
                for kx in 0..SSIM_WIN {
                    let w = ker[ky * SSIM_WIN + kx];
                    let da = a[row + kx] - mu_a;
                    let db = b[row + kx] - mu_b;
                    var_a += w * da * da;
                    var_b += w * db * db;
                    cov += w * da * db;
                }
            }
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Channel-averaged grayscale view of 8-bit data, scaled to [0, 1].
pub fn gray_from_bytes(bytes: &[u8], channels: usize) -> Vec<f64> {
    bytes
        .chunks_exact(channels)
        .map(|px| px.iter().map(|&v| v as f64 / 255.0).sum::<f64>() / channels as f64)
        .collect()
}

/// Global gain minimizing the MSE between a linear render and linear ground
/// truth, used to exposure-match before postprocessing for evaluation.
pub fn exposure_match_gain(render: &LinearImage, truth: &LinearImage) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&r, &t) in render.data.iter().zip(&truth.data) {
        num += r as f64 * t as f64;
        den += r as f64 * r as f64;
    }
    if den > 0.0 {
        num / den
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_examples() {
        let a = vec![0.5f64; 100];
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 99.0);

        // MSE 0.01 at unit peak is 20 dB: constant offset 0.1.
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        let got = psnr(&a, &b, 1.0).unwrap();
        assert!((got - 20.0).abs() < 1e-9, "{got}");

        assert!(psnr(&a, &a[..50], 1.0).is_err());
    }

    #[test]
    fn psnr_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn psnr_decreases_with_noise_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let clean: Vec<f64> = (0..4096).map(|_| rng.gen_range(0.2..0.8)).collect();
        let mut last = f64::INFINITY;
        for trial in 1..=20 {
            let sd = 0.005 * trial as f64;
            let noisy: Vec<f64> = clean
                .iter()
                .map(|v| v + sd * (rng.gen_range(-1.0f64..1.0) * 3.0f64.sqrt()))
                .collect();
            let p = psnr(&clean, &noisy, 1.0).unwrap();
            assert!(p < last, "psnr should fall as noise grows");
            last = p;
        }
    }

    fn pattern_pair() -> (Vec<f64>, Vec<f64>) {
        let (h, w) = (32usize, 32usize);
        let mut a = vec![0.0; w * h];
        let mut b = vec![0.0; w * h];
        for i in 0..h {
            for j in 0..w {
                let base = 0.5 + 0.4 * (0.3 * i as f64).sin() * (0.2 * j as f64).cos();
                let delta = 0.1 * (0.5 * i as f64 + 0.1).sin() * (0.4 * j as f64 + 0.2).sin();
                a[i * w + j] = base;
                b[i * w + j] = (base + delta).clamp(0.0, 1.0);
            }
        }
        (a, b)
    }

    #[test]
    fn ssim_identical_is_one() {
        let (a, _) = pattern_pair();
        let s = ssim(&a, &a, 32, 32).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_independent_oracle() {
        // Frozen from an independent float64 implementation of the standard
        // valid-window Gaussian SSIM on the same deterministic pattern.
        let (a, b) = pattern_pair();
        let s = ssim(&a, &b, 32, 32).unwrap();
        assert!((s - 0.910182098468).abs() < 1e-9, "{s}");
    }

    #[test]
    fn ssim_of_negative_image_is_low() {
        // High-contrast checkerboard against its negative; the independent
        // oracle reports -0.918879295624.
        let (h, w) = (32usize, 32usize);
        let mut a = vec![0.0; w * h];
        let mut b = vec![0.0; w * h];
        for i in 0..h {
            for j in 0..w {
                let v = 0.05 + 0.9 * (((i / 4) + (j / 4)) % 2) as f64;
                a[i * w + j] = v;
                b[i * w + j] = 1.0 - v;
            }
        }
        let s = ssim(&a, &b, 32, 32).unwrap();
        assert!(s < 0.1, "{s}");
        assert!((s - (-0.918879295624)).abs() < 1e-9, "{s}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let (a, b) = pattern_pair();
        let s1 = ssim(&a, &b, 32, 32).unwrap();
        let s2 = ssim(&b, &a, 32, 32).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn ssim_strictly_decreases_with_noise() {
        let (a, _) = pattern_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noisy = |sd: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
            a.iter().map(|v| v + sd * rng.gen_range(-1.0f64..1.0) * 3.0f64.sqrt()).collect()
        };
        let n05 = noisy(0.05, &mut rng);
        let n10 = noisy(0.10, &mut rng);
        let s05 = ssim(&a, &n05, 32, 32).unwrap();
        let s10 = ssim(&a, &n10, 32, 32).unwrap();
        assert!(s10 < s05, "{s10} vs {s05}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = vec![0.5; 10 * 10];
        assert!(matches!(ssim(&a, &a, 10, 10), Err(MetricsError::TooSmall { .. })));
    }

    #[test]
    fn exposure_match_recovers_scale() {
        let mut truth = LinearImage::new(8, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for v in truth.data.iter_mut() {
            *v = rng.gen_range(0.0..0.5);
        }
        let mut render = truth.clone();
        for v in render.data.iter_mut() {
            *v /= 64.0;
        }
        let g = exposure_match_gain(&render, &truth);
        assert!((g - 64.0).abs() < 1e-3, "{g}");
    }
}
