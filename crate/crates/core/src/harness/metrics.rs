use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radiance::Image;

pub const PSNR_CAP_DB: f64 = 99.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(u32, u32, u32, u32),
    #[error("images must be at least {SSIM_WINDOW} pixels on each side")]
    TooSmall,
}

fn check_sizes(a: &Image, b: &Image) -> Result<(), MetricError> {
    if a.same_size(b) {
        Ok(())
    } else {
        Err(MetricError::SizeMismatch(a.width, a.height, b.width, b.height))
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, MetricError> {
    check_sizes(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum();
    Ok(sum / a.data.len().max(1) as f64)
}

/// Peak signal-to-noise ratio in dB over all channels, capped at 99 dB.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    if m < 1e-12 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Valid-region separable filtering of a `w x h` plane.
fn filter(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over valid 11x11 Gaussian windows and
/// channels, for images with unit dynamic range.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricError> {
    check_sizes(a, b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall);
    }
    let k = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let pa: Vec<f64> = (0..w * h).map(|i| a.data[3 * i + ch] as f64).collect();
        let pb: Vec<f64> = (0..w * h).map(|i| b.data[3 * i + ch] as f64).collect();
        let aa: Vec<f64> = pa.iter().map(|x| x * x).collect();
        let bb: Vec<f64> = pb.iter().map(|x| x * x).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let (ma, mb) = (filter(&pa, w, h, &k), filter(&pb, w, h, &k));
        let (saa, sbb, sab) = (filter(&aa, w, h, &k), filter(&bb, w, h, &k), filter(&ab, w, h, &k));
        for i in 0..ma.len() {
            let (mu_a, mu_b) = (ma[i], mb[i]);
            let var_a = saa[i] - mu_a * mu_a;
            let var_b = sbb[i] - mu_b * mu_b;
            let cov = sab[i] - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub per_image: Vec<ImageMetrics>,
}

impl MetricReport {
    /// Averages per-image metrics over `(view, prediction, reference)` triples.
    pub fn evaluate<'a>(pairs: impl IntoIterator<Item = (usize, &'a Image, &'a Image)>) -> Result<Self, MetricError> {
        let mut per_image = Vec::new();
        for (view, pred, reference) in pairs {
            per_image.push(ImageMetrics {
                view,
                psnr: psnr(pred, reference, 1.0)?,
                ssim: ssim(pred, reference)?,
            });
        }
        let n = per_image.len().max(1) as f64;
        Ok(Self {
            psnr: per_image.iter().map(|m| m.psnr).sum::<f64>() / n,
            ssim: per_image.iter().map(|m| m.ssim).sum::<f64>() / n,
            per_image,
        })
    }
}
