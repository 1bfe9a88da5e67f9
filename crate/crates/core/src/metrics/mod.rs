//! Grayscale image-similarity metrics on `[0, 1]` images, with optional
//! object masks so background pixels do not bias the score.
//!
//! SSIM uses a 7×7 uniform window (the default images are only 24×24) with
//! the usual stabilizers `C1 = 0.01²` and `C2 = 0.03²`. Windows are scored
//! only where they fit entirely inside the image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const SSIM_WINDOW: usize = 7;
pub const PSNR_CAP_DB: f64 = 100.0;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub masked_psnr: f64,
    pub masked_ssim: f64,
    pub n_mask_pixels: usize,
}

impl MetricReport {
    /// All four scores of `sample` against `truth`, masked by `mask`.
    pub fn compute(sample: &Matrix, truth: &Matrix, mask: &Matrix) -> Result<Self> {
        Ok(Self {
            psnr: psnr(sample, truth, None)?,
            ssim: ssim(sample, truth, None)?,
            masked_psnr: psnr(sample, truth, Some(mask))?,
            masked_ssim: ssim(sample, truth, Some(mask))?,
            n_mask_pixels: mask.data().iter().filter(|&&m| m > 0.5).count(),
        })
    }
}

fn check_pair(a: &Matrix, b: &Matrix, mask: Option<&Matrix>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Metric(format!("images differ in shape: {:?} vs {:?}", a.shape(), b.shape())));
    }
    if let Some(m) = mask {
        if m.shape() != a.shape() {
            return Err(Error::Metric(format!("mask shape {:?} vs image {:?}", m.shape(), a.shape())));
        }
    }
    Ok(())
}

/// Peak signal-to-noise ratio for unit peak, capped at 100 dB.
pub fn psnr(a: &Matrix, b: &Matrix, mask: Option<&Matrix>) -> Result<f64> {
    check_pair(a, b, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (k, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        if mask.map_or(true, |m| m.data()[k] > 0.5) {
            sum += (x as f64 - y as f64).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Metric("mask selects no pixels".into()));
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// SSIM of one window with top-left corner `(r, c)`.
fn window_ssim(a: &Matrix, b: &Matrix, r: usize, c: usize) -> f64 {
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in r..r + SSIM_WINDOW {
        for j in c..c + SSIM_WINDOW {
            let (x, y) = (a.get(i, j) as f64, b.get(i, j) as f64);
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let va = (saa / n - ma * ma).max(0.0);
    let vb = (sbb / n - mb * mb).max(0.0);
    let cov = sab / n - ma * mb;
    ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
}

/// Mean local SSIM. With a mask, both images are first multiplied by it
/// and only windows centered on a masked pixel are averaged, so pixels
/// outside the mask never affect the score.
pub fn ssim(a: &Matrix, b: &Matrix, mask: Option<&Matrix>) -> Result<f64> {
    check_pair(a, b, mask)?;
    let (rows, cols) = a.shape();
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::Metric(format!("image {rows}x{cols} smaller than the SSIM window")));
    }
    let keep = |m: &Matrix| m.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let (a, b) = match mask {
        Some(m) => (a.hadamard(&keep(m))?, b.hadamard(&keep(m))?),
        None => (a.clone(), b.clone()),
    };
    let half = SSIM_WINDOW / 2;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=rows - SSIM_WINDOW {
        for c in 0..=cols - SSIM_WINDOW {
            if mask.map_or(true, |m| m.get(r + half, c + half) > 0.5) {
                total += window_ssim(&a, &b, r, c);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Metric("no SSIM window is centered inside the mask".into()));
    }
    Ok(total / count as f64)
}

/// Mean masked SSIM of several samples against one reference render.
pub fn view_consistency(samples: &[Matrix], reference: &Matrix, mask: &Matrix) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Metric("view consistency needs at least one sample".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += ssim(s, reference, Some(mask))?;
    }
    Ok(total / samples.len() as f64)
}
