//! Image metrics (PSNR, SSIM) and masked depth metrics (Abs.Rel, delta).
//!
//! Depth metrics are computed on raw depths; there is no scale or shift
//! alignment step.

use crate::error::{Error, Result};
use crate::tensor::{BinaryMask, RgbImage};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const DELTA_THRESHOLD: f64 = 1.25;

fn same_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Shape(format!(
            "image dims {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio with peak 1. Identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_dims(a, b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / a.data().len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// Separable Gaussian filter over the valid region of one channel plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut horiz = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            horiz[r * ow + c] = (0..k).map(|j| taps[j] * plane[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| taps[i] * horiz[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over every fully contained 11x11 Gaussian
/// window, averaged over the three channels.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Precondition(format!(
            "image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.data().iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
        let y: Vec<f64> = b.data().iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &taps));
        let n = mx.len();
        let sum: f64 = (0..n)
            .map(|i| {
                let (ux, uy) = (mx[i], my[i]);
                let vx = sxx[i] - ux * ux;
                let vy = syy[i] - uy * uy;
                let cov = sxy[i] - ux * uy;
                ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
            })
            .sum();
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

/// Predicted and ground-truth depths with the pixels to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthPair {
    predicted: Vec<f64>,
    groundtruth: Vec<f64>,
    mask: BinaryMask,
}

impl DepthPair {
    pub fn new(predicted: Vec<f64>, groundtruth: Vec<f64>, mask: BinaryMask) -> Result<Self> {
        let n = mask.height() * mask.width();
        if predicted.len() != n || groundtruth.len() != n {
            return Err(Error::Shape(format!(
                "{} predicted and {} ground-truth depths for {n} pixels",
                predicted.len(),
                groundtruth.len()
            )));
        }
        for i in (0..n).filter(|&i| mask.get(i)) {
            if !(predicted[i] > 0.0 && groundtruth[i] > 0.0)
                || !predicted[i].is_finite()
                || !groundtruth[i].is_finite()
            {
                return Err(Error::Precondition(format!(
                    "non-positive depth at masked pixel {i}"
                )));
            }
        }
        Ok(Self {
            predicted,
            groundtruth,
            mask,
        })
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn swapped(&self) -> Self {
        Self {
            predicted: self.groundtruth.clone(),
            groundtruth: self.predicted.clone(),
            mask: self.mask.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    /// Fraction with `max(p/g, g/p) <= 1.25`, boundary included.
    pub delta_1_25: f64,
    pub pixels: usize,
}

pub fn depth_metrics(pair: &DepthPair) -> Result<DepthMetrics> {
    let mut abs_rel = 0.0;
    let mut hits = 0usize;
    let mut n = 0usize;
    for i in (0..pair.predicted.len()).filter(|&i| pair.mask.get(i)) {
        let (p, g) = (pair.predicted[i], pair.groundtruth[i]);
        abs_rel += (p - g).abs() / g;
        // same as max(p/g, g/p) <= 1.25 but exact for p = 1.25 * g
        if p <= DELTA_THRESHOLD * g && g <= DELTA_THRESHOLD * p {
            hits += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Precondition("evaluation mask is empty".into()));
    }
    Ok(DepthMetrics {
        abs_rel: abs_rel / n as f64,
        delta_1_25: hits as f64 / n as f64,
        pixels: n,
    })
}

/// Splits `eval` into pixels covered by the projection (recon) and the
/// rest (inpaint).
pub fn split_masks(projection: &BinaryMask, eval: &BinaryMask) -> Result<(BinaryMask, BinaryMask)> {
    projection.same_dims(eval)?;
    let (h, w) = (eval.height(), eval.width());
    let recon = eval.and(projection)?;
    let inpaint = BinaryMask::new(
        h,
        w,
        eval.bits()
            .iter()
            .zip(projection.bits())
            .map(|(&e, &p)| e && !p)
            .collect(),
    )?;
    Ok((recon, inpaint))
}
