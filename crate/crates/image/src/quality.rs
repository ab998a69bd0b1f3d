//! PSNR and SSIM over unit-range images, plus the per-dataset aggregation
//! used to report mean and spread across an evaluation set.

use crate::buffer::{ImageBuffer, ImageError};
use serde::{Deserialize, Serialize};

/// SSIM window size (11x11 Gaussian taps).
pub const SSIM_WINDOW: usize = 11;
const SSIM_RADIUS: usize = SSIM_WINDOW / 2;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const DATA_RANGE: f64 = 1.0;

/// Peak signal-to-noise ratio in dB with unit dynamic range. Identical
/// images produce the +infinity sentinel.
pub fn psnr(image: &ImageBuffer, reference: &ImageBuffer) -> Result<f64, ImageError> {
    image.check_same_shape(reference)?;
    let n = image.data().len() as f64;
    let mse: f64 = image
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (DATA_RANGE * DATA_RANGE / mse).log10())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut kernel = [0.0; SSIM_WINDOW];
    let mut sum = 0.0;
    for (i, k) in kernel.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *k = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *k;
    }
    for k in &mut kernel {
        *k /= sum;
    }
    kernel
}

/// Separable Gaussian over fully interior windows only: the result is
/// (height-10) x (width-10) and involves no padding.
fn valid_filter(plane: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let out_w = width - 2 * SSIM_RADIUS;
    let out_h = height - 2 * SSIM_RADIUS;
    let mut horizontal = vec![0.0; height * out_w];
    for y in 0..height {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * plane[y * width + x + i];
            }
            horizontal[y * out_w + x] = acc;
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for y in 0..out_h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * horizontal[(y + i) * out_w + x];
            }
            out[y * out_w + x] = acc;
        }
    }
    out
}

/// Mean structural similarity: 11x11 Gaussian weighting (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, unit dynamic range, population-weighted local
/// moments, averaged over fully valid windows and then over channels.
pub fn ssim(image: &ImageBuffer, reference: &ImageBuffer) -> Result<f64, ImageError> {
    image.check_same_shape(reference)?;
    let (width, height, channels) = image.shape();
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(ImageError::ImageTooSmall {
            min: SSIM_WINDOW,
            width,
            height,
        });
    }
    let kernel = gaussian_kernel();
    let c1 = (K1 * DATA_RANGE) * (K1 * DATA_RANGE);
    let c2 = (K2 * DATA_RANGE) * (K2 * DATA_RANGE);
    let mut channel_sum = 0.0;
    for c in 0..channels {
        let x = image.channel_plane(c);
        let y = reference.channel_plane(c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let ux = valid_filter(&x, width, height, &kernel);
        let uy = valid_filter(&y, width, height, &kernel);
        let uxx = valid_filter(&xx, width, height, &kernel);
        let uyy = valid_filter(&yy, width, height, &kernel);
        let uxy = valid_filter(&xy, width, height, &kernel);
        let mut map_sum = 0.0;
        for i in 0..ux.len() {
            let vx = uxx[i] - ux[i] * ux[i];
            let vy = uyy[i] - uy[i] * uy[i];
            let vxy = uxy[i] - ux[i] * uy[i];
            map_sum += ((2.0 * ux[i] * uy[i] + c1) * (2.0 * vxy + c2))
                / ((ux[i] * ux[i] + uy[i] * uy[i] + c1) * (vx + vy + c2));
        }
        channel_sum += map_sum / ux.len() as f64;
    }
    Ok(channel_sum / channels as f64)
}

/// Quality of one evaluated image pair. An infinite PSNR (identical
/// images) is carried as a flag and serialized as null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePairQuality {
    /// Identifier, typically the file name.
    pub name: String,
    /// PSNR in dB; absent when the pair was identical.
    pub psnr_db: Option<f64>,
    /// True when the PSNR was the +infinity sentinel.
    pub psnr_infinite: bool,
    /// SSIM value.
    pub ssim: f64,
}

impl ImagePairQuality {
    /// Packages raw metric values, folding an infinite PSNR into the flag.
    pub fn new(name: impl Into<String>, psnr_db: f64, ssim: f64) -> Self {
        let infinite = psnr_db.is_infinite();
        Self {
            name: name.into(),
            psnr_db: (!infinite).then_some(psnr_db),
            psnr_infinite: infinite,
            ssim,
        }
    }
}

/// Dataset-level aggregation of per-image quality values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// Mean PSNR over finite entries; absent when every pair was identical.
    pub psnr_mean_db: Option<f64>,
    /// Sample standard deviation of finite PSNR entries (0 for n <= 1).
    pub psnr_std_db: f64,
    /// Number of finite PSNR entries that contributed.
    pub psnr_samples: usize,
    /// Number of +infinity PSNR entries excluded from the statistics.
    pub excluded_infinite_psnr: usize,
    /// Mean SSIM.
    pub ssim_mean: f64,
    /// Sample standard deviation of SSIM (0 for n <= 1).
    pub ssim_std: f64,
    /// Every evaluated pair, in input order.
    pub per_image: Vec<ImagePairQuality>,
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Aggregates per-image metrics into means and sample standard deviations.
/// Infinite PSNR entries are excluded from the PSNR statistics and counted.
pub fn aggregate(per_image: Vec<ImagePairQuality>) -> Result<QualityReport, ImageError> {
    if per_image.is_empty() {
        return Err(ImageError::EmptyInput);
    }
    let finite_psnr: Vec<f64> = per_image.iter().filter_map(|p| p.psnr_db).collect();
    let excluded = per_image.len() - finite_psnr.len();
    let (psnr_mean_db, psnr_std_db) = if finite_psnr.is_empty() {
        (None, 0.0)
    } else {
        let (m, s) = mean_and_sample_std(&finite_psnr);
        (Some(m), s)
    };
    let ssims: Vec<f64> = per_image.iter().map(|p| p.ssim).collect();
    let (ssim_mean, ssim_std) = mean_and_sample_std(&ssims);
    Ok(QualityReport {
        psnr_mean_db,
        psnr_std_db,
        psnr_samples: finite_psnr.len(),
        excluded_infinite_psnr: excluded,
        ssim_mean,
        ssim_std,
        per_image,
    })
}
