//! Per-pixel statistics over a stack of renders of the same view:
//! ensemble mean, predictive standard deviation, residuals against a
//! reference, density-aware augmentation, and the std/residual correlation.

use crate::buffer::{ImageBuffer, ImageError};

/// Floor applied to per-pixel sample density before inversion.
pub const DENSITY_EPSILON: f64 = 1e-6;

/// A non-empty stack of same-shaped images.
#[derive(Debug, Clone)]
pub struct EnsembleStack {
    members: Vec<ImageBuffer>,
}

impl EnsembleStack {
    /// Validates that at least one member exists and that shapes agree.
    pub fn new(members: Vec<ImageBuffer>) -> Result<Self, ImageError> {
        let first = members.first().ok_or(ImageError::EmptyStack)?;
        for member in &members[1..] {
            first.check_same_shape(member)?;
        }
        Ok(Self { members })
    }

    /// Member images in insertion order.
    pub fn members(&self) -> &[ImageBuffer] {
        &self.members
    }

    /// Number of members.
    pub fn len(&self) -> usize {
        self.members.len()
    }

    /// Always false by construction.
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn shape(&self) -> (usize, usize, usize) {
        self.members[0].shape()
    }
}

/// Per-pixel, per-channel mean across the stack.
pub fn ensemble_mean(stack: &EnsembleStack) -> ImageBuffer {
    let (width, height, channels) = stack.shape();
    let n = width * height * channels;
    let mut data = vec![0.0; n];
    for member in stack.members() {
        for (acc, v) in data.iter_mut().zip(member.data()) {
            *acc += v;
        }
    }
    let m = stack.len() as f64;
    for v in &mut data {
        *v /= m;
    }
    ImageBuffer::from_raw(width, height, channels, data).expect("mean of valid members is valid")
}

/// Per-pixel predictive standard deviation: at each pixel the channel
/// deviations of every member from the ensemble mean are pooled, squared,
/// averaged over channels times members, and square-rooted. Returns a
/// single-channel map.
pub fn ensemble_std(stack: &EnsembleStack) -> Result<ImageBuffer, ImageError> {
    if stack.len() < 2 {
        return Err(ImageError::StackTooSmall { got: stack.len() });
    }
    let (width, height, channels) = stack.shape();
    let mean = ensemble_mean(stack);
    let mut sums = vec![0.0; width * height];
    for member in stack.members() {
        for p in 0..width * height {
            for c in 0..channels {
                let d = member.data()[p * channels + c] - mean.data()[p * channels + c];
                sums[p] += d * d;
            }
        }
    }
    let norm = (channels * stack.len()) as f64;
    let data = sums.into_iter().map(|s| (s / norm).sqrt()).collect();
    ImageBuffer::from_raw(width, height, 1, data)
}

/// Per-pixel Euclidean norm of the channel-wise difference between an
/// image and a reference. Returns a single-channel map.
pub fn residual_magnitude(
    image: &ImageBuffer,
    reference: &ImageBuffer,
) -> Result<ImageBuffer, ImageError> {
    image.check_same_shape(reference)?;
    let (width, height, channels) = image.shape();
    let mut data = Vec::with_capacity(width * height);
    for p in 0..width * height {
        let mut ss = 0.0;
        for c in 0..channels {
            let d = image.data()[p * channels + c] - reference.data()[p * channels + c];
            ss += d * d;
        }
        data.push(ss.sqrt());
    }
    ImageBuffer::from_raw(width, height, 1, data)
}

/// Combines a predictive std map with a sample-density map: low density
/// inflates the uncertainty as sqrt(std^2 + 1/max(density, epsilon)^2).
/// The result is never below the input std.
pub fn density_augmented_uncertainty(
    std_map: &ImageBuffer,
    density: &ImageBuffer,
    epsilon: f64,
) -> Result<ImageBuffer, ImageError> {
    std_map.check_same_shape(density)?;
    if !(epsilon > 0.0) {
        return Err(ImageError::InvalidData(format!(
            "density epsilon must be positive, got {epsilon}"
        )));
    }
    if let Some(bad) = density.data().iter().find(|d| **d < 0.0) {
        return Err(ImageError::InvalidData(format!(
            "density values must be non-negative, got {bad}"
        )));
    }
    let (width, height, channels) = std_map.shape();
    let data = std_map
        .data()
        .iter()
        .zip(density.data())
        .map(|(s, d)| {
            let inv = 1.0 / d.max(epsilon);
            (s * s + inv * inv).sqrt()
        })
        .collect();
    ImageBuffer::from_raw(width, height, channels, data)
}

/// Pearson correlation between two equally long slices. None when either
/// side has no variance.
fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.iter().all(|v| *v == a[0]) || b.iter().all(|v| *v == b[0]) {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

/// Uncertainty products for one evaluated view.
#[derive(Debug, Clone)]
pub struct UncertaintyMaps {
    /// Ensemble mean image.
    pub mean: ImageBuffer,
    /// Per-pixel predictive standard deviation (single channel).
    pub std: ImageBuffer,
    /// Per-pixel residual of the mean against the reference (single channel).
    pub residual: ImageBuffer,
    /// Density-augmented uncertainty, when a density map was supplied.
    pub density_weighted: Option<ImageBuffer>,
    /// Pearson correlation between std and residual maps.
    pub correlation: Option<f64>,
    /// True when the correlation was undefined because one map is constant.
    pub correlation_degenerate: bool,
}

/// Full uncertainty evaluation for one view: mean, std, residual against
/// the reference, optional density augmentation, and the std/residual
/// correlation.
pub fn uq_report(
    stack: &EnsembleStack,
    reference: &ImageBuffer,
    density: Option<&ImageBuffer>,
    epsilon: f64,
) -> Result<UncertaintyMaps, ImageError> {
    stack.members()[0].check_same_shape(reference)?;
    let mean = ensemble_mean(stack);
    let std = ensemble_std(stack)?;
    let residual = residual_magnitude(&mean, reference)?;
    let density_weighted = density
        .map(|d| density_augmented_uncertainty(&std, d, epsilon))
        .transpose()?;
    let correlation = pearson(std.data(), residual.data());
    let correlation_degenerate = correlation.is_none();
    Ok(UncertaintyMaps {
        mean,
        std,
        residual,
        density_weighted,
        correlation,
        correlation_degenerate,
    })
}
