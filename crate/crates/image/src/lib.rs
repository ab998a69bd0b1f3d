//! Image handling for render evaluation: a float image container with PNG
//! and PFM I/O, full-reference quality metrics, and ensemble uncertainty
//! maps.

pub mod buffer;
pub mod ensemble;
pub mod pfm;
pub mod quality;

pub use buffer::{ImageBuffer, ImageError};
pub use ensemble::{
    density_augmented_uncertainty, ensemble_mean, ensemble_std, residual_magnitude, uq_report,
    EnsembleStack, UncertaintyMaps, DENSITY_EPSILON,
};
pub use pfm::{read_pfm, write_pfm};
pub use quality::{aggregate, psnr, ssim, ImagePairQuality, QualityReport, SSIM_WINDOW};

use std::io::Write;
use std::path::Path;

/// Writes bytes atomically: the content lands in a sibling temp file that
/// is renamed over the destination once fully written.
pub(crate) fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<(), ImageError> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| ImageError::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        Ok(())
    };
    write().map_err(|e| ImageError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| ImageError::io(path, e))
}
