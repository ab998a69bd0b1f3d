//! Float image container used by the quality metrics and the ensemble
//! statistics, with PNG ingestion that maps integer samples onto [0, 1].

use std::path::Path;
use thiserror::Error;

/// Errors raised by image handling.
#[derive(Debug, Error)]
pub enum ImageError {
    /// Width, height or channel count unusable.
    #[error("invalid image dimensions {width}x{height}x{channels}")]
    InvalidDimensions {
        /// Requested width.
        width: usize,
        /// Requested height.
        height: usize,
        /// Requested channel count (must be 1 or 3).
        channels: usize,
    },
    /// Raw data length does not match the dimensions.
    #[error("data length {got} does not match {expected}")]
    LengthMismatch {
        /// width*height*channels.
        expected: usize,
        /// Supplied length.
        got: usize,
    },
    /// A sample is NaN or infinite.
    #[error("image contains a non-finite sample")]
    NonFinite,
    /// Two images that must share a shape do not.
    #[error("image shapes differ: {expected:?} vs {got:?}")]
    DimensionMismatch {
        /// (width, height, channels) of the first image.
        expected: (usize, usize, usize),
        /// (width, height, channels) of the second image.
        got: (usize, usize, usize),
    },
    /// The image is smaller than the filter window.
    #[error("image {width}x{height} is smaller than the {min}x{min} window")]
    ImageTooSmall {
        /// Window size.
        min: usize,
        /// Image width.
        width: usize,
        /// Image height.
        height: usize,
    },
    /// An aggregation input was empty.
    #[error("empty input")]
    EmptyInput,
    /// An ensemble stack has no members.
    #[error("ensemble stack is empty")]
    EmptyStack,
    /// An ensemble operation needs more members.
    #[error("ensemble of {got} member(s) is too small, need at least 2")]
    StackTooSmall {
        /// Member count.
        got: usize,
    },
    /// A value violates an operation's domain.
    #[error("{0}")]
    InvalidData(String),
    /// File could not be read or written.
    #[error("{path}: {source}")]
    Io {
        /// File involved.
        path: String,
        /// Cause.
        source: std::io::Error,
    },
    /// File contents could not be decoded.
    #[error("{path}: {message}")]
    Decode {
        /// File involved.
        path: String,
        /// What went wrong.
        message: String,
    },
}

impl ImageError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn decode(path: &Path, message: impl std::fmt::Display) -> Self {
        Self::Decode {
            path: path.display().to_string(),
            message: message.to_string(),
        }
    }
}

/// Row-major float image with 1 (gray) or 3 (RGB) channels. Samples from
/// decoded files lie in [0, 1]; computed maps (deviations, densities) may
/// exceed that range but are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    fn check_dims(width: usize, height: usize, channels: usize) -> Result<(), ImageError> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(ImageError::InvalidDimensions {
                width,
                height,
                channels,
            });
        }
        Ok(())
    }

    /// All-zero image.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self, ImageError> {
        Self::check_dims(width, height, channels)?;
        Ok(Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        })
    }

    /// Constant-valued image.
    pub fn constant(
        width: usize,
        height: usize,
        channels: usize,
        value: f64,
    ) -> Result<Self, ImageError> {
        let mut buffer = Self::zeros(width, height, channels)?;
        if !value.is_finite() {
            return Err(ImageError::NonFinite);
        }
        buffer.data.fill(value);
        Ok(buffer)
    }

    /// Wraps raw row-major samples. Values must be finite but are not
    /// clamped, so computed maps can carry magnitudes above 1.
    pub fn from_raw(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, ImageError> {
        Self::check_dims(width, height, channels)?;
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImageError::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite);
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Width in pixels.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Height in pixels.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Channel count (1 or 3).
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// (width, height, channels).
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    /// Raw row-major samples.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Sample at (x, y) in channel c.
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Overwrites the sample at (x, y) in channel c.
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Copies one channel into a contiguous plane.
    pub fn channel_plane(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Errors unless `other` has the same shape.
    pub fn check_same_shape(&self, other: &Self) -> Result<(), ImageError> {
        if self.shape() != other.shape() {
            return Err(ImageError::DimensionMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    /// Loads a PNG. Gray and gray+alpha files become single-channel, RGB
    /// and RGBA become three-channel; alpha is dropped. Integer samples
    /// map onto [0, 1] by dividing by the type maximum.
    pub fn from_png(path: &Path) -> Result<Self, ImageError> {
        let decoded = image::open(path).map_err(|e| ImageError::decode(path, e))?;
        use image::DynamicImage as D;
        let (width, height) = (decoded.width() as usize, decoded.height() as usize);
        let (channels, data): (usize, Vec<f64>) = match decoded {
            D::ImageLuma8(img) => (1, img.into_raw().iter().map(|v| *v as f64 / 255.0).collect()),
            D::ImageLumaA8(img) => (
                1,
                img.into_raw()
                    .chunks_exact(2)
                    .map(|px| px[0] as f64 / 255.0)
                    .collect(),
            ),
            D::ImageRgb8(img) => (3, img.into_raw().iter().map(|v| *v as f64 / 255.0).collect()),
            D::ImageRgba8(img) => (
                3,
                img.into_raw()
                    .chunks_exact(4)
                    .flat_map(|px| px[..3].iter().map(|v| *v as f64 / 255.0).collect::<Vec<_>>())
                    .collect(),
            ),
            D::ImageLuma16(img) => (
                1,
                img.into_raw().iter().map(|v| *v as f64 / 65535.0).collect(),
            ),
            D::ImageLumaA16(img) => (
                1,
                img.into_raw()
                    .chunks_exact(2)
                    .map(|px| px[0] as f64 / 65535.0)
                    .collect(),
            ),
            D::ImageRgb16(img) => (
                3,
                img.into_raw().iter().map(|v| *v as f64 / 65535.0).collect(),
            ),
            D::ImageRgba16(img) => (
                3,
                img.into_raw()
                    .chunks_exact(4)
                    .flat_map(|px| {
                        px[..3].iter().map(|v| *v as f64 / 65535.0).collect::<Vec<_>>()
                    })
                    .collect(),
            ),
            other => {
                let rgb = other.into_rgb8();
                (3, rgb.into_raw().iter().map(|v| *v as f64 / 255.0).collect())
            }
        };
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite);
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::from_raw(width, height, channels, data)
    }

    /// Writes an 8-bit PNG, clamping samples into [0, 1] first.
    pub fn to_png(&self, path: &Path) -> Result<(), ImageError> {
        let quantized: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        let mut bytes = Vec::new();
        image::write_buffer_with_format(
            &mut std::io::Cursor::new(&mut bytes),
            &quantized,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| ImageError::decode(path, e))?;
        crate::write_bytes_atomic(path, &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_construction_validates_shape_and_finiteness() {
        assert!(matches!(
            ImageBuffer::from_raw(2, 2, 2, vec![0.0; 8]),
            Err(ImageError::InvalidDimensions { .. })
        ));
        assert!(matches!(
            ImageBuffer::from_raw(2, 2, 1, vec![0.0; 3]),
            Err(ImageError::LengthMismatch { expected: 4, got: 3 })
        ));
        assert!(matches!(
            ImageBuffer::from_raw(2, 2, 1, vec![0.0, 1.0, f64::NAN, 0.5]),
            Err(ImageError::NonFinite)
        ));
        // Computed maps may exceed [0, 1].
        let big = ImageBuffer::from_raw(2, 2, 1, vec![0.0, 1.5, 2.0, 1e6]).unwrap();
        assert_eq!(big.get(1, 1, 0), 1e6);
    }

    #[test]
    fn indexing_is_row_major_channel_interleaved() {
        let mut img = ImageBuffer::zeros(3, 2, 3).unwrap();
        img.set(2, 1, 1, 0.7);
        assert_eq!(img.data()[(1 * 3 + 2) * 3 + 1], 0.7);
        assert_eq!(img.get(2, 1, 1), 0.7);
        let plane = img.channel_plane(1);
        assert_eq!(plane.len(), 6);
        assert_eq!(plane[5], 0.7);
    }

    #[test]
    fn png_round_trip_quantizes_to_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let data: Vec<f64> = (0..48).map(|i| (i as f64) / 47.0).collect();
        let img = ImageBuffer::from_raw(4, 4, 3, data).unwrap();
        img.to_png(&path).unwrap();
        let back = ImageBuffer::from_png(&path).unwrap();
        assert_eq!(back.shape(), (4, 4, 3));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12, "{a} vs {b}");
            assert!((b * 255.0 - (b * 255.0).round()).abs() < 1e-9);
        }
    }

    #[test]
    fn gray_png_round_trip_keeps_one_channel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let img = ImageBuffer::from_raw(5, 3, 1, (0..15).map(|i| i as f64 / 14.0).collect())
            .unwrap();
        img.to_png(&path).unwrap();
        let back = ImageBuffer::from_png(&path).unwrap();
        assert_eq!(back.shape(), (5, 3, 1));
    }

    #[test]
    fn rgba_ingestion_drops_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgba.png");
        let mut rgba = image::RgbaImage::new(2, 2);
        for (i, px) in rgba.pixels_mut().enumerate() {
            *px = image::Rgba([10 * i as u8, 20, 30, 100]);
        }
        rgba.save(&path).unwrap();
        let img = ImageBuffer::from_png(&path).unwrap();
        assert_eq!(img.shape(), (2, 2, 3));
        assert!((img.get(1, 0, 0) - 10.0 / 255.0).abs() < 1e-12);
        assert!((img.get(0, 0, 1) - 20.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_png_write_clamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clamped.png");
        let img = ImageBuffer::from_raw(2, 1, 1, vec![-0.5, 1.5]).unwrap();
        img.to_png(&path).unwrap();
        let back = ImageBuffer::from_png(&path).unwrap();
        assert_eq!(back.get(0, 0, 0), 0.0);
        assert_eq!(back.get(1, 0, 0), 1.0);
    }
}
