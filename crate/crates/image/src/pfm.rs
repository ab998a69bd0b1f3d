//! Single-channel PFM maps ("Pf"): 32-bit floats, bottom-to-top row order,
//! byte order given by the sign of the scale field.

use crate::buffer::{ImageBuffer, ImageError};
use std::path::Path;

/// Reads a grayscale PFM file into a single-channel buffer.
pub fn read_pfm(path: &Path) -> Result<ImageBuffer, ImageError> {
    let bytes = std::fs::read(path).map_err(|e| ImageError::io(path, e))?;
    let mut offset = 0usize;
    let mut token = |what: &str| -> Result<String, ImageError> {
        while offset < bytes.len() && bytes[offset].is_ascii_whitespace() {
            offset += 1;
        }
        let start = offset;
        while offset < bytes.len() && !bytes[offset].is_ascii_whitespace() {
            offset += 1;
        }
        if start == offset {
            return Err(ImageError::decode(path, format!("missing {what}")));
        }
        // Exactly one whitespace byte separates the header from the data.
        offset += 1;
        String::from_utf8(bytes[start..offset - 1].to_vec())
            .map_err(|_| ImageError::decode(path, format!("non-ascii {what}")))
    };

    let magic = token("magic")?;
    if magic == "PF" {
        return Err(ImageError::decode(
            path,
            "color PFM is not supported, expected grayscale Pf",
        ));
    }
    if magic != "Pf" {
        return Err(ImageError::decode(path, format!("bad magic {magic:?}")));
    }
    let width: usize = token("width")?
        .parse()
        .map_err(|_| ImageError::decode(path, "bad width"))?;
    let height: usize = token("height")?
        .parse()
        .map_err(|_| ImageError::decode(path, "bad height"))?;
    let scale: f64 = token("scale")?
        .parse()
        .map_err(|_| ImageError::decode(path, "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(ImageError::decode(path, "scale must be finite and nonzero"));
    }
    let little_endian = scale < 0.0;

    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| ImageError::decode(path, "dimensions overflow"))?;
    let data_bytes = &bytes[offset.min(bytes.len())..];
    if data_bytes.len() < expected {
        return Err(ImageError::decode(
            path,
            format!("expected {expected} data bytes, found {}", data_bytes.len()),
        ));
    }

    let mut data = vec![0.0f64; width * height];
    for row in 0..height {
        // PFM stores the bottom row first.
        let target_row = height - 1 - row;
        for col in 0..width {
            let at = (row * width + col) * 4;
            let raw: [u8; 4] = data_bytes[at..at + 4].try_into().unwrap();
            let value = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            if !value.is_finite() {
                return Err(ImageError::NonFinite);
            }
            data[target_row * width + col] = value as f64;
        }
    }
    ImageBuffer::from_raw(width, height, 1, data)
}

/// Writes a single-channel buffer as little-endian grayscale PFM.
pub fn write_pfm(path: &Path, image: &ImageBuffer) -> Result<(), ImageError> {
    if image.channels() != 1 {
        return Err(ImageError::InvalidDimensions {
            width: image.width(),
            height: image.height(),
            channels: image.channels(),
        });
    }
    let (width, height) = (image.width(), image.height());
    let mut bytes = Vec::with_capacity(32 + width * height * 4);
    bytes.extend_from_slice(format!("Pf\n{width} {height}\n-1.0\n").as_bytes());
    for row in 0..height {
        let source_row = height - 1 - row;
        for col in 0..width {
            let value = image.get(col, source_row, 0) as f32;
            bytes.extend_from_slice(&value.to_le_bytes());
        }
    }
    crate::write_bytes_atomic(path, &bytes)
}
