//! IDX binary files as published for MNIST: big-endian `u32` magic, item
//! count, (for images) rows and columns, then one unsigned byte per value.

use std::fs;
use std::path::Path;

use super::{Dataset, Example};
use crate::error::{QeflError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| QeflError::IdxFormat(format!("truncated header at byte {at}")))
}

/// Images flattened row-major and scaled to [0, 1]. Returns (pixels per image, images).
pub fn read_idx_images(bytes: &[u8]) -> Result<(usize, Vec<Vec<f64>>)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(QeflError::IdxFormat(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let dim = rows * cols;
    let body = &bytes[16..];
    if dim == 0 {
        return Err(QeflError::IdxFormat("zero-sized images".into()));
    }
    if body.len() < count * dim {
        return Err(QeflError::IdxFormat(format!(
            "truncated image data: need {} bytes, have {}",
            count * dim,
            body.len()
        )));
    }
    let images = body
        .chunks_exact(dim)
        .take(count)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect();
    Ok((dim, images))
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(QeflError::IdxFormat(format!(
            "bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(QeflError::IdxFormat(format!(
            "truncated label data: need {count} bytes, have {}",
            body.len()
        )));
    }
    Ok(body[..count].to_vec())
}

/// Pair an image file with its label file. The class count is one more
/// than the largest label (at least 10 for digit data).
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (dim, pixels) = read_idx_images(&fs::read(images)?)?;
    let labels = read_idx_labels(&fs::read(labels)?)?;
    if pixels.len() != labels.len() {
        return Err(QeflError::IdxFormat(format!(
            "{} images but {} labels",
            pixels.len(),
            labels.len()
        )));
    }
    let n_classes = labels
        .iter()
        .copied()
        .max()
        .map_or(10, |m| (usize::from(m) + 1).max(10));
    let examples = pixels
        .into_iter()
        .zip(labels)
        .map(|(features, label)| Example {
            features,
            label: usize::from(label),
        })
        .collect();
    Dataset::new(examples, dim, n_classes)
}
