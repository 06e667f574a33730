//! IDX image/label files (the MNIST container format).
//!
//! Big-endian throughout. Images: magic `00 00 08 03`, then count, rows and
//! cols as u32, then `count·rows·cols` unsigned bytes. Labels: magic
//! `00 00 08 01`, count, then `count` unsigned bytes. Pixels are scaled by
//! 1/255 and each image is flattened row-major.

use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::IdxTruncated {
            path: path.to_path_buf(),
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], offset: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(offset..offset + len).ok_or_else(|| Error::IdxTruncated {
        path: path.to_path_buf(),
        expected: offset + len,
        found: bytes.len(),
    })
}

/// Parses an image file into an `n × (rows·cols)` tensor in `[0, 1]`.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<Tensor> {
    check_magic(bytes, IMAGES_MAGIC, path)?;
    let n = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let d = rows * cols;
    let pixels = payload(bytes, 16, n * d, path)?;
    Tensor::new(n, d, pixels.iter().map(|&p| p as f64 / 255.0).collect())
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    check_magic(bytes, LABELS_MAGIC, path)?;
    let n = read_u32(bytes, 4, path)? as usize;
    Ok(payload(bytes, 8, n, path)?.iter().map(|&l| l as usize).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image/label pair. The class count is `max(label) + 1` unless
/// given explicitly.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let features = parse_images(&read(ip)?, ip)?;
    let labels = parse_labels(&read(lp)?, lp)?;
    if features.rows() != labels.len() {
        return Err(Error::IdxCountMismatch {
            images: features.rows(),
            labels: labels.len(),
        });
    }
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
    Dataset::new(features, labels, classes)
}
