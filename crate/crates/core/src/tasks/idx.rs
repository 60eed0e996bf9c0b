//! IDX binary reader (the MNIST distribution format).
//!
//! Layout: big-endian `u32` magic, one big-endian `u32` per dimension, then
//! the raw `u8` payload. Only unsigned-byte images (`0x00000803`) and labels
//! (`0x00000801`) are accepted. Files must be decompressed beforehand.

use std::path::Path;

use crate::error::{Error, IdxError, Result};
use crate::tasks::LabeledDataset;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    /// `count` images of `rows × cols` bytes, flattened and scaled to `[0, 1]`.
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

impl IdxData {
    /// Images as an `N × (rows·cols)` matrix of values `byte / 255`.
    pub fn to_matrix(&self) -> Option<Vec<Vec<f32>>> {
        match self {
            IdxData::Images { rows, cols, pixels, .. } => Some(
                pixels
                    .chunks_exact(rows * cols)
                    .map(|c| c.iter().map(|&b| f32::from(b) / 255.0).collect())
                    .collect(),
            ),
            IdxData::Labels(_) => None,
        }
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData, IdxError> {
    if bytes.len() < 4 {
        return Err(IdxError::HeaderTruncated { needed: 4 });
    }
    let magic = read_u32(bytes, 0);
    let ndims = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        other => return Err(IdxError::BadMagic(other)),
    };
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(IdxError::HeaderTruncated { needed: header });
    }
    let dims: Vec<usize> = (0..ndims).map(|i| read_u32(bytes, 4 + 4 * i) as usize).collect();
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(IdxError::DimensionOverflow)?;
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(IdxError::PayloadTruncated {
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(IdxError::TrailingBytes(payload.len() - expected));
    }
    Ok(match ndims {
        3 => IdxData::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: payload.to_vec(),
        },
        _ => IdxData::Labels(payload.to_vec()),
    })
}

pub fn read_idx_file(path: &Path) -> Result<IdxData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_idx(&bytes)?)
}

/// Loads an image file and its label file into a dataset with `classes` classes.
pub fn load_dataset(images: &Path, labels: &Path, classes: usize) -> Result<LabeledDataset> {
    let (count, dim, pixels) = match read_idx_file(images)? {
        IdxData::Images {
            count,
            rows,
            cols,
            pixels,
        } => (count, rows * cols, pixels),
        IdxData::Labels(_) => return Err(Error::param("images", format!("{} holds labels", images.display()))),
    };
    let labels = match read_idx_file(labels)? {
        IdxData::Labels(l) => l,
        IdxData::Images { .. } => return Err(Error::param("labels", format!("{} holds images", labels.display()))),
    };
    if labels.len() != count {
        return Err(Error::DimensionMismatch {
            expected: count,
            actual: labels.len(),
        });
    }
    LabeledDataset::from_bytes(&pixels, labels, dim, classes)
}
