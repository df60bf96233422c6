//! IDX files: big-endian `u32` magic (`0x0000_08NN`, `NN` = dimension count),
//! `NN` big-endian `u32` dimensions, then unsigned bytes.

use std::fs;
use std::path::{Path, PathBuf};

use super::dataset::{DataSource, Dataset, Split};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
/// Images with an explicit channel dimension, `n x c x h x w`.
pub const IMAGES_CHW_MAGIC: u32 = 0x0000_0804;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn load_err(path: &Path, offset: usize, reason: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses the header against the accepted magics; returns dims and payload.
fn parse<'a>(path: &Path, bytes: &'a [u8], accepted: &[u32]) -> Result<(Vec<usize>, &'a [u8])> {
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or_else(|| load_err(path, bytes.len(), "truncated header"))
    };
    let magic = word(0)?;
    if !accepted.contains(&magic) {
        return Err(load_err(path, 0, format!("wrong magic 0x{magic:08x}")));
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|d| word(4 + 4 * d).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndim;
    let len: usize = dims.iter().product();
    let payload = &bytes[start..];
    if payload.len() < len {
        return Err(load_err(
            path,
            bytes.len(),
            format!(
                "truncated payload: expected {len} bytes after the header, found {}",
                payload.len()
            ),
        ));
    }
    Ok((dims, &payload[..len]))
}

/// Reads an image/label file pair, scaling pixels to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Split> {
    let ib = read(images)?;
    let (idims, pixels) = parse(images, &ib, &[IMAGES_MAGIC, IMAGES_CHW_MAGIC])?;
    let lb = read(labels)?;
    let (ldims, lab) = parse(labels, &lb, &[LABELS_MAGIC])?;
    if ldims[0] != idims[0] {
        return Err(load_err(
            labels,
            4,
            format!(
                "label count {} does not match image count {}",
                ldims[0], idims[0]
            ),
        ));
    }
    let shape = match idims[..] {
        [_, h, w] => [1, h, w],
        [_, c, h, w] => [c, h, w],
        _ => unreachable!("magic fixes the dimension count"),
    };
    Split::new(
        shape,
        pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        lab.to_vec(),
    )
}

/// Loads train (and optionally test) files and normalizes with the training
/// statistics. Without test files the last fifth of the training file is
/// held out.
pub fn load_idx_dataset(
    train_images: &Path,
    train_labels: &Path,
    test: Option<(&Path, &Path)>,
    classes: usize,
) -> Result<Dataset> {
    let mut train = load_idx(train_images, train_labels)?;
    let test_split = match test {
        Some((i, l)) => load_idx(i, l)?,
        None => {
            let keep = train.len() - train.len() / 5;
            train.split_off(keep)
        }
    };
    Dataset::from_unit_splits(
        DataSource::Idx {
            train_images: train_images.to_path_buf(),
            train_labels: train_labels.to_path_buf(),
            test: test.map(|(i, l)| (PathBuf::from(i), PathBuf::from(l))),
        },
        train,
        test_split,
        classes,
    )
}

fn encode(magic: u32, dims: &[usize], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + payload.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

/// Writes `n` single-channel images (`0x803`) or multi-channel ones (`0x804`).
pub fn write_idx_images(path: &Path, shape: [usize; 3], pixels: &[u8]) -> Result<()> {
    let per: usize = shape.iter().product();
    if per == 0 || !pixels.len().is_multiple_of(per) {
        return Err(Error::shape(format!(
            "{} bytes are not whole {shape:?} images",
            pixels.len()
        )));
    }
    let n = pixels.len() / per;
    let bytes = if shape[0] == 1 {
        encode(IMAGES_MAGIC, &[n, shape[1], shape[2]], pixels)
    } else {
        encode(IMAGES_CHW_MAGIC, &[n, shape[0], shape[1], shape[2]], pixels)
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    fs::write(path, encode(LABELS_MAGIC, &[labels.len()], labels)).map_err(|e| Error::io(path, e))
}
