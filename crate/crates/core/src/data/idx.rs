//! IDX reader for the MNIST image/label files, plain or gzip-compressed.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut raw)
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn idx_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an IDX3 image file into `(count, rows * cols, pixels)`.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let header = |at| be_u32(bytes, at).ok_or_else(|| idx_err(path, "truncated header"));
    let magic = header(0)?;
    if magic != IMAGES_MAGIC {
        return Err(idx_err(path, format!("bad image magic {magic:#010x}")));
    }
    let count = header(4)? as usize;
    let dim = header(8)? as usize * header(12)? as usize;
    let body = &bytes[16..];
    if body.len() != count * dim {
        return Err(idx_err(
            path,
            format!("expected {} pixel bytes, found {}", count * dim, body.len()),
        ));
    }
    Ok((count, dim, body.to_vec()))
}

/// Parses an IDX1 label file.
pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let header = |at| be_u32(bytes, at).ok_or_else(|| idx_err(path, "truncated header"));
    let magic = header(0)?;
    if magic != LABELS_MAGIC {
        return Err(idx_err(path, format!("bad label magic {magic:#010x}")));
    }
    let count = header(4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(idx_err(
            path,
            format!("expected {count} labels, found {}", body.len()),
        ));
    }
    Ok(body.to_vec())
}

/// Loads an image/label file pair; pixels are scaled to `[0, 1]`.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (count, dim, pixels) = parse_images(&read_all(images)?, images)?;
    let labels_vec = parse_labels(&read_all(labels)?, labels)?;
    if labels_vec.len() != count {
        return Err(idx_err(
            labels,
            format!("{} labels for {count} images", labels_vec.len()),
        ));
    }
    if let Some(bad) = labels_vec.iter().find(|&&l| l >= 10) {
        return Err(idx_err(labels, format!("label {bad} out of range")));
    }
    let features = pixels.into_iter().map(|p| p as f64 / 255.0).collect();
    Ok(Dataset::new(features, dim, labels_vec, 10))
}

/// Finds `<prefix>-images-idx3-ubyte[.gz]` and its label file in `dir`.
pub fn find_pair(dir: &Path, prefix: &str) -> Result<(PathBuf, PathBuf)> {
    let pick = |stem: String| -> Result<PathBuf> {
        let plain = dir.join(&stem);
        let gz = dir.join(format!("{stem}.gz"));
        if plain.is_file() {
            Ok(plain)
        } else if gz.is_file() {
            Ok(gz)
        } else {
            Err(Error::io(
                plain,
                std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found (also tried .gz)"),
            ))
        }
    };
    Ok((
        pick(format!("{prefix}-images-idx3-ubyte"))?,
        pick(format!("{prefix}-labels-idx1-ubyte"))?,
    ))
}

/// Loads the `train` pair from an MNIST directory.
pub fn load_mnist_dir(dir: &Path) -> Result<Dataset> {
    let (images, labels) = find_pair(dir, "train")?;
    load_mnist_idx(&images, &labels)
}
