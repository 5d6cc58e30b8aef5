//! Big-endian IDX containers as used by the MNIST family. Files ending in
//! `.gz` are decompressed transparently.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]])).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        expected: at + 4,
        found: bytes.len(),
    })
}

/// Validates magic and dimensions; returns `(dims, payload)`.
fn parse<'a>(bytes: &'a [u8], path: &Path, magic: u32, rank: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(Error::BadMagic { path: path.to_path_buf(), found, expected: magic });
    }
    let dims: Vec<usize> =
        (0..rank).map(|k| be_u32(bytes, 4 + 4 * k, path).map(|d| d as usize)).collect::<Result<_>>()?;
    let header = 4 + 4 * rank;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::Truncated { path: path.to_path_buf(), expected, found: payload.len() });
    }
    Ok((dims, payload))
}

/// Loads an image file (`n x rows x cols` unsigned bytes) and its label
/// file. Pixels are scaled to `[0, 1]` by dividing by 255; items have shape
/// `[1, rows, cols]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read_bytes(ip)?;
    let label_bytes = read_bytes(lp)?;
    let (dims, pixels) = parse(&image_bytes, ip, IMAGES_MAGIC, 3)?;
    let (ldims, labels) = parse(&label_bytes, lp, LABELS_MAGIC, 1)?;
    if dims[0] != ldims[0] {
        return Err(Error::CountMismatch { images: dims[0], labels: ldims[0] });
    }
    let name = ip.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(
        name,
        vec![1, dims[1], dims[2]],
        pixels.iter().map(|&b| f64::from(b) / 255.0).collect(),
        labels.iter().map(|&l| usize::from(l)).collect(),
    )
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut gz = flate2::write::GzEncoder::new(f, flate2::Compression::default());
        gz.write_all(bytes).and_then(|_| gz.finish().map(drop))
    } else {
        f.write_all(bytes)
    }
    .map_err(|e| Error::io(path, e))
}

/// Writes `n` images of `rows x cols` bytes.
pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if rows == 0 || cols == 0 || !pixels.len().is_multiple_of(rows * cols) {
        return Err(Error::invalid(format!("{} pixel bytes do not form whole {rows}x{cols} images", pixels.len())));
    }
    let n = pixels.len() / (rows * cols);
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes.extend_from_slice(pixels);
    write_file(path.as_ref(), &bytes)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    for v in [LABELS_MAGIC, labels.len() as u32] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes.extend_from_slice(labels);
    write_file(path.as_ref(), &bytes)
}
