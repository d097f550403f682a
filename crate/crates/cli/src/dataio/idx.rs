//! IDX image/label files (the MNIST container format), with transparent
//! gzip decompression and byte-exact re-serialization.
//!
//! Layout: big-endian magic (`0x00000803` for u8 images with 3 dimension
//! words, `0x00000801` for u8 label vectors), the dimensions as 32-bit
//! big-endian words, then the raw payload bytes.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{CliError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, row-major per image.
    pub pixels: Vec<u8>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| CliError::io(path, e))?;
    // gzip magic 0x1f 0x8b
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| CliError::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(CliError::Length { path: path.to_path_buf(), expected: end, found: bytes.len() });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Parses an IDX image file (`n x rows x cols` unsigned bytes).
pub fn load_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_bytes(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            message: format!("magic 0x{magic:08X}, expected image magic 0x{IMAGE_MAGIC:08X}"),
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| CliError::Format {
            path: path.to_path_buf(),
            message: "dimension overflow".to_string(),
        })?;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(CliError::Length {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    Ok(IdxImages { count, rows, cols, pixels: payload.to_vec() })
}

/// Parses an IDX label file (`n` bytes, each in 0..=9).
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            message: format!("magic 0x{magic:08X}, expected label magic 0x{LABEL_MAGIC:08X}"),
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(CliError::Length {
            path: path.to_path_buf(),
            expected: count,
            found: payload.len(),
        });
    }
    if let Some(&bad) = payload.iter().find(|&&b| b > 9) {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            message: format!("label {bad} out of range 0..=9"),
        });
    }
    Ok(payload.to_vec())
}

/// Serializes images back to IDX bytes (the exact inverse of
/// [`load_idx_images`] on uncompressed input).
pub fn idx_image_bytes(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.count as u32).to_be_bytes());
    out.extend_from_slice(&(images.rows as u32).to_be_bytes());
    out.extend_from_slice(&(images.cols as u32).to_be_bytes());
    out.extend_from_slice(&images.pixels);
    out
}

pub fn idx_label_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_images(path: &Path, images: &IdxImages) -> Result<()> {
    fs::write(path, idx_image_bytes(images)).map_err(|e| CliError::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    fs::write(path, idx_label_bytes(labels)).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn image_roundtrip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.idx3-ubyte");
        let images = IdxImages { count: 1, rows: 2, cols: 2, pixels: vec![0, 128, 255, 7] };
        write_idx_images(&path, &images).unwrap();
        let parsed = load_idx_images(&path).unwrap();
        assert_eq!(parsed, images);
        // reserializing reproduces the original bytes
        assert_eq!(idx_image_bytes(&parsed), std::fs::read(&path).unwrap());
    }

    #[test]
    fn label_fixture_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lab.idx1-ubyte");
        write_idx_labels(&path, &[5, 0, 9]).unwrap();
        assert_eq!(load_idx_labels(&path).unwrap(), vec![5, 0, 9]);
        assert_eq!(idx_label_bytes(&[5, 0, 9]), std::fs::read(&path).unwrap());
    }

    #[test]
    fn label_magic_rejected_by_image_loader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lab.idx1-ubyte");
        write_idx_labels(&path, &[1, 2]).unwrap();
        match load_idx_images(&path) {
            Err(CliError::Format { message, .. }) => {
                assert!(message.contains("0x00000801"), "message: {message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_length_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.idx3-ubyte");
        let images = IdxImages { count: 2, rows: 2, cols: 2, pixels: vec![1; 8] };
        let mut bytes = idx_image_bytes(&images);
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        match load_idx_images(&path) {
            Err(CliError::Length { expected, found, .. }) => {
                assert_eq!(expected, 8);
                assert_eq!(found, 5);
            }
            other => panic!("expected length error, got {other:?}"),
        }
    }

    #[test]
    fn empty_label_file_is_length_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.idx1-ubyte");
        std::fs::write(&path, []).unwrap();
        assert!(matches!(load_idx_labels(&path), Err(CliError::Length { .. })));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.idx1-ubyte");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[3, 12]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_idx_labels(&path), Err(CliError::Format { .. })));
    }

    #[test]
    fn gzip_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.idx3-ubyte.gz");
        let images = IdxImages { count: 2, rows: 1, cols: 3, pixels: vec![9, 8, 7, 6, 5, 4] };
        let mut enc =
            flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&idx_image_bytes(&images)).unwrap();
        std::fs::write(&path, enc.finish().unwrap()).unwrap();
        assert_eq!(load_idx_images(&path).unwrap(), images);
    }
}
