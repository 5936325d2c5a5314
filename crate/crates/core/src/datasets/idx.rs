//! IDX binary files: big-endian magic and dimensions followed by raw bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images stored as raw bytes, row-major per image.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let p = self.pixels_per_image();
        &self.pixels[i * p..(i + 1) * p]
    }

    /// Pixel values of image `i` scaled to `[0, 1]`.
    pub fn image_f64(&self, i: usize) -> Vec<f64> {
        self.image(i).iter().map(|&b| b as f64 / 255.0).collect()
    }

    /// Average pixel intensity in `[0, 1]`.
    pub fn mean_intensity(&self, i: usize) -> f64 {
        let img = self.image(i);
        img.iter().map(|&b| b as u64).sum::<u64>() as f64 / (255.0 * img.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    Images(IdxImages),
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::data("IDX header truncated"))
}

/// Parses an image (magic 2051) or label (magic 2049) file. Truncated files
/// and unknown magics are rejected without returning partial data.
pub fn parse_idx(path: &Path) -> Result<IdxData> {
    let bytes = fs::read(path)?;
    parse_idx_bytes(&bytes).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub(crate) fn parse_idx_bytes(bytes: &[u8]) -> Result<IdxData> {
    match be_u32(bytes, 0)? {
        IMAGES_MAGIC => {
            let n = be_u32(bytes, 4)? as usize;
            let rows = be_u32(bytes, 8)? as usize;
            let cols = be_u32(bytes, 12)? as usize;
            let need = n * rows * cols;
            let body = &bytes[16..];
            if body.len() != need {
                return Err(Error::data(format!(
                    "IDX image payload has {} bytes, header promises {need}",
                    body.len()
                )));
            }
            Ok(IdxData::Images(IdxImages {
                n,
                rows,
                cols,
                pixels: body.to_vec(),
            }))
        }
        LABELS_MAGIC => {
            let n = be_u32(bytes, 4)? as usize;
            let body = &bytes[8..];
            if body.len() != n {
                return Err(Error::data(format!(
                    "IDX label payload has {} bytes, header promises {n}",
                    body.len()
                )));
            }
            if let Some(bad) = body.iter().find(|&&l| l > 9) {
                return Err(Error::data(format!("label {bad} outside 0..9")));
            }
            Ok(IdxData::Labels(body.to_vec()))
        }
        m => Err(Error::data(format!("bad IDX magic {m:#010x}"))),
    }
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    match parse_idx(path)? {
        IdxData::Images(i) => Ok(i),
        IdxData::Labels(_) => Err(Error::data(format!("{}: expected an image file", path.display()))),
    }
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    match parse_idx(path)? {
        IdxData::Labels(l) => Ok(l),
        IdxData::Images(_) => Err(Error::data(format!("{}: expected a label file", path.display()))),
    }
}

pub fn write_idx_images(path: &Path, images: &IdxImages) -> Result<()> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.n as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tiny_files() {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2];
        img.extend([0, 255, 128, 64]);
        match parse_idx_bytes(&img).unwrap() {
            IdxData::Images(i) => {
                assert_eq!((i.n, i.rows, i.cols), (2, 1, 2));
                assert_eq!(i.image_f64(0), vec![0.0, 1.0]);
            }
            _ => panic!("expected images"),
        }
        let lab = [0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9];
        assert_eq!(parse_idx_bytes(&lab).unwrap(), IdxData::Labels(vec![7, 0, 9]));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_idx_bytes(&[0, 0, 8, 2, 0, 0, 0, 0]).is_err());
        assert!(parse_idx_bytes(&[0, 0, 8, 1, 0, 0, 0, 3, 1]).is_err());
        assert!(parse_idx_bytes(&[0, 0, 8, 1, 0, 0, 0, 1, 10]).is_err());
        assert!(parse_idx_bytes(&[0, 0]).is_err());
    }
}
