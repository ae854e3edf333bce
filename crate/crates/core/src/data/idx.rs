//! Reader for the IDX format used by the MNIST distribution: a big-endian
//! magic word, big-endian `u32` dimensions, then raw unsigned bytes.

use std::path::{Path, PathBuf};

use super::Dataset;
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, field: &'static str, detail: String) -> Error {
        Error::Idx {
            path: PathBuf::from(self.path),
            field,
            detail,
        }
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        let chunk = self.take(4, field)?;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn take(&mut self, len: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                self.err(
                    field,
                    format!(
                        "truncated: need {len} bytes at offset {}, file has {}",
                        self.pos,
                        self.bytes.len()
                    ),
                )
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32("magic")?;
        if found != expected {
            return Err(self.err(
                "magic",
                format!("expected {expected:#010x}, found {found:#010x}"),
            ));
        }
        Ok(())
    }
}

/// Loads an IDX image/label file pair. Pixels are scaled to `[0, 1]` and each
/// image is flattened row-major; `num_classes` is `max label + 1`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;

    let mut img = Cursor {
        path: images_path,
        bytes: &image_bytes,
        pos: 0,
    };
    img.magic(IDX_IMAGES_MAGIC)?;
    let count = img.u32("image count")? as usize;
    let rows = img.u32("rows")? as usize;
    let cols = img.u32("cols")? as usize;
    let dim = rows * cols;
    let pixels = img.take(count * dim, "pixel data")?;

    let mut lab = Cursor {
        path: labels_path,
        bytes: &label_bytes,
        pos: 0,
    };
    lab.magic(IDX_LABELS_MAGIC)?;
    let label_count = lab.u32("label count")? as usize;
    if label_count != count {
        return Err(lab.err(
            "label count",
            format!("{label_count} labels but {count} images"),
        ));
    }
    let raw_labels = lab.take(label_count, "label data")?;

    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    let features = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(features, labels, dim.max(1), num_classes)
}

/// Writes an IDX image file (`u8` pixels). Used to build fixtures.
pub fn write_idx_images(path: impl AsRef<Path>, rows: u32, cols: u32, pixels: &[u8]) -> Result<()> {
    let per = (rows * cols) as usize;
    let count = pixels.len().checked_div(per).unwrap_or(0);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    out.extend_from_slice(pixels);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}
