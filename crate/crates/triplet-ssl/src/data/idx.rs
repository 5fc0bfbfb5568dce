//! IDX binary format: the distribution format of the MNIST-family datasets.
//!
//! Big-endian layout. Image files carry magic 0x0000_0803 followed by
//! (count, rows, cols) and `count*rows*cols` unsigned pixel bytes; label
//! files carry magic 0x0000_0801 followed by (count,) and `count` label
//! bytes. Both parsers operate on in-memory byte slices and reject
//! truncated or oversized headers without panicking, so they double as
//! fuzzing entry points.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, WriteBytesExt};
use ndarray::Array4;

use crate::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an IDX image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(BigEndian::read_u32)
        .ok_or_else(|| Error::Format(format!("truncated header: missing {what}")))
}

/// Parse an IDX image file from bytes.
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_be_u32(bytes, 0, "image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"
        )));
    }
    let count = read_be_u32(bytes, 4, "image count")? as usize;
    let rows = read_be_u32(bytes, 8, "row count")? as usize;
    let cols = read_be_u32(bytes, 12, "column count")? as usize;

    let pixel_count = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    let body = &bytes[16..];
    if body.len() != pixel_count {
        return Err(Error::Format(format!(
            "expected {pixel_count} pixel bytes, found {}",
            body.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

/// Parse an IDX label file from bytes.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_be_u32(bytes, 0, "label magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"
        )));
    }
    let count = read_be_u32(bytes, 4, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format(format!(
            "expected {count} label bytes, found {}",
            body.len()
        )));
    }
    Ok(body.to_vec())
}

/// Load an IDX image/label file pair into a [`super::Dataset`], scaling
/// pixels by 1/255 into [0, 1]. Single-channel: the tensor shape is
/// (count, rows, cols, 1).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<super::Dataset> {
    let images = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if images.count != labels.len() {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    if images.count == 0 {
        return Err(Error::Consistency("empty dataset".into()));
    }

    let scaled: Vec<f32> = images.pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let tensor = Array4::from_shape_vec((images.count, images.rows, images.cols, 1), scaled)
        .map_err(|e| Error::Format(format!("image tensor shape: {e}")))?;
    let labels_usize: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    let num_classes = labels_usize.iter().copied().max().unwrap() + 1;

    let features = super::Features::Images(tensor);
    super::check_unit_range(&features)?;
    super::Dataset::new(features, Some(labels_usize), num_classes)
}

/// Write an IDX image file.
pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if rows == 0 || cols == 0 || pixels.len() % (rows * cols) != 0 {
        return Err(Error::Argument(format!(
            "pixel buffer of {} bytes is not a multiple of {rows}x{cols}",
            pixels.len()
        )));
    }
    let count = pixels.len() / (rows * cols);
    let mut f = fs::File::create(path)?;
    f.write_u32::<BigEndian>(IMAGES_MAGIC)?;
    f.write_u32::<BigEndian>(count as u32)?;
    f.write_u32::<BigEndian>(rows as u32)?;
    f.write_u32::<BigEndian>(cols as u32)?;
    f.write_all(pixels)?;
    Ok(())
}

/// Write an IDX label file.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_u32::<BigEndian>(LABELS_MAGIC)?;
    f.write_u32::<BigEndian>(labels.len() as u32)?;
    f.write_all(labels)?;
    Ok(())
}
