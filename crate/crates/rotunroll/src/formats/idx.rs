//! MNIST IDX files: a big-endian `u32` magic, one big-endian `u32` per
//! dimension, then an unsigned-byte payload.

use std::path::Path;

use rotunroll_core::data::{Dataset, Split, NUM_CLASSES};

use crate::error::{read_file, Error, FormatError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> std::result::Result<u32, FormatError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| FormatError::new(offset as u64, format!("file ends inside the {what} field")))
}

fn check_magic(bytes: &[u8], want: u32) -> std::result::Result<(), FormatError> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != want {
        let (expected, found) = (describe(want), describe(magic));
        return Err(FormatError::new(
            0,
            format!("magic 0x{magic:08x} ({found}) where 0x{want:08x} ({expected}) was expected"),
        ));
    }
    Ok(())
}

fn describe(magic: u32) -> &'static str {
    match magic {
        IMAGES_MAGIC => "images",
        LABELS_MAGIC => "labels",
        _ => "unknown",
    }
}

fn payload(bytes: &[u8], start: usize, len: usize) -> std::result::Result<&[u8], FormatError> {
    let available = bytes.len().saturating_sub(start);
    if available < len {
        return Err(FormatError::new(
            bytes.len() as u64,
            format!("payload truncated: header promises {len} bytes from offset {start}, file holds {available}"),
        ));
    }
    if available > len {
        return Err(FormatError::new(
            (start + len) as u64,
            format!("{} trailing bytes after the payload", available - len),
        ));
    }
    Ok(&bytes[start..start + len])
}

pub fn parse_images(bytes: &[u8]) -> std::result::Result<IdxImages, FormatError> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(FormatError::new(8, "image extents must be positive"));
    }
    let len = count
        .checked_mul(rows * cols)
        .ok_or_else(|| FormatError::new(4, "image count overflows"))?;
    let pixels = payload(bytes, 16, len)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8]) -> std::result::Result<Vec<u8>, FormatError> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = be_u32(bytes, 4, "label count")? as usize;
    let labels = payload(bytes, 8, count)?;
    if let Some(i) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
        return Err(FormatError::new(
            (8 + i) as u64,
            format!("label {} outside [0, 10)", labels[i]),
        ));
    }
    Ok(labels.to_vec())
}

/// Parses an image/label file pair into a dataset with pixels divided by 255.
pub fn mnist_from_bytes(
    images: &[u8],
    labels: &[u8],
    split: Split,
    provenance: &str,
) -> std::result::Result<Dataset, (bool, FormatError)> {
    let img = parse_images(images).map_err(|e| (true, e))?;
    let lab = parse_labels(labels).map_err(|e| (false, e))?;
    if img.count != lab.len() {
        return Err((
            false,
            FormatError::new(
                4,
                format!(
                    "label count {} at byte 4 disagrees with image count {} at byte 4 of the images file",
                    lab.len(),
                    img.count
                ),
            ),
        ));
    }
    let pixels = img.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Ok(Dataset::new([1, img.rows, img.cols], pixels, lab, split, provenance).expect("validated above"))
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;
    let provenance = format!("{} + {}", images_path.display(), labels_path.display());
    mnist_from_bytes(&images, &labels, split, &provenance)
        .map_err(|(in_images, e)| Error::format(if in_images { images_path } else { labels_path }, e))
}

/// Standard file names inside an MNIST directory.
pub fn mnist_paths(dir: &Path, split: Split) -> (std::path::PathBuf, std::path::PathBuf) {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}
