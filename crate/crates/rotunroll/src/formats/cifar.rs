//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! the red, green and blue 32×32 planes in row-major order.

use std::path::Path;

use rotunroll_core::data::{Dataset, Split, NUM_CLASSES};

use crate::error::{read_file, Error, FormatError, Result};

pub const RECORD_LEN: usize = 1 + 3 * 32 * 32;

/// Labels and `/255` pixels of every record in one batch file.
pub fn parse_records(bytes: &[u8]) -> std::result::Result<(Vec<u8>, Vec<f64>), FormatError> {
    if !bytes.len().is_multiple_of(RECORD_LEN) {
        let whole = bytes.len() / RECORD_LEN;
        return Err(FormatError::new(
            (whole * RECORD_LEN) as u64,
            format!(
                "size {} is not a multiple of {RECORD_LEN}; last record truncated",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (RECORD_LEN - 1));
    for (i, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        if rec[0] as usize >= NUM_CLASSES {
            return Err(FormatError::new(
                (i * RECORD_LEN) as u64,
                format!("label byte {} > 9", rec[0]),
            ));
        }
        labels.push(rec[0]);
        pixels.extend(rec[1..].iter().map(|&p| f64::from(p) / 255.0));
    }
    Ok((labels, pixels))
}

/// A concatenation of batch files; empty files contribute nothing and are
/// reported in the returned warnings.
pub fn load_cifar10(paths: &[impl AsRef<Path>], split: Split) -> Result<(Dataset, Vec<String>)> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    let mut warnings = Vec::new();
    let mut names = Vec::new();
    for p in paths {
        let path = p.as_ref();
        let bytes = read_file(path)?;
        if bytes.is_empty() {
            warnings.push(format!("{} is empty; it contributes no samples", path.display()));
        }
        let (l, px) = parse_records(&bytes).map_err(|e| Error::format(path, e))?;
        labels.extend(l);
        pixels.extend(px);
        names.push(path.display().to_string());
    }
    let dataset = Dataset::new([3, 32, 32], pixels, labels, split, names.join(" + "))?;
    Ok((dataset, warnings))
}

/// Standard batch file names inside `cifar-10-batches-bin`.
pub fn cifar_paths(dir: &Path, split: Split) -> Vec<std::path::PathBuf> {
    match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    }
}
