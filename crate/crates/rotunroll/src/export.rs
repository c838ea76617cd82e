//! Filter-bank grids as binary PGM (one channel) or PPM (three channels).
//!
//! Row `i` holds the orbit of basis filter `i`; column `j` is its `j`-th
//! rotation. Each tile is min-max normalized to `[0, 255]` on its own, a
//! constant tile becomes mid-gray.

use std::path::Path;

use rotunroll_core::filterbank::FilterBank;

use crate::error::{Error, Result};

pub const SEPARATOR_VALUE: u8 = 255;
pub const CONSTANT_TILE_VALUE: u8 = 128;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    /// Row-major, channels interleaved.
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// PGM (`P5`) or PPM (`P6`) bytes.
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pnm()).map_err(|e| Error::io(path, e))
    }
}

/// Normalizes one tile of `C × n × n` values to bytes.
pub fn normalize_tile(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![CONSTANT_TILE_VALUE; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

/// Grid of the expanded bank with `separator` pixels between tiles.
pub fn filter_grid(bank: &FilterBank, separator: usize) -> Result<Image> {
    let channels = bank.in_channels();
    if channels != 1 && channels != 3 {
        return Err(Error::Usage(format!(
            "cannot export {channels}-channel filters; need 1 or 3"
        )));
    }
    let (kh, kw) = bank.kernel();
    let (rows, cols) = (bank.num_basis(), bank.order());
    let width = cols * kw + (cols - 1) * separator;
    let height = rows * kh + (rows - 1) * separator;
    let mut pixels = vec![SEPARATOR_VALUE; width * height * channels];
    let expanded = bank.expanded().data();
    let tile_len = channels * kh * kw;
    for i in 0..rows {
        for j in 0..cols {
            let f = i * cols + j;
            let tile = normalize_tile(&expanded[f * tile_len..(f + 1) * tile_len]);
            let (x0, y0) = (j * (kw + separator), i * (kh + separator));
            for c in 0..channels {
                for y in 0..kh {
                    for x in 0..kw {
                        pixels[((y0 + y) * width + x0 + x) * channels + c] = tile[(c * kh + y) * kw + x];
                    }
                }
            }
        }
    }
    Ok(Image {
        width,
        height,
        channels,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rotunroll_core::rotation::CyclicGroup;
    use rotunroll_core::tensor::Tensor;
    use std::sync::Arc;

    #[test]
    fn constant_tile_is_mid_gray() {
        assert_eq!(normalize_tile(&[0.3; 4]), vec![128; 4]);
        assert_eq!(normalize_tile(&[-1.0, 1.0, 0.0]), vec![0, 255, 128]);
    }

    #[test]
    fn grid_layout_and_header() {
        let group = Arc::new(CyclicGroup::new(4, (3, 3)).unwrap());
        let basis = Tensor::from_fn(&[2, 1, 3, 3], |i| (i * 7 % 5) as f64);
        let bank = FilterBank::new(basis, group).unwrap();
        let img = filter_grid(&bank, 1).unwrap();
        assert_eq!((img.width, img.height, img.channels), (4 * 3 + 3, 2 * 3 + 1, 1));
        assert_eq!(img.get(3, 0, 0), SEPARATOR_VALUE);
        let pnm = img.to_pnm();
        assert!(pnm.starts_with(b"P5\n15 7\n255\n"));
        assert_eq!(pnm.len(), 12 + 15 * 7);
        assert_eq!(filter_grid(&bank, 0).unwrap().width, 12);
    }
}
