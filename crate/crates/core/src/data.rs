//! In-memory labeled image datasets and seeded rot-MNIST generation.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rotation::make_rotation;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::arg("Split", "expected train or test")),
        }
    }
}

/// `N` images of shape `[C, H, W]` with pixels in `[0, 1]`, and their labels.
/// `N` may be zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    image_shape: [usize; 3],
    pixels: Vec<f64>,
    labels: Vec<u8>,
    split: Split,
    provenance: String,
}

pub const NUM_CLASSES: usize = 10;

impl Dataset {
    pub fn new(
        image_shape: [usize; 3],
        pixels: Vec<f64>,
        labels: Vec<u8>,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let per = image_shape.iter().product::<usize>();
        if per == 0 {
            return Err(Error::arg("Dataset", "image extents must be positive"));
        }
        if pixels.len() != per * labels.len() {
            return Err(Error::dim("Dataset", per * labels.len(), pixels.len()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange {
                label: l as usize,
                num_classes: NUM_CLASSES,
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::arg("Dataset", "pixels must lie in [0, 1]"));
        }
        Ok(Dataset {
            image_shape,
            pixels,
            labels,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn image_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Stacks the listed samples into `[B, C, H, W]`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::arg("Dataset::batch", alloc::format!("index {i} out of range")));
        }
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let [c, h, w] = self.image_shape;
        let images = Tensor::new(&[indices.len(), c, h, w], data)?;
        Ok((images, indices.iter().map(|&i| self.labels[i] as usize).collect()))
    }

    /// The first `n` samples (or all of them if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            image_shape: self.image_shape,
            pixels: self.pixels[..n * self.image_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            split: self.split,
            provenance: alloc::format!("{} [first {n}]", self.provenance),
        }
    }

    pub fn class_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

/// Rotates every image by its own angle (degrees, counter-clockwise, zero
/// fill). Quarter turns use the exact permutation, other angles bilinear
/// interpolation.
pub fn rotate_dataset(base: &Dataset, angles: &[f64], provenance: impl Into<String>) -> Result<Dataset> {
    if angles.len() != base.len() {
        return Err(Error::dim("rotate_dataset", base.len(), angles.len()));
    }
    let [c, h, w] = base.image_shape;
    let mut pixels = alloc::vec![0.0; base.pixels.len()];
    let n = base.image_len();
    for (i, &angle) in angles.iter().enumerate() {
        let op = make_rotation(angle, (h, w))?;
        let src = base.image(i);
        let dst = &mut pixels[i * n..(i + 1) * n];
        for ch in 0..c {
            op.apply_slice(
                &src[ch * h * w..(ch + 1) * h * w],
                &mut dst[ch * h * w..(ch + 1) * h * w],
            );
        }
    }
    // bilinear weights are a convex combination, so only rounding can leave [0, 1]
    for p in &mut pixels {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(Dataset {
        image_shape: base.image_shape,
        pixels,
        labels: base.labels.clone(),
        split: base.split,
        provenance: provenance.into(),
    })
}

/// Angles drawn uniformly from `[0, 360)`, one per image.
pub fn rot_mnist_angles(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random_range(0.0..360.0)).collect()
}

/// rot-MNIST: each digit of `base` rotated by a seeded uniform angle.
pub fn generate_rot_mnist(base: &Dataset, seed: u64) -> Result<Dataset> {
    if base.image_shape != [1, 28, 28] {
        return Err(Error::dim("generate_rot_mnist", [1, 28, 28], base.image_shape));
    }
    let angles = rot_mnist_angles(base.len(), seed);
    rotate_dataset(
        base,
        &angles,
        alloc::format!("rot-mnist seed={seed} from {}", base.provenance),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::RotationOperator;

    fn digits(n: usize) -> Dataset {
        let mut s = 7u64;
        let pixels = (0..n * 784)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 56) as f64 / 255.0
            })
            .collect();
        Dataset::new(
            [1, 28, 28],
            pixels,
            (0..n).map(|i| (i % 10) as u8).collect(),
            Split::Train,
            "fixture",
        )
        .unwrap()
    }

    #[test]
    fn validation() {
        assert!(Dataset::new([1, 2, 2], alloc::vec![0.0; 4], alloc::vec![0, 1], Split::Test, "").is_err());
        assert!(Dataset::new([1, 1, 1], alloc::vec![0.5], alloc::vec![10], Split::Test, "").is_err());
        assert!(Dataset::new([1, 1, 1], alloc::vec![1.5], alloc::vec![1], Split::Test, "").is_err());
        let empty = Dataset::new([3, 32, 32], alloc::vec![], alloc::vec![], Split::Test, "").unwrap();
        assert!(empty.is_empty());
        assert!(empty.batch(&[]).is_err());
    }

    #[test]
    fn batch_layout() {
        let d = digits(4);
        let (x, y) = d.batch(&[2, 0]).unwrap();
        assert_eq!(x.shape(), &[2, 1, 28, 28]);
        assert_eq!(&x.data()[..784], d.image(2));
        assert_eq!(y, [2, 0]);
        assert!(d.batch(&[4]).is_err());
    }

    #[test]
    fn rot_mnist_is_deterministic_and_keeps_labels() {
        let d = digits(6);
        let a = generate_rot_mnist(&d, 3).unwrap();
        let b = generate_rot_mnist(&d, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels(), d.labels());
        assert_eq!(a.len(), d.len());
        assert_ne!(a.pixels(), generate_rot_mnist(&d, 4).unwrap().pixels());
        assert!(rot_mnist_angles(1000, 0).iter().all(|a| (0.0..360.0).contains(a)));
    }

    #[test]
    fn zero_angle_is_identity() {
        let d = digits(2);
        let r = rotate_dataset(&d, &[0.0, 0.0], "").unwrap();
        assert_eq!(r.pixels(), d.pixels());
    }

    #[test]
    fn bilinear_quarter_turn_matches_permutation() {
        let d = digits(1);
        let exact = rotate_dataset(&d, &[90.0], "").unwrap();
        let bilinear = RotationOperator::bilinear(90.0, (28, 28)).unwrap();
        let mut out = alloc::vec![0.0; 784];
        bilinear.apply_slice(d.image(0), &mut out);
        let worst = out
            .iter()
            .zip(exact.image(0))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-12);
    }

    #[test]
    fn non_mnist_geometry_rejected() {
        let d = Dataset::new([3, 2, 2], alloc::vec![0.0; 12], alloc::vec![1], Split::Test, "").unwrap();
        assert!(generate_rot_mnist(&d, 0).is_err());
    }
}
