//! Locating datasets under a data directory and storing datasets in the
//! container format.
//!
//! Layout of a data directory:
//!
//! ```text
//! mnist/train-images-idx3-ubyte   mnist/train-labels-idx1-ubyte
//! mnist/t10k-images-idx3-ubyte    mnist/t10k-labels-idx1-ubyte
//! cifar-10-batches-bin/data_batch_{1..5}.bin  cifar-10-batches-bin/test_batch.bin
//! rot-mnist-train.bin  rot-mnist-test.bin     (optional, see gen-rotmnist)
//! ```
//!
//! When the rot-MNIST files are absent they are generated in memory from
//! MNIST with [`ROT_MNIST_SEED`].

use std::path::{Path, PathBuf};

use rotunroll_core::data::{generate_rot_mnist, Dataset, Split};

use crate::config::DatasetKind;
use crate::error::{read_file, Error, FormatError, Result};
use crate::formats::cifar::{cifar_paths, load_cifar10};
use crate::formats::container::{Container, DecodeError, Kind, Payload, FORMAT_VERSION};
use crate::formats::idx::{load_mnist_idx, mnist_paths};

pub const DATA_DIR_ENV: &str = "ROTUNROLL_DATA_DIR";
/// Seed of the train split; the test split uses `seed + 1`.
pub const ROT_MNIST_SEED: u64 = 2024;

pub fn rot_mnist_file(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("rot-mnist-{}.bin", split.name()))
}

pub fn rot_mnist_seed(seed: u64, split: Split) -> u64 {
    match split {
        Split::Train => seed,
        Split::Test => seed.wrapping_add(1),
    }
}

/// Warnings collected while loading (for example empty CIFAR batches).
pub type Warnings = Vec<String>;

pub fn load(kind: DatasetKind, split: Split, data_dir: &Path) -> Result<(Dataset, Warnings)> {
    match kind {
        DatasetKind::Mnist => {
            let (images, labels) = mnist_paths(&data_dir.join("mnist"), split);
            Ok((load_mnist_idx(&images, &labels, split)?, Vec::new()))
        }
        DatasetKind::Cifar10 => load_cifar10(&cifar_paths(&data_dir.join("cifar-10-batches-bin"), split), split),
        DatasetKind::RotMnist => {
            let file = rot_mnist_file(data_dir, split);
            if file.exists() {
                return Ok((load_dataset(&file)?, Vec::new()));
            }
            let (base, _) = load(DatasetKind::Mnist, split, data_dir)?;
            let seed = rot_mnist_seed(ROT_MNIST_SEED, split);
            let note = format!(
                "{} not found; generated rot-MNIST from MNIST with seed {seed}",
                file.display()
            );
            Ok((generate_rot_mnist(&base, seed)?, vec![note]))
        }
    }
}

pub fn dataset_to_container(data: &Dataset) -> Container {
    let mut c = Container::new(Kind::Dataset);
    c.set("split", data.split());
    c.set("provenance", data.provenance().replace('\n', " "));
    let [ch, h, w] = data.image_shape();
    c.push_f64("images", &[data.len(), ch, h, w], data.pixels().to_vec());
    c.push_u8("labels", &[data.len()], data.labels().to_vec());
    c
}

pub fn dataset_from_container(c: &Container) -> std::result::Result<Dataset, FormatError> {
    if c.kind != Kind::Dataset {
        return Err(FormatError::new(12, "container holds a checkpoint, not a dataset"));
    }
    let split = c
        .meta
        .get("split")
        .ok_or_else(|| FormatError::new(0, "metadata key split missing"))?
        .parse::<Split>()
        .map_err(|e| FormatError::new(0, e.to_string()))?;
    let provenance = c.meta.get("provenance").cloned().unwrap_or_default();
    let (Some(images), Some(labels)) = (c.entry("images"), c.entry("labels")) else {
        return Err(FormatError::new(0, "dataset needs images and labels entries"));
    };
    let (Payload::F64(pixels), Payload::U8(l)) = (&images.payload, &labels.payload) else {
        return Err(FormatError::new(0, "images must be f64 and labels u8"));
    };
    let &[n, ch, h, w] = images.shape.as_slice() else {
        return Err(FormatError::new(
            0,
            format!("images shape {:?} is not [N, C, H, W]", images.shape),
        ));
    };
    if labels.shape != [n] {
        return Err(FormatError::new(
            0,
            format!("labels shape {:?} does not match {n} images", labels.shape),
        ));
    }
    Dataset::new([ch, h, w], pixels.clone(), l.clone(), split, provenance)
        .map_err(|e| FormatError::new(0, e.to_string()))
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_container(data).encode()).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = read_file(path)?;
    let c = Container::decode(&bytes).map_err(|e| match e {
        DecodeError::Version(found) => Error::Version {
            path: path.into(),
            found,
            supported: FORMAT_VERSION,
        },
        DecodeError::Format(e) => Error::format(path, e),
    })?;
    dataset_from_container(&c).map_err(|e| Error::format(path, e))
}

/// `--data-dir`, else `$ROTUNROLL_DATA_DIR`, else `./data`.
pub fn resolve_data_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip_is_bit_identical() {
        let pixels = vec![0.0, 1.0, 0.5, 1.0 / 3.0, 0.25, 0.75, 1e-300, 0.999];
        let d = Dataset::new([2, 1, 2], pixels, vec![3, 9], Split::Test, "fixture").unwrap();
        let back = dataset_from_container(&Container::decode(&dataset_to_container(&d).encode()).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let d = Dataset::new([1, 2, 2], vec![], vec![], Split::Train, "").unwrap();
        let back = dataset_from_container(&Container::decode(&dataset_to_container(&d).encode()).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn missing_mnist_is_missing_data() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load(DatasetKind::Mnist, Split::Test, dir.path()),
            Err(Error::MissingData(_))
        ));
        assert!(matches!(
            load(DatasetKind::RotMnist, Split::Test, dir.path()),
            Err(Error::MissingData(_))
        ));
        assert!(matches!(
            load(DatasetKind::Cifar10, Split::Test, dir.path()),
            Err(Error::MissingData(_))
        ));
    }
}
