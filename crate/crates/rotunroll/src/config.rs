//! Training configuration and the `key = value` file format.
//!
//! ```text
//! # comments and blank lines are ignored
//! model = r90
//! dataset = mnist
//! epochs = 10
//! lr = 1e-3
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rotunroll_core::network::{Geometry, Model};
use rotunroll_core::optim::OptimizerKind;
use rotunroll_core::train::TrainOptions;

use crate::error::{read_file, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Mnist,
    RotMnist,
    Cifar10,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::Mnist, DatasetKind::RotMnist, DatasetKind::Cifar10];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::RotMnist => "rot-mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    pub fn geometry(self) -> Geometry {
        match self {
            DatasetKind::Mnist | DatasetKind::RotMnist => Geometry::Mnist,
            DatasetKind::Cifar10 => Geometry::Cifar,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        DatasetKind::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown dataset {s:?}; expected mnist, rot-mnist or cifar10"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: Model,
    pub dataset: DatasetKind,
    /// Dataset used for the per-epoch test accuracy; defaults to `dataset`.
    pub eval_dataset: Option<DatasetKind>,
    pub options: TrainOptions,
    /// Use only the first `n` training images.
    pub train_limit: Option<usize>,
    /// Use only the first `n` test images.
    pub test_limit: Option<usize>,
}

impl TrainConfig {
    pub fn new(model: Model, dataset: DatasetKind) -> Self {
        TrainConfig {
            model,
            dataset,
            eval_dataset: None,
            options: TrainOptions::default(),
            train_limit: None,
            test_limit: None,
        }
    }

    pub fn eval_dataset(&self) -> DatasetKind {
        self.eval_dataset.unwrap_or(self.dataset)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_dataset().geometry() != self.dataset.geometry() {
            return Err(Error::Usage(format!(
                "cannot evaluate a {} network on {}: image geometries differ",
                self.dataset,
                self.eval_dataset()
            )));
        }
        self.options.validate().map_err(|e| Error::Usage(e.to_string()))
    }
}

/// Every field a config file may set; `None` means "not mentioned".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PartialTrainConfig {
    pub model: Option<Model>,
    pub dataset: Option<DatasetKind>,
    pub eval_dataset: Option<DatasetKind>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub seed: Option<u64>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

pub const CONFIG_KEYS: [&str; 10] = [
    "model",
    "dataset",
    "eval_dataset",
    "epochs",
    "batch_size",
    "lr",
    "optimizer",
    "seed",
    "train_limit",
    "test_limit",
];

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Usage(format!("config line {line}: bad value for {key}: {e}")))
}

impl PartialTrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = PartialTrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Usage(format!("config line {line}: expected `key = value`")))?;
            let key = key.replace('-', "_");
            match key.as_str() {
                "model" => out.model = Some(parse_value(line, &key, value)?),
                "dataset" => out.dataset = Some(parse_value(line, &key, value)?),
                "eval_dataset" => out.eval_dataset = Some(parse_value(line, &key, value)?),
                "epochs" => out.epochs = Some(parse_value(line, &key, value)?),
                "batch_size" => out.batch_size = Some(parse_value(line, &key, value)?),
                "lr" | "learning_rate" => out.learning_rate = Some(parse_value(line, &key, value)?),
                "optimizer" => out.optimizer = Some(parse_value(line, &key, value)?),
                "seed" => out.seed = Some(parse_value(line, &key, value)?),
                "train_limit" => out.train_limit = Some(parse_value(line, &key, value)?),
                "test_limit" => out.test_limit = Some(parse_value(line, &key, value)?),
                other => {
                    return Err(Error::Usage(format!(
                        "config line {line}: unknown key {other:?}; known keys: {}",
                        CONFIG_KEYS.join(", ")
                    )))
                }
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Usage(format!("{} is not UTF-8", path.display())))?;
        Self::parse(&text)
    }

    /// Fields set in `over` win.
    pub fn overridden_by(self, over: PartialTrainConfig) -> PartialTrainConfig {
        PartialTrainConfig {
            model: over.model.or(self.model),
            dataset: over.dataset.or(self.dataset),
            eval_dataset: over.eval_dataset.or(self.eval_dataset),
            epochs: over.epochs.or(self.epochs),
            batch_size: over.batch_size.or(self.batch_size),
            learning_rate: over.learning_rate.or(self.learning_rate),
            optimizer: over.optimizer.or(self.optimizer),
            seed: over.seed.or(self.seed),
            train_limit: over.train_limit.or(self.train_limit),
            test_limit: over.test_limit.or(self.test_limit),
        }
    }

    pub fn resolve(self) -> Result<TrainConfig> {
        let model = self.model.ok_or_else(|| Error::Usage("--model is required".into()))?;
        let dataset = self
            .dataset
            .ok_or_else(|| Error::Usage("--dataset is required".into()))?;
        let defaults = TrainOptions::default();
        let cfg = TrainConfig {
            model,
            dataset,
            eval_dataset: self.eval_dataset,
            options: TrainOptions {
                epochs: self.epochs.unwrap_or(defaults.epochs),
                batch_size: self.batch_size.unwrap_or(defaults.batch_size),
                learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
                optimizer: self.optimizer.unwrap_or(defaults.optimizer),
                seed: self.seed.unwrap_or(defaults.seed),
            },
            train_limit: self.train_limit,
            test_limit: self.test_limit,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
