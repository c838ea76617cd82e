//! Network checkpoints stored in the [`container`](crate::formats::container)
//! format.
//!
//! Metadata carries the full network configuration (floats in shortest
//! round-trip form), the training options, the RNG stream position and the
//! epoch counter. Tensors:
//!
//! - `bank.{i}.basis` `[m, C, n, n]`
//! - `bn.{i}.gamma`, `bn.{i}.beta`, `bn.{i}.running_mean`, `bn.{i}.running_var`
//! - `head.weight` `[K, F]`, `head.bias` `[K]`
//!
//! Optimizer moments are not stored; a resumed run restarts them from zero.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use rotunroll_core::network::{BatchNormState, BnPlacement, ClassifierHead, Mode, NetworkConfig, UnrolledNetwork};
use rotunroll_core::sparse_coding::{Acceleration, SolverConfig, ThresholdRule};
use rotunroll_core::tensor::{Padding, Tensor};
use rotunroll_core::train::TrainOptions;

use crate::error::{read_file, Error, FormatError, Result};
use crate::formats::container::{Container, DecodeError, Kind, Payload, FORMAT_VERSION};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Model and dataset names echoed from the run, when known.
    pub model: Option<String>,
    pub dataset: Option<String>,
    pub options: TrainOptions,
    pub rng_word_pos: u128,
    pub epoch: usize,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub net: UnrolledNetwork,
    pub state: TrainState,
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Conv { padding: Padding::Same } => "conv-same",
        Mode::Conv {
            padding: Padding::Valid,
        } => "conv-valid",
        Mode::Dense => "dense",
    }
}

fn write_config(c: &mut Container, cfg: &NetworkConfig) {
    c.set("net.mode", mode_name(cfg.mode));
    c.set(
        "net.input",
        format!("{},{},{}", cfg.input[0], cfg.input[1], cfg.input[2]),
    );
    c.set("net.kernel", format!("{},{}", cfg.kernel.0, cfg.kernel.1));
    c.set("net.num_basis", cfg.num_basis);
    c.set("net.order", cfg.order);
    c.set("net.lambda", cfg.solver.lambda);
    c.set("net.alpha", cfg.solver.alpha);
    c.set("net.num_layers", cfg.solver.num_layers);
    c.set(
        "net.acceleration",
        match cfg.solver.acceleration {
            Acceleration::Ista => "ista",
            Acceleration::Fista => "fista",
        },
    );
    c.set(
        "net.threshold",
        match cfg.solver.threshold {
            ThresholdRule::Literal => "literal",
            ThresholdRule::StepScaled => "step-scaled",
        },
    );
    c.set("net.tied", cfg.tied);
    c.set(
        "net.bn_placement",
        match cfg.bn_placement {
            BnPlacement::InRecurrence => "in-recurrence",
            BnPlacement::TapOff => "tap-off",
        },
    );
    c.set("net.bn_eps", cfg.bn_eps);
    c.set("net.bn_momentum", cfg.bn_momentum);
    c.set("net.pool_grid", cfg.pool_grid);
    c.set("net.num_classes", cfg.num_classes);
    c.set("net.init_gain", cfg.init_gain);
    c.set("net.first_layer_gain", cfg.first_layer_gain);
}

struct Meta<'a>(&'a BTreeMap<String, String>);

impl Meta<'_> {
    fn str(&self, key: &str) -> std::result::Result<&str, FormatError> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| FormatError::new(0, format!("metadata key {key} missing")))
    }

    fn get<T: FromStr>(&self, key: &str) -> std::result::Result<T, FormatError>
    where
        T::Err: Display,
    {
        let v = self.str(key)?;
        v.parse()
            .map_err(|e| FormatError::new(0, format!("metadata {key}={v:?}: {e}")))
    }

    fn list(&self, key: &str, n: usize) -> std::result::Result<Vec<usize>, FormatError> {
        let v = self.str(key)?;
        let out: Vec<usize> = v
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| FormatError::new(0, format!("metadata {key}={v:?}: {e}")))?;
        if out.len() != n {
            return Err(FormatError::new(0, format!("metadata {key} needs {n} values")));
        }
        Ok(out)
    }

    fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)]) -> std::result::Result<T, FormatError> {
        let v = self.str(key)?;
        options
            .iter()
            .find(|(name, _)| *name == v)
            .map(|&(_, t)| t)
            .ok_or_else(|| FormatError::new(0, format!("metadata {key}={v:?} is not recognized")))
    }
}

fn read_config(m: &Meta) -> std::result::Result<NetworkConfig, FormatError> {
    let input = m.list("net.input", 3)?;
    let kernel = m.list("net.kernel", 2)?;
    Ok(NetworkConfig {
        mode: m.choice(
            "net.mode",
            &[
                ("conv-same", Mode::Conv { padding: Padding::Same }),
                (
                    "conv-valid",
                    Mode::Conv {
                        padding: Padding::Valid,
                    },
                ),
                ("dense", Mode::Dense),
            ],
        )?,
        input: [input[0], input[1], input[2]],
        kernel: (kernel[0], kernel[1]),
        num_basis: m.get("net.num_basis")?,
        order: m.get("net.order")?,
        solver: SolverConfig {
            lambda: m.get("net.lambda")?,
            alpha: m.get("net.alpha")?,
            num_layers: m.get("net.num_layers")?,
            acceleration: m.choice(
                "net.acceleration",
                &[("ista", Acceleration::Ista), ("fista", Acceleration::Fista)],
            )?,
            threshold: m.choice(
                "net.threshold",
                &[
                    ("literal", ThresholdRule::Literal),
                    ("step-scaled", ThresholdRule::StepScaled),
                ],
            )?,
        },
        tied: m.get("net.tied")?,
        bn_placement: m.choice(
            "net.bn_placement",
            &[
                ("in-recurrence", BnPlacement::InRecurrence),
                ("tap-off", BnPlacement::TapOff),
            ],
        )?,
        bn_eps: m.get("net.bn_eps")?,
        bn_momentum: m.get("net.bn_momentum")?,
        pool_grid: m.get("net.pool_grid")?,
        num_classes: m.get("net.num_classes")?,
        init_gain: m.get("net.init_gain")?,
        first_layer_gain: m.get("net.first_layer_gain")?,
    })
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(Kind::Checkpoint);
        write_config(&mut c, self.net.config());
        let s = &self.state;
        if let Some(m) = &s.model {
            c.set("train.model", m);
        }
        if let Some(d) = &s.dataset {
            c.set("train.dataset", d);
        }
        c.set("train.epochs", s.options.epochs);
        c.set("train.batch_size", s.options.batch_size);
        c.set("train.lr", s.options.learning_rate);
        c.set("train.optimizer", s.options.optimizer);
        c.set("train.seed", s.options.seed);
        c.set("train.rng_word_pos", s.rng_word_pos);
        c.set("train.epoch", s.epoch);
        for (i, bank) in self.net.banks().iter().enumerate() {
            let b = bank.basis();
            c.push_f64(&format!("bank.{i}.basis"), b.shape(), b.data().to_vec());
        }
        for (i, bn) in self.net.norms().iter().enumerate() {
            let n = bn.channels();
            c.set(&format!("bn.{i}.tracked_batches"), bn.tracked_batches);
            c.push_f64(&format!("bn.{i}.gamma"), &[n], bn.gamma.data().to_vec());
            c.push_f64(&format!("bn.{i}.beta"), &[n], bn.beta.data().to_vec());
            c.push_f64(&format!("bn.{i}.running_mean"), &[n], bn.running_mean.clone());
            c.push_f64(&format!("bn.{i}.running_var"), &[n], bn.running_var.clone());
        }
        let h = self.net.head();
        c.push_f64("head.weight", h.weight.shape(), h.weight.data().to_vec());
        c.push_f64("head.bias", h.bias.shape(), h.bias.data().to_vec());
        c
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_container().encode()
    }

    /// Decodes a checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
        let c = match Container::decode(bytes) {
            Ok(c) => c,
            Err(DecodeError::Version(found)) => {
                return Err(Error::Version {
                    path: path.into(),
                    found,
                    supported: FORMAT_VERSION,
                })
            }
            Err(DecodeError::Format(e)) => return Err(Error::format(path, e)),
        };
        Self::from_container(&c).map_err(|e| Error::format(path, e))
    }

    pub fn from_container(c: &Container) -> std::result::Result<Checkpoint, FormatError> {
        if c.kind != Kind::Checkpoint {
            return Err(FormatError::new(12, "container holds a dataset, not a checkpoint"));
        }
        let m = Meta(&c.meta);
        let config = read_config(&m)?;
        let tensor = |name: &str| -> std::result::Result<Tensor, FormatError> {
            let e = c
                .entry(name)
                .ok_or_else(|| FormatError::new(0, format!("tensor {name} missing")))?;
            match &e.payload {
                Payload::F64(v) => {
                    Tensor::new(&e.shape, v.clone()).map_err(|err| FormatError::new(0, format!("{name}: {err}")))
                }
                Payload::U8(_) => Err(FormatError::new(0, format!("tensor {name} must be f64"))),
            }
        };
        let n_banks = if config.tied { 1 } else { config.solver.num_layers };
        let bases = (0..n_banks)
            .map(|i| tensor(&format!("bank.{i}.basis")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut norms = Vec::new();
        for i in 0..config.solver.num_layers.saturating_sub(1) {
            norms.push(BatchNormState {
                gamma: tensor(&format!("bn.{i}.gamma"))?,
                beta: tensor(&format!("bn.{i}.beta"))?,
                running_mean: tensor(&format!("bn.{i}.running_mean"))?.into_data(),
                running_var: tensor(&format!("bn.{i}.running_var"))?.into_data(),
                tracked_batches: m.get(&format!("bn.{i}.tracked_batches"))?,
            });
        }
        let head = ClassifierHead {
            weight: tensor("head.weight")?,
            bias: tensor("head.bias")?,
        };
        let net = UnrolledNetwork::from_parts(config, bases, norms, head)
            .map_err(|e| FormatError::new(0, format!("inconsistent checkpoint: {e}")))?;
        let state = TrainState {
            model: c.meta.get("train.model").cloned(),
            dataset: c.meta.get("train.dataset").cloned(),
            options: TrainOptions {
                epochs: m.get("train.epochs")?,
                batch_size: m.get("train.batch_size")?,
                learning_rate: m.get("train.lr")?,
                optimizer: m.get("train.optimizer")?,
                seed: m.get("train.seed")?,
            },
            rng_word_pos: m.get("train.rng_word_pos")?,
            epoch: m.get("train.epoch")?,
        };
        Ok(Checkpoint { net, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = read_file(path)?;
        Self::from_bytes(&bytes, path)
    }
}
