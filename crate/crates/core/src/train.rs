//! Training loop, evaluation and per-epoch metrics.
//!
//! [`Trainer`] owns the network, the optimizer and the shuffling RNG, so a
//! run is a pure function of `(config, seed, data)`: steps execute strictly
//! in sequence and every reduction has a fixed order.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{NetworkConfig, UnrolledNetwork};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            batch_size: 128,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("TrainOptions", "batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg("TrainOptions", "learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
    /// Mean fraction of exactly-zero entries in the final-layer code.
    pub mean_sparsity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub sparsity: f64,
    /// Largest `α · σ_max(WᵀW)` over the banks.
    pub stability_margin: f64,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn row_stats(logits: &Tensor, labels: &[usize]) -> (f64, usize) {
    let k = logits.shape()[1];
    let mut loss = 0.0;
    let mut correct = 0;
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
        loss += lse - row[y];
        correct += usize::from(argmax(row) == y);
    }
    (loss, correct)
}

/// Eval-mode accuracy, mean cross-entropy and final-code sparsity.
pub fn evaluate(net: &UnrolledNetwork, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let bs = batch_size.max(1);
    let (mut loss, mut correct, mut zeros, mut entries) = (0.0, 0usize, 0usize, 0usize);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(bs) {
        let (x, y) = data.batch(chunk)?;
        if let Some(&bad) = y.iter().find(|&&l| l >= net.config().num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes: net.config().num_classes,
            });
        }
        let f = net.forward(&x, false)?;
        let (l, c) = row_stats(&f.logits, &y);
        loss += l;
        correct += c;
        let last = f.codes.last().expect("at least one layer");
        zeros += last.count_zeros();
        entries += last.len();
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        mean_loss: loss / n,
        mean_sparsity: zeros as f64 / entries as f64,
    })
}

pub struct Trainer {
    net: UnrolledNetwork,
    optimizer: Optimizer,
    options: TrainOptions,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    /// Initializes the network from `options.seed`; the same stream then
    /// drives batch shuffling.
    pub fn new(config: NetworkConfig, options: TrainOptions) -> Result<Self> {
        options.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let net = UnrolledNetwork::new(config, &mut rng)?;
        Self::resume(net, options, rng.get_word_pos(), 0)
    }

    /// Continues from a stored network and RNG position. Optimizer moments
    /// restart from zero.
    pub fn resume(net: UnrolledNetwork, options: TrainOptions, word_pos: u128, epoch: usize) -> Result<Self> {
        options.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_word_pos(word_pos);
        Ok(Trainer {
            net,
            optimizer: Optimizer::new(options.optimizer, options.learning_rate)?,
            options,
            rng,
            epoch,
        })
    }

    pub fn net(&self) -> &UnrolledNetwork {
        &self.net
    }

    pub fn into_net(self) -> UnrolledNetwork {
        self.net
    }

    pub fn options(&self) -> &TrainOptions {
        &self.options
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// One optimizer step on the given batch; returns the batch loss.
    pub fn step(&mut self, x: &Tensor, labels: &[usize], batch_index: usize) -> Result<(f64, Tensor)> {
        let step = self.net.loss_and_grads(x, labels)?;
        if !step.loss.is_finite() || step.grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                batch: batch_index,
                param_norms: self.net.parameters().iter().map(|p| p.norm()).collect(),
            });
        }
        self.optimizer.step(&mut self.net, &step.grads)?;
        self.net.update_running_stats(&step.batch_stats)?;
        Ok((step.loss, step.logits))
    }

    /// One pass over `train` in a freshly shuffled order. Returns the mean
    /// training loss and the accuracy of the training-mode logits.
    pub fn train_epoch(&mut self, train: &Dataset) -> Result<(f64, f64)> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut loss, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(self.options.batch_size).enumerate() {
            let (x, y) = train.batch(chunk)?;
            let (l, logits) = self.step(&x, &y, b)?;
            loss += l * chunk.len() as f64;
            correct += row_stats(&logits, &y).1;
        }
        self.epoch += 1;
        assert!(self.net.orbit_consistent(), "expanded banks drifted from their bases");
        let n = train.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }

    /// Largest `α · σ_max` over the banks whose `I − αWᵀW` enters the
    /// recurrence (30 power iterations, fixed seed). An untied first layer
    /// starts from zero and never applies it, so it is left out.
    pub fn stability_margin(&self) -> f64 {
        recurrent_stability_margin(&self.net)
    }

    /// Trains for the configured number of epochs, evaluating on `test`
    /// after each one. `on_epoch` sees every metrics row as it is produced
    /// and may stop the run early by returning `false`.
    pub fn run(
        &mut self,
        train: &Dataset,
        test: &Dataset,
        mut on_epoch: impl FnMut(&EpochMetrics, &UnrolledNetwork) -> bool,
    ) -> Result<Vec<EpochMetrics>> {
        let mut log = Vec::with_capacity(self.options.epochs);
        for _ in 0..self.options.epochs {
            let (train_loss, train_acc) = self.train_epoch(train)?;
            let eval = evaluate(&self.net, test, self.options.batch_size)?;
            let row = EpochMetrics {
                epoch: self.epoch,
                train_loss,
                train_acc,
                test_acc: eval.accuracy,
                sparsity: eval.mean_sparsity,
                stability_margin: self.stability_margin(),
            };
            log.push(row);
            if !on_epoch(&row, &self.net) {
                break;
            }
        }
        Ok(log)
    }
}

/// See [`Trainer::stability_margin`].
pub fn recurrent_stability_margin(net: &UnrolledNetwork) -> f64 {
    let margins = net.stability_margins(30, 0);
    let skip = usize::from(!net.config().tied && margins.len() > 1);
    margins[skip..].iter().copied().fold(0.0, f64::max)
}

/// Builds a network from `options.seed` and trains it.
pub fn train(
    config: NetworkConfig,
    options: TrainOptions,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<(UnrolledNetwork, Vec<EpochMetrics>)> {
    let mut trainer = Trainer::new(config, options)?;
    let log = trainer.run(train_set, test_set, |_, _| true)?;
    Ok((trainer.into_net(), log))
}
