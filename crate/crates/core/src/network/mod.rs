//! Unrolled FISTA networks built from group-expanded filter banks.
//!
//! Layer `l` computes `z⁽ˡ⁾ = S(y + α Wₗᵀ(x − Wₗ y))` where `y` is the FISTA
//! extrapolation of the previous codes (`y = 0` for the first layer, so its
//! synthesis is skipped). Every code except the last is batch normalized; the
//! head pools the final code and applies one linear layer.

mod config;

pub use config::{
    BnPlacement, Geometry, Mode, Model, NetworkConfig, CONV_FILTERS, DEFAULT_FIRST_LAYER_GAIN, DEFAULT_POOL_GRID,
    DENSE_ATOMS,
};

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::rotation::{make_rotation, CyclicGroup, RotationKind};
use crate::sparse_coding::{fista_unroll, Acceleration, ConvDictionary, Momentum, SolverConfig};
use crate::tensor::{BatchStats, GradTape, Padding, Tensor, Var};

/// Learnable affine parameters and running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    /// Running unbiased variance.
    pub running_var: Vec<f64>,
    pub tracked_batches: u64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: alloc::vec![0.0; channels],
            running_var: alloc::vec![1.0; channels],
            tracked_batches: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.tracked_batches > 0
    }

    /// Exponential moving average with weight `momentum` on the new batch.
    pub fn update(&mut self, stats: &BatchStats, momentum: f64) {
        let correction = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - momentum) * self.running_mean[c] + momentum * stats.mean[c];
            self.running_var[c] = (1.0 - momentum) * self.running_var[c] + momentum * stats.var[c] * correction;
        }
        self.tracked_batches += 1;
    }
}

/// `logits = W · pool(z) + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    /// `[num_classes, feature_dim]`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ClassifierHead {
    pub fn zeros(num_classes: usize, feature_dim: usize) -> Self {
        ClassifierHead {
            weight: Tensor::zeros(&[num_classes, feature_dim]),
            bias: Tensor::zeros(&[num_classes]),
        }
    }

    pub fn random<R: Rng + ?Sized>(num_classes: usize, feature_dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1.0 / libm::sqrt(feature_dim as f64)).expect("positive std");
        ClassifierHead {
            weight: Tensor::from_fn(&[num_classes, feature_dim], |_| normal.sample(rng)),
            bias: Tensor::zeros(&[num_classes]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParameterCount {
    pub filters: usize,
    pub batchnorm: usize,
    pub head: usize,
    pub total: usize,
}

/// Result of a forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Tensor,
    /// Thresholded code of every layer, before normalization.
    pub codes: Vec<Tensor>,
    /// Batch statistics of each normalized layer (training mode only).
    pub batch_stats: Vec<BatchStats>,
}

/// Result of [`UnrolledNetwork::loss_and_grads`].
#[derive(Clone, Debug)]
pub struct Step {
    pub loss: f64,
    pub logits: Tensor,
    /// One gradient per parameter, in [`UnrolledNetwork::parameters`] order.
    pub grads: Vec<Tensor>,
    pub batch_stats: Vec<BatchStats>,
    /// Fraction of exactly-zero entries in the final code.
    pub final_sparsity: f64,
}

#[derive(Clone, Debug)]
pub struct UnrolledNetwork {
    config: NetworkConfig,
    banks: Vec<FilterBank>,
    norms: Vec<BatchNormState>,
    head: ClassifierHead,
}

struct Recorded {
    leaves: Vec<Var>,
    logits: Var,
    codes: Vec<Var>,
    batch_stats: Vec<BatchStats>,
}

impl UnrolledNetwork {
    pub fn new<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let group = Arc::new(CyclicGroup::new(config.order, config.kernel)?);
        let n_banks = if config.tied { 1 } else { config.num_layers() };
        let banks = (0..n_banks)
            .map(|b| {
                let gain = if b == 0 && !config.tied {
                    config.first_layer_gain
                } else {
                    config.init_gain
                };
                FilterBank::random(
                    config.num_basis,
                    config.input[0],
                    config.kernel,
                    group.clone(),
                    gain,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let norms = (1..config.num_layers())
            .map(|_| BatchNormState::new(config.num_filters()))
            .collect();
        let head = ClassifierHead::random(config.num_classes, config.feature_dim(), rng);
        Ok(UnrolledNetwork {
            config,
            banks,
            norms,
            head,
        })
    }

    /// Reassembles a network from stored parts, checking every shape.
    pub fn from_parts(
        config: NetworkConfig,
        bases: Vec<Tensor>,
        norms: Vec<BatchNormState>,
        head: ClassifierHead,
    ) -> Result<Self> {
        config.validate()?;
        let n_banks = if config.tied { 1 } else { config.num_layers() };
        if bases.len() != n_banks || norms.len() + 1 != config.num_layers() {
            return Err(Error::dim(
                "UnrolledNetwork::from_parts",
                (n_banks, config.num_layers() - 1),
                (bases.len(), norms.len()),
            ));
        }
        let n = config.num_filters();
        for bn in &norms {
            if bn.gamma.shape() != [n]
                || bn.beta.shape() != [n]
                || bn.running_mean.len() != n
                || bn.running_var.len() != n
            {
                return Err(Error::dim("UnrolledNetwork::from_parts", [n], bn.gamma.shape()));
            }
        }
        let want_head = [config.num_classes, config.feature_dim()];
        if head.weight.shape() != want_head || head.bias.shape() != [config.num_classes] {
            return Err(Error::dim(
                "UnrolledNetwork::from_parts",
                want_head,
                head.weight.shape(),
            ));
        }
        let want_basis = [config.num_basis, config.input[0], config.kernel.0, config.kernel.1];
        let group = Arc::new(CyclicGroup::new(config.order, config.kernel)?);
        let banks = bases
            .into_iter()
            .map(|b| {
                if b.shape() != want_basis {
                    return Err(Error::dim("UnrolledNetwork::from_parts", want_basis, b.shape()));
                }
                FilterBank::new(b, group.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(UnrolledNetwork {
            config,
            banks,
            norms,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn banks(&self) -> &[FilterBank] {
        &self.banks
    }

    /// Bank used by layer `l`.
    pub fn layer_bank(&self, l: usize) -> &FilterBank {
        &self.banks[if self.config.tied { 0 } else { l }]
    }

    pub fn norms(&self) -> &[BatchNormState] {
        &self.norms
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut ClassifierHead {
        &mut self.head
    }

    pub fn norms_mut(&mut self) -> &mut [BatchNormState] {
        &mut self.norms
    }

    /// Learnable tensors: bank bases, then `γ, β` per norm layer, then head
    /// weight and bias.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.banks.iter().map(FilterBank::basis).collect();
        for bn in &self.norms {
            out.push(&bn.gamma);
            out.push(&bn.beta);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    /// Visits every learnable tensor mutably in [`Self::parameters`] order.
    /// Banks are re-expanded after their basis is touched.
    pub fn update_parameters(&mut self, mut f: impl FnMut(usize, &mut Tensor)) {
        let mut idx = 0;
        for bank in &mut self.banks {
            bank.update_basis(|b| f(idx, b));
            idx += 1;
        }
        for bn in &mut self.norms {
            f(idx, &mut bn.gamma);
            f(idx + 1, &mut bn.beta);
            idx += 2;
        }
        f(idx, &mut self.head.weight);
        f(idx + 1, &mut self.head.bias);
    }

    pub fn count_parameters(&self) -> ParameterCount {
        let filters = self.banks.iter().map(FilterBank::count_trainable).sum();
        let batchnorm = self.norms.iter().map(|bn| 2 * bn.channels()).sum();
        let head = self.head.weight.len() + self.head.bias.len();
        ParameterCount {
            filters,
            batchnorm,
            head,
            total: filters + batchnorm + head,
        }
    }

    /// `α · σ_max(WᵀW)` for every bank, by power iteration on one code map.
    pub fn stability_margins(&self, iters: usize, seed: u64) -> Vec<f64> {
        let alpha = self.config.solver.alpha;
        self.banks
            .iter()
            .map(|bank| {
                let sigma = match self.config.mode {
                    Mode::Dense => {
                        let n = bank.num_filters();
                        let atoms = bank.expanded().reshape(&[n, bank.expanded().len() / n]).expect("size");
                        let dict = crate::sparse_coding::DenseDictionary::new(atoms).expect("rank 2");
                        crate::sparse_coding::dictionary_sigma_max(&dict, &[n], iters, seed)
                    }
                    Mode::Conv { padding } => {
                        let (h, w) = self.config.code_spatial();
                        let dict = ConvDictionary {
                            filters: bank.expanded(),
                            padding,
                        };
                        crate::sparse_coding::dictionary_sigma_max(&dict, &[bank.num_filters(), h, w], iters, seed)
                    }
                };
                alpha * sigma.value
            })
            .collect()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        match *batch.shape() {
            [b, c, h, w] if [c, h, w] == self.config.input => Ok(b),
            ref s => Err(Error::dim(
                "UnrolledNetwork::forward",
                alloc::format!(
                    "[B, {}, {}, {}]",
                    self.config.input[0],
                    self.config.input[1],
                    self.config.input[2]
                ),
                s,
            )),
        }
    }

    fn analysis(&self, tape: &mut GradTape, v: Var, dict: Var) -> Result<Var> {
        match self.config.mode {
            Mode::Conv { padding } => tape.correlate(v, dict, padding),
            Mode::Dense => tape.matmul_nt(v, dict),
        }
    }

    fn synthesis(&self, tape: &mut GradTape, z: Var, dict: Var) -> Result<Var> {
        match self.config.mode {
            Mode::Conv { padding } => tape.conv_transpose(z, dict, padding),
            Mode::Dense => tape.matmul(z, dict),
        }
    }

    fn record(&self, tape: &mut GradTape, batch: &Tensor, training: bool) -> Result<Recorded> {
        let b = self.check_batch(batch)?;
        if !training {
            if let Some(layer) = self.norms.iter().position(|bn| !bn.is_initialized()) {
                return Err(Error::UninitializedStatistics { layer });
            }
        }
        let cfg = &self.config;
        let SolverConfig { alpha, .. } = cfg.solver;
        let shrink = cfg.solver.shrinkage();
        let dense = cfg.mode == Mode::Dense;
        let n = cfg.num_filters();
        let d = batch.len() / b;

        let mut leaves = Vec::new();
        let mut dicts = Vec::with_capacity(self.banks.len());
        for bank in &self.banks {
            let leaf = tape.leaf(bank.basis().clone());
            leaves.push(leaf);
            let e = tape.expand_bank(leaf, bank.group().clone())?;
            dicts.push(if dense { tape.reshape(e, &[n, d])? } else { e });
        }
        let mut affine = Vec::with_capacity(self.norms.len());
        for bn in &self.norms {
            let g = tape.leaf(bn.gamma.clone());
            let beta = tape.leaf(bn.beta.clone());
            leaves.push(g);
            leaves.push(beta);
            affine.push((g, beta));
        }
        let head_w = tape.leaf(self.head.weight.clone());
        let head_b = tape.leaf(self.head.bias.clone());
        leaves.push(head_w);
        leaves.push(head_b);

        let x = if dense {
            tape.constant(batch.reshape(&[b, d])?)
        } else {
            tape.constant(batch.clone())
        };

        let layers = cfg.num_layers();
        let mut codes = Vec::with_capacity(layers);
        let mut batch_stats = Vec::new();
        let mut momentum = Momentum::default();
        let mut y: Option<Var> = None;
        let mut prev: Option<Var> = None;
        for l in 0..layers {
            let dict = dicts[if cfg.tied { 0 } else { l }];
            let pre = match y {
                None => {
                    let a = self.analysis(tape, x, dict)?;
                    tape.scale(a, alpha)?
                }
                Some(y) => {
                    let s = self.synthesis(tape, y, dict)?;
                    let r = tape.sub(x, s)?;
                    let a = self.analysis(tape, r, dict)?;
                    tape.lincomb(y, 1.0, a, alpha)?
                }
            };
            let z = tape.soft_threshold(pre, shrink)?;
            codes.push(z);
            if l + 1 == layers {
                break;
            }
            let (g, beta) = affine[l];
            let normalized = if training {
                let (out, stats) = tape.batch_norm(z, g, beta, cfg.bn_eps)?;
                batch_stats.push(stats);
                out
            } else {
                let bn = &self.norms[l];
                tape.frozen_norm(z, g, beta, &bn.running_mean, &bn.running_var, cfg.bn_eps)?
            };
            let state = match cfg.bn_placement {
                BnPlacement::InRecurrence => normalized,
                BnPlacement::TapOff => z,
            };
            let next = match cfg.solver.acceleration {
                Acceleration::Ista => state,
                Acceleration::Fista => {
                    // the first weight is (t₁ − 1)/t₂ = 0, so z⁽⁰⁾ = 0 never enters
                    let w = momentum.advance();
                    match prev {
                        Some(p) => tape.lincomb(state, 1.0 + w, p, -w)?,
                        None => state,
                    }
                }
            };
            prev = Some(state);
            y = Some(next);
        }

        let last = *codes.last().expect("at least one layer");
        let features = if dense {
            last
        } else {
            let pooled = tape.avg_pool_grid(last, cfg.pool_grid)?;
            tape.reshape(pooled, &[b, cfg.feature_dim()])?
        };
        let lin = tape.matmul_nt(features, head_w)?;
        let logits = tape.add_bias(lin, head_b)?;
        Ok(Recorded {
            leaves,
            logits,
            codes,
            batch_stats,
        })
    }

    /// Logits and per-layer codes for a `[B, C, H, W]` batch. In training
    /// mode batch statistics are used (and returned) but running statistics
    /// are left untouched.
    pub fn forward(&self, batch: &Tensor, training: bool) -> Result<Forward> {
        let mut tape = GradTape::new();
        let rec = self.record(&mut tape, batch, training)?;
        Ok(Forward {
            logits: tape.value(rec.logits).clone(),
            codes: rec.codes.iter().map(|&c| tape.value(c).clone()).collect(),
            batch_stats: rec.batch_stats,
        })
    }

    /// Training-mode mean cross-entropy and its gradient for every parameter.
    pub fn loss_and_grads(&self, batch: &Tensor, labels: &[usize]) -> Result<Step> {
        let b = self.check_batch(batch)?;
        if labels.len() != b {
            return Err(Error::dim("loss_and_grads", b, labels.len()));
        }
        let mut tape = GradTape::new();
        let rec = self.record(&mut tape, batch, true)?;
        let loss = tape.cross_entropy(rec.logits, labels)?;
        let loss_value = tape.value(loss).item();
        let logits = tape.value(rec.logits).clone();
        let last = tape.value(*rec.codes.last().expect("at least one layer"));
        let final_sparsity = last.count_zeros() as f64 / last.len() as f64;
        let mut grads = tape.backward(loss)?;
        let grads = rec
            .leaves
            .iter()
            .map(|&v| grads.take(v).expect("leaf gradient"))
            .collect();
        Ok(Step {
            loss: loss_value,
            logits,
            grads,
            batch_stats: rec.batch_stats,
            final_sparsity,
        })
    }

    /// Folds one batch's statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        if stats.len() != self.norms.len() {
            return Err(Error::dim("update_running_stats", self.norms.len(), stats.len()));
        }
        let momentum = self.config.bn_momentum;
        for (bn, s) in self.norms.iter_mut().zip(stats) {
            bn.update(s, momentum);
        }
        Ok(())
    }

    pub fn orbit_consistent(&self) -> bool {
        self.banks.iter().all(FilterBank::orbit_consistent)
    }
}

/// Parameter breakdown implied by a configuration, without building the
/// network. A configuration with no layers produces no code to classify and
/// counts as empty.
pub fn count_parameters_for(config: &NetworkConfig) -> ParameterCount {
    let layers = config.num_layers();
    if layers == 0 {
        return ParameterCount {
            filters: 0,
            batchnorm: 0,
            head: 0,
            total: 0,
        };
    }
    let banks = if config.tied { 1 } else { layers };
    let filters = banks * config.num_basis * config.input[0] * config.kernel.0 * config.kernel.1;
    let batchnorm = (layers - 1) * 2 * config.num_filters();
    let head = config.num_classes * (config.feature_dim() + 1);
    ParameterCount {
        filters,
        batchnorm,
        head,
        total: filters + batchnorm + head,
    }
}

/// Max deviation between the codes of a rotated input and the predicted
/// transformation of the original codes: spatial rotation by the group
/// generator plus a cyclic shift by one slot within every orbit block.
/// Uses a plain unrolled solver (no normalization) with same padding.
pub fn equivariance_deviation(bank: &FilterBank, x: &Tensor, solver: &SolverConfig) -> Result<f64> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::dim("equivariance_deviation", "[C, H, W]", x.shape()));
    };
    if c != bank.in_channels() {
        return Err(Error::dim("equivariance_deviation", bank.in_channels(), c));
    }
    let k = bank.order();
    let image_rot = make_rotation(bank.group().angle_degrees(), (h, w))?;
    let dict = ConvDictionary {
        filters: bank.expanded(),
        padding: Padding::Same,
    };
    let z = fista_unroll(x, &dict, solver)?.pop().expect("at least one layer");
    let z_rot = fista_unroll(&image_rot.apply(x)?, &dict, solver)?
        .pop()
        .expect("at least one layer");
    let predicted_src = image_rot.apply(&z)?;
    let plane = h * w;
    let mut worst = 0.0f64;
    for slot in 0..bank.num_filters() {
        let (i, j) = (slot / k, slot % k);
        let src = i * k + (j + k - 1) % k;
        let want = &predicted_src.data()[src * plane..(src + 1) * plane];
        let got = &z_rot.data()[slot * plane..(slot + 1) * plane];
        for (a, b) in want.iter().zip(got) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// [`equivariance_deviation`] restricted to the exact case: a quarter-turn
/// group of order 4, an odd kernel and a square input.
pub fn check_r90_equivariance(bank: &FilterBank, x: &Tensor, solver: &SolverConfig) -> Result<f64> {
    if bank.order() != 4 || bank.group().generator().kind() != RotationKind::QuarterTurn {
        return Err(Error::arg(
            "check_r90_equivariance",
            "bank must use the quarter-turn group of order 4",
        ));
    }
    let (kh, kw) = bank.kernel();
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::arg(
            "check_r90_equivariance",
            "same padding is symmetric only for odd kernels",
        ));
    }
    if x.rank() != 3 || x.shape()[1] != x.shape()[2] {
        return Err(Error::dim("check_r90_equivariance", "[C, n, n]", x.shape()));
    }
    equivariance_deviation(bank, x, solver)
}

#[cfg(test)]
mod tests;
