use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::sparse_coding::SolverConfig;
use crate::tensor::Padding;

/// How each layer applies its dictionary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Correlation / transposed convolution with small filters.
    Conv { padding: Padding },
    /// Full-image atoms acting on the flattened input.
    Dense,
}

/// Where batch normalization sits relative to the unrolled recurrence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BnPlacement {
    /// The next step consumes the normalized code.
    InRecurrence,
    /// The recurrence runs on raw codes; normalized copies are only observed.
    TapOff,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Model {
    Baseline,
    R90,
    R60,
    DenseBaseline,
    DenseR90,
    DenseR60,
}

impl Model {
    pub const ALL: [Model; 6] = [
        Model::Baseline,
        Model::R90,
        Model::R60,
        Model::DenseBaseline,
        Model::DenseR90,
        Model::DenseR60,
    ];

    /// Number of rotations in the cyclic group.
    pub fn order(self) -> usize {
        match self {
            Model::Baseline | Model::DenseBaseline => 1,
            Model::R90 | Model::DenseR90 => 4,
            Model::R60 | Model::DenseR60 => 6,
        }
    }

    pub fn is_dense(self) -> bool {
        matches!(self, Model::DenseBaseline | Model::DenseR90 | Model::DenseR60)
    }

    pub fn name(self) -> &'static str {
        match self {
            Model::Baseline => "baseline",
            Model::R90 => "r90",
            Model::R60 => "r60",
            Model::DenseBaseline => "dense-baseline",
            Model::DenseR90 => "dense-r90",
            Model::DenseR60 => "dense-r60",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Model::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::arg(
                "Model",
                "expected one of baseline, r90, r60, dense-baseline, dense-r90, dense-r60",
            )
        })
    }
}

/// Input geometry of the two image families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Geometry {
    /// 1×28×28, 7×7 filters.
    Mnist,
    /// 3×32×32, 8×8 filters.
    Cifar,
}

impl Geometry {
    pub fn input(self) -> [usize; 3] {
        match self {
            Geometry::Mnist => [1, 28, 28],
            Geometry::Cifar => [3, 32, 32],
        }
    }

    pub fn kernel(self) -> usize {
        match self {
            Geometry::Mnist => 7,
            Geometry::Cifar => 8,
        }
    }
}

/// Expanded filters per convolutional layer.
pub const CONV_FILTERS: usize = 60;
/// Target atom count for dense layers; `m = round(DENSE_ATOMS / k)`.
pub const DENSE_ATOMS: usize = 256;
/// Side of the pooling grid in front of the classifier of the presets.
pub const DEFAULT_POOL_GRID: usize = 4;
/// First-layer gain of the presets. With `λ = 0.5`, `α = 0.01` and pixels in
/// `[0, 1]`, unit-gain filters give `|αWᵀx| ≪ λ` and the first code is
/// identically zero.
pub const DEFAULT_FIRST_LAYER_GAIN: f64 = 160.0;

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub mode: Mode,
    /// `[C, H, W]`.
    pub input: [usize; 3],
    pub kernel: (usize, usize),
    pub num_basis: usize,
    pub order: usize,
    pub solver: SolverConfig,
    pub tied: bool,
    pub bn_placement: BnPlacement,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Side of the adaptive average-pooling grid in front of the classifier;
    /// 1 is global average pooling. Ignored in dense mode.
    pub pool_grid: usize,
    pub num_classes: usize,
    /// Basis filters start as `N(0, init_gain² / fan_in)`.
    pub init_gain: f64,
    /// Gain for the first layer's bank in untied networks. That layer starts
    /// from `z = 0` and only applies `αWᵀx`, so its scale alone decides how
    /// much of the input survives the threshold and has no bearing on the
    /// stability of the recurrence.
    pub first_layer_gain: f64,
}

impl NetworkConfig {
    pub fn preset(model: Model, geometry: Geometry) -> Self {
        let input = geometry.input();
        let k = model.order();
        let (mode, kernel, num_basis) = if model.is_dense() {
            let m = (DENSE_ATOMS + k / 2) / k;
            (Mode::Dense, (input[1], input[2]), m)
        } else {
            let n = geometry.kernel();
            (Mode::Conv { padding: Padding::Same }, (n, n), CONV_FILTERS / k)
        };
        NetworkConfig {
            mode,
            input,
            kernel,
            num_basis,
            order: k,
            solver: SolverConfig::default(),
            tied: false,
            bn_placement: BnPlacement::InRecurrence,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            pool_grid: if model.is_dense() { 1 } else { DEFAULT_POOL_GRID },
            num_classes: 10,
            init_gain: 1.0,
            first_layer_gain: DEFAULT_FIRST_LAYER_GAIN,
        }
    }

    pub fn num_filters(&self) -> usize {
        self.num_basis * self.order
    }

    pub fn num_layers(&self) -> usize {
        self.solver.num_layers
    }

    /// Spatial extent of each code map.
    pub fn code_spatial(&self) -> (usize, usize) {
        match self.mode {
            Mode::Dense => (1, 1),
            Mode::Conv { padding } => {
                let [_, h, w] = self.input;
                match padding {
                    Padding::Same => (h, w),
                    Padding::Valid => (h + 1 - self.kernel.0, w + 1 - self.kernel.1),
                }
            }
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self.mode {
            Mode::Dense => self.num_filters(),
            Mode::Conv { .. } => self.num_filters() * self.pool_grid * self.pool_grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::arg("NetworkConfig", "input extents must be positive"));
        }
        if self.num_basis == 0 || self.order == 0 || self.num_classes == 0 {
            return Err(Error::arg("NetworkConfig", "filter and class counts must be positive"));
        }
        if self.kernel.0 != self.kernel.1 && self.order > 1 {
            return Err(Error::arg("NetworkConfig", "rotated filters must be square"));
        }
        match self.mode {
            Mode::Dense if self.kernel != (h, w) => {
                return Err(Error::arg("NetworkConfig", "dense atoms must cover the whole image"));
            }
            Mode::Conv {
                padding: Padding::Valid,
            } if self.kernel.0 > h || self.kernel.1 > w => {
                return Err(Error::arg("NetworkConfig", "valid kernel larger than the input"));
            }
            _ => {}
        }
        if self.pool_grid == 0 {
            return Err(Error::arg("NetworkConfig", "pool grid must be positive"));
        }
        let (ch, cw) = self.code_spatial();
        if matches!(self.mode, Mode::Conv { .. }) && (self.pool_grid > ch || self.pool_grid > cw) {
            return Err(Error::arg("NetworkConfig", "pool grid exceeds the code map"));
        }
        if !(self.bn_eps > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::arg("NetworkConfig", "need eps > 0 and momentum in (0, 1)"));
        }
        if !(self.init_gain >= 0.0 && self.init_gain.is_finite())
            || !(self.first_layer_gain >= 0.0 && self.first_layer_gain.is_finite())
        {
            return Err(Error::arg("NetworkConfig", "init gain must be finite and non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_sixty_filters() {
        for model in [Model::Baseline, Model::R90, Model::R60] {
            for g in [Geometry::Mnist, Geometry::Cifar] {
                let cfg = NetworkConfig::preset(model, g);
                assert_eq!(cfg.num_filters(), 60);
                assert_eq!(cfg.kernel.0, g.kernel());
                cfg.validate().unwrap();
            }
        }
        assert_eq!(NetworkConfig::preset(Model::R60, Geometry::Cifar).num_basis, 10);
        assert_eq!(NetworkConfig::preset(Model::R90, Geometry::Cifar).num_basis, 15);
    }

    #[test]
    fn dense_presets() {
        let counts: [usize; 3] = [Model::DenseBaseline, Model::DenseR90, Model::DenseR60]
            .map(|m| NetworkConfig::preset(m, Geometry::Mnist).num_basis);
        assert_eq!(counts, [256, 64, 43]);
        let cfg = NetworkConfig::preset(Model::DenseR60, Geometry::Mnist);
        assert_eq!(cfg.kernel, (28, 28));
        assert_eq!(cfg.feature_dim(), 258);
        cfg.validate().unwrap();
    }

    #[test]
    fn model_names_round_trip() {
        for m in Model::ALL {
            assert_eq!(m.name().parse::<Model>().unwrap(), m);
        }
        assert!("r45".parse::<Model>().is_err());
    }
}
