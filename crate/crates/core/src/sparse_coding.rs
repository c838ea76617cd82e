//! Proximal-gradient sparse coding: soft thresholding, the ISTA step, its
//! residual form `S(W_z z + W_x x)`, FISTA unrolling and the lasso objective.
//!
//! # Threshold convention
//!
//! With [`ThresholdRule::Literal`] (the default) the shrinkage applied after
//! each gradient step is `S_λ` with `λ` used as given, independent of the step
//! size `α`. The fixed points of that iteration are the minimizers of
//! `½‖x − Wz‖² + (λ/α)‖z‖₁`, so verification against a lasso solver must use
//! the penalty returned by [`SolverConfig::effective_penalty`], not `λ`.
//! [`ThresholdRule::StepScaled`] is the textbook prox `S_{αλ}` whose effective
//! penalty is `λ` itself.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_correlate, conv2d_transpose, matmul, matmul_nt, power_iteration_sigma_max, Padding, SigmaEstimate, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Acceleration {
    Ista,
    Fista,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ThresholdRule {
    /// Shrink by `λ` after every step.
    Literal,
    /// Shrink by `α·λ` after every step.
    StepScaled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub num_layers: usize,
    pub acceleration: Acceleration,
    pub threshold: ThresholdRule,
}

impl Default for SolverConfig {
    /// `L = 4`, `λ = 0.5`, `α = 0.01`, FISTA.
    fn default() -> Self {
        SolverConfig {
            lambda: 0.5,
            alpha: 0.01,
            num_layers: 4,
            acceleration: Acceleration::Fista,
            threshold: ThresholdRule::Literal,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::arg("SolverConfig", "lambda must be finite and non-negative"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::arg("SolverConfig", "alpha must be finite and positive"));
        }
        if self.num_layers == 0 {
            return Err(Error::arg("SolverConfig", "at least one layer is required"));
        }
        Ok(())
    }

    /// Shrinkage applied after each gradient step.
    pub fn shrinkage(&self) -> f64 {
        match self.threshold {
            ThresholdRule::Literal => self.lambda,
            ThresholdRule::StepScaled => self.alpha * self.lambda,
        }
    }

    /// `ℓ1` penalty of the lasso problem whose minimizers are the fixed
    /// points of the configured iteration.
    pub fn effective_penalty(&self) -> f64 {
        self.shrinkage() / self.alpha
    }
}

/// FISTA step-size sequence `t_1 = 1`, `t_{l+1} = (1 + √(1 + 4 t_l²)) / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Momentum {
    t: f64,
}

impl Default for Momentum {
    fn default() -> Self {
        Momentum { t: 1.0 }
    }
}

impl Momentum {
    pub fn t(&self) -> f64 {
        self.t
    }

    /// Advances the sequence and returns the extrapolation weight
    /// `(t_l − 1) / t_{l+1}`.
    pub fn advance(&mut self) -> f64 {
        let next = (1.0 + libm::sqrt(1.0 + 4.0 * self.t * self.t)) / 2.0;
        let weight = (self.t - 1.0) / next;
        self.t = next;
        weight
    }
}

/// A linear synthesis operator `W` (code → signal) with its adjoint.
pub trait Dictionary {
    /// `Wᵀ x`.
    fn analysis(&self, x: &Tensor) -> Result<Tensor>;
    /// `W z`.
    fn synthesis(&self, z: &Tensor) -> Result<Tensor>;
}

/// Convolutional dictionary: `Wᵀ` is correlation with the filters, `W` its
/// transpose.
#[derive(Clone, Copy, Debug)]
pub struct ConvDictionary<'a> {
    pub filters: &'a Tensor,
    pub padding: Padding,
}

impl Dictionary for ConvDictionary<'_> {
    fn analysis(&self, x: &Tensor) -> Result<Tensor> {
        conv2d_correlate(x, self.filters, self.padding)
    }

    fn synthesis(&self, z: &Tensor) -> Result<Tensor> {
        conv2d_transpose(z, self.filters, self.padding)
    }
}

/// Dense dictionary whose atoms are the rows of `atoms: [N, D]`, i.e. the
/// columns of `W: [D, N]`. Signals are `[D]` or `[B, D]`; codes `[N]` or `[B, N]`.
#[derive(Clone, Debug)]
pub struct DenseDictionary {
    atoms: Tensor,
}

impl DenseDictionary {
    pub fn new(atoms: Tensor) -> Result<Self> {
        if atoms.rank() != 2 {
            return Err(Error::dim("DenseDictionary", "[N, D]", atoms.shape()));
        }
        Ok(DenseDictionary { atoms })
    }

    /// From the matrix `W: [D, N]` directly.
    pub fn from_matrix(w: &Tensor) -> Result<Self> {
        let &[d, n] = w.shape() else {
            return Err(Error::dim("DenseDictionary", "[D, N]", w.shape()));
        };
        Self::new(Tensor::from_fn(&[n, d], |i| w.data()[(i % d) * n + i / d]))
    }

    pub fn atoms(&self) -> &Tensor {
        &self.atoms
    }

    fn batched<'t>(t: &'t Tensor, width: usize, op: &'static str) -> Result<(alloc::borrow::Cow<'t, Tensor>, bool)> {
        match *t.shape() {
            [w] if w == width => Ok((alloc::borrow::Cow::Owned(t.reshape(&[1, width])?), false)),
            [_, w] if w == width => Ok((alloc::borrow::Cow::Borrowed(t), true)),
            ref s => Err(Error::dim(op, alloc::format!("[{width}] or [B, {width}]"), s)),
        }
    }

    fn unbatch(t: Tensor, batched: bool) -> Result<Tensor> {
        if batched {
            Ok(t)
        } else {
            let n = t.len();
            t.into_reshape(&[n])
        }
    }
}

impl Dictionary for DenseDictionary {
    fn analysis(&self, x: &Tensor) -> Result<Tensor> {
        let (xb, batched) = Self::batched(x, self.atoms.shape()[1], "dense analysis")?;
        Self::unbatch(matmul_nt(&xb, &self.atoms)?, batched)
    }

    fn synthesis(&self, z: &Tensor) -> Result<Tensor> {
        let (zb, batched) = Self::batched(z, self.atoms.shape()[0], "dense synthesis")?;
        Self::unbatch(matmul(&zb, &self.atoms)?, batched)
    }
}

/// `S_λ(u) = sign(u) · max(|u| − λ, 0)`, elementwise.
pub fn soft_threshold(u: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(lambda >= 0.0) {
        return Err(Error::arg("soft_threshold", "lambda must be non-negative"));
    }
    Ok(u.map(|v| {
        let mag = v.abs() - lambda;
        if mag > 0.0 {
            mag.copysign(v)
        } else {
            0.0
        }
    }))
}

/// One proximal-gradient step `S(z + α Wᵀ(x − W z))`.
pub fn ista_step(z: &Tensor, x: &Tensor, dict: &impl Dictionary, cfg: &SolverConfig) -> Result<Tensor> {
    let residual = x.sub(&dict.synthesis(z)?)?;
    let grad = dict.analysis(&residual)?;
    soft_threshold(&z.lincomb(1.0, &grad, cfg.alpha)?, cfg.shrinkage())
}

/// The same step evaluated as `S(W_z z + W_x x)` with `W_z = I − α WᵀW` and
/// `W_x = α Wᵀ`.
pub fn residual_form_step(z: &Tensor, x: &Tensor, dict: &impl Dictionary, cfg: &SolverConfig) -> Result<Tensor> {
    let gram_z = dict.analysis(&dict.synthesis(z)?)?;
    let recurrent = z.lincomb(1.0, &gram_z, -cfg.alpha)?;
    let feedforward = dict.analysis(x)?.scale(cfg.alpha);
    soft_threshold(&recurrent.add(&feedforward)?, cfg.shrinkage())
}

/// Runs `cfg.num_layers` steps from `z⁰ = 0` and returns every iterate.
/// With FISTA step `l + 1` is taken at the extrapolated point
/// `y = z⁽ˡ⁾ + ((t_l − 1)/t_{l+1})(z⁽ˡ⁾ − z⁽ˡ⁻¹⁾)` for `l ≥ 1`, one momentum
/// sequence spanning all layers; the first two steps are plain ISTA steps.
pub fn fista_unroll(x: &Tensor, dict: &impl Dictionary, cfg: &SolverConfig) -> Result<Vec<Tensor>> {
    cfg.validate()?;
    let zero = Tensor::zeros(dict.analysis(x)?.shape());
    let mut prev = zero.clone();
    let mut current = zero;
    let mut momentum = Momentum::default();
    let mut codes = Vec::with_capacity(cfg.num_layers);
    for _ in 0..cfg.num_layers {
        let y = match cfg.acceleration {
            Acceleration::Fista if !codes.is_empty() => {
                let w = momentum.advance();
                current.lincomb(1.0 + w, &prev, -w)?
            }
            _ => current.clone(),
        };
        let next = ista_step(&y, x, dict, cfg)?;
        prev = core::mem::replace(&mut current, next);
        codes.push(current.clone());
    }
    Ok(codes)
}

/// `½‖x − W z‖² + penalty · ‖z‖₁`.
pub fn lasso_objective(z: &Tensor, x: &Tensor, dict: &impl Dictionary, penalty: f64) -> Result<f64> {
    let r = x.sub(&dict.synthesis(z)?)?;
    Ok(0.5 * r.inner(&r)? + penalty * z.l1_norm())
}

/// `σ_max(WᵀW)` by power iteration on codes of shape `code_shape`.
pub fn dictionary_sigma_max(dict: &impl Dictionary, code_shape: &[usize], iters: usize, seed: u64) -> SigmaEstimate {
    power_iteration_sigma_max(
        |z| dict.synthesis(z).expect("code geometry"),
        |x| dict.analysis(x).expect("signal geometry"),
        code_shape,
        iters,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lcg(shape: &[usize], seed: u64) -> Tensor {
        let mut s = seed ^ 0x1405_7b7e_f767_814f;
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn soft_threshold_values() {
        let u = Tensor::new(&[3], alloc::vec![1.2, -0.3, -2.0]).unwrap();
        let s = soft_threshold(&u, 0.5).unwrap();
        assert!((s.data()[0] - 0.7).abs() < 1e-15);
        assert_eq!(s.data()[1], 0.0);
        assert_eq!(s.data()[2], -1.5);
        let r = lcg(&[10], 1);
        assert_eq!(soft_threshold(&r, 0.0).unwrap(), r);
        assert!(soft_threshold(&r, -0.1).is_err());
    }

    #[test]
    fn momentum_sequence_increases() {
        let mut m = Momentum::default();
        assert_eq!(m.t(), 1.0);
        let first = m.advance();
        assert_eq!(first, 0.0);
        let mut prev = m.t();
        for _ in 0..20 {
            m.advance();
            assert!(m.t() > prev);
            prev = m.t();
        }
    }

    #[test]
    fn first_step_from_zero() {
        let w = lcg(&[8, 12], 2);
        let dict = DenseDictionary::from_matrix(&w).unwrap();
        let x = lcg(&[8], 3);
        let cfg = SolverConfig {
            lambda: 0.001,
            ..SolverConfig::default()
        };
        let z = ista_step(&Tensor::zeros(&[12]), &x, &dict, &cfg).unwrap();
        let want = soft_threshold(&dict.analysis(&x).unwrap().scale(cfg.alpha), cfg.lambda).unwrap();
        assert_eq!(z, want);
    }

    #[test]
    fn orthonormal_dictionary_solves_in_one_step() {
        let eye = Tensor::from_fn(&[5, 5], |i| if i % 6 == 0 { 1.0 } else { 0.0 });
        let dict = DenseDictionary::from_matrix(&eye).unwrap();
        let x = lcg(&[5], 4).scale(4.0);
        let cfg = SolverConfig {
            alpha: 1.0,
            lambda: 0.5,
            ..SolverConfig::default()
        };
        let z = ista_step(&Tensor::zeros(&[5]), &x, &dict, &cfg).unwrap();
        assert_eq!(z, soft_threshold(&x, 0.5).unwrap());
    }

    #[test]
    fn residual_form_matches_ista() {
        let w = lcg(&[8, 12], 5);
        let dict = DenseDictionary::from_matrix(&w).unwrap();
        let x = lcg(&[8], 6);
        let cfg = SolverConfig {
            alpha: 0.2,
            lambda: 0.01,
            ..SolverConfig::default()
        };
        let mut za = Tensor::zeros(&[12]);
        let mut zb = za.clone();
        let first = residual_form_step(&zb, &x, &dict, &cfg).unwrap();
        let direct = soft_threshold(&dict.analysis(&x).unwrap().scale(cfg.alpha), cfg.lambda).unwrap();
        assert!(first.max_abs_diff(&direct).unwrap() <= 1e-15);
        for _ in 0..50 {
            za = ista_step(&za, &x, &dict, &cfg).unwrap();
            zb = residual_form_step(&zb, &x, &dict, &cfg).unwrap();
            assert!(za.max_abs_diff(&zb).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn single_layer_fista_is_one_ista_step() {
        let filters = lcg(&[4, 1, 3, 3], 7);
        let dict = ConvDictionary {
            filters: &filters,
            padding: Padding::Same,
        };
        let x = lcg(&[1, 6, 6], 8);
        let cfg = SolverConfig {
            num_layers: 1,
            lambda: 0.001,
            ..SolverConfig::default()
        };
        let codes = fista_unroll(&x, &dict, &cfg).unwrap();
        let step = ista_step(&Tensor::zeros(&[4, 6, 6]), &x, &dict, &cfg).unwrap();
        assert_eq!(codes.len(), 1);
        assert_eq!(codes[0], step);
    }

    #[test]
    fn zero_input_gives_zero_codes() {
        let filters = lcg(&[3, 1, 3, 3], 9);
        let dict = ConvDictionary {
            filters: &filters,
            padding: Padding::Same,
        };
        let codes = fista_unroll(&Tensor::zeros(&[1, 5, 5]), &dict, &SolverConfig::default()).unwrap();
        assert_eq!(codes.len(), 4);
        assert!(codes.iter().all(|c| c.count_zeros() == c.len()));
    }

    #[test]
    fn lasso_objective_edge_cases() {
        let w = lcg(&[4, 6], 10);
        let dict = DenseDictionary::from_matrix(&w).unwrap();
        let x = lcg(&[4], 11);
        let z0 = Tensor::zeros(&[6]);
        assert!((lasso_objective(&z0, &x, &dict, 0.3).unwrap() - 0.5 * x.inner(&x).unwrap()).abs() < 1e-15);
        assert_eq!(lasso_objective(&z0, &Tensor::zeros(&[4]), &dict, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn ista_objective_is_monotone_under_stable_step() {
        let w = lcg(&[8, 12], 12);
        let dict = DenseDictionary::from_matrix(&w).unwrap();
        let sigma = dictionary_sigma_max(&dict, &[12], 200, 0).value;
        let cfg = SolverConfig {
            alpha: 1.0 / sigma,
            lambda: 0.02,
            threshold: ThresholdRule::StepScaled,
            ..SolverConfig::default()
        };
        let x = lcg(&[8], 13);
        let mut z = Tensor::zeros(&[12]);
        let mut prev = lasso_objective(&z, &x, &dict, cfg.effective_penalty()).unwrap();
        for _ in 0..100 {
            z = ista_step(&z, &x, &dict, &cfg).unwrap();
            let obj = lasso_objective(&z, &x, &dict, cfg.effective_penalty()).unwrap();
            assert!(obj <= prev + 1e-12);
            prev = obj;
        }
    }

    /// Cyclic coordinate descent on the lasso, written directly on `W: [D, N]`.
    fn lasso_coordinate_descent(w: &Tensor, x: &Tensor, penalty: f64, sweeps: usize) -> Vec<f64> {
        let (d, n) = (w.shape()[0], w.shape()[1]);
        let col = |j: usize| (0..d).map(move |r| w.data()[r * n + j]);
        let mut z = alloc::vec![0.0; n];
        let mut r: Vec<f64> = x.data().to_vec();
        for _ in 0..sweeps {
            for j in 0..n {
                let sq: f64 = col(j).map(|v| v * v).sum();
                let rho: f64 = col(j).zip(&r).map(|(a, b)| a * b).sum::<f64>() + sq * z[j];
                let new = if rho.abs() > penalty {
                    (rho.abs() - penalty).copysign(rho) / sq
                } else {
                    0.0
                };
                for (ri, wr) in r.iter_mut().zip(col(j)) {
                    *ri -= wr * (new - z[j]);
                }
                z[j] = new;
            }
        }
        z
    }

    #[test]
    fn ista_converges_to_lasso_minimizer() {
        let w = lcg(&[8, 12], 21);
        let x = lcg(&[8], 22).scale(3.0);
        let dict = DenseDictionary::from_matrix(&w).unwrap();
        let sigma = dictionary_sigma_max(&dict, &[12], 500, 1).value;
        let penalty = 0.05;
        let configs = [
            SolverConfig {
                alpha: 1.0 / sigma,
                lambda: penalty,
                threshold: ThresholdRule::StepScaled,
                ..SolverConfig::default()
            },
            SolverConfig {
                alpha: 0.5 / sigma,
                lambda: 0.5 / sigma * penalty,
                threshold: ThresholdRule::Literal,
                ..SolverConfig::default()
            },
        ];
        let oracle = lasso_coordinate_descent(&w, &x, penalty, 5000);
        for cfg in configs {
            assert!((cfg.effective_penalty() - penalty).abs() < 1e-12);
            let mut z = Tensor::zeros(&[12]);
            for _ in 0..20_000 {
                z = ista_step(&z, &x, &dict, &cfg).unwrap();
            }
            for (a, b) in z.data().iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
            }
            let fista = fista_unroll(
                &x,
                &dict,
                &SolverConfig {
                    num_layers: 3000,
                    ..cfg
                },
            )
            .unwrap();
            let last = fista.last().unwrap();
            for (a, b) in last.data().iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-6, "fista {a} vs {b}");
            }
        }
    }

    #[test]
    fn effective_penalty_by_rule() {
        let lit = SolverConfig::default();
        assert!((lit.effective_penalty() - 50.0).abs() < 1e-12);
        let scaled = SolverConfig {
            threshold: ThresholdRule::StepScaled,
            ..lit
        };
        assert!((scaled.effective_penalty() - 0.5).abs() < 1e-15);
        assert!((scaled.shrinkage() - 0.005).abs() < 1e-15);
    }

    #[test]
    fn unit_norm_data_gives_sparse_codes() {
        let filters = lcg(&[6, 1, 3, 3], 14).scale(8.0);
        let dict = ConvDictionary {
            filters: &filters,
            padding: Padding::Same,
        };
        let x = lcg(&[1, 8, 8], 15);
        let x = x.scale(1.0 / x.norm());
        let codes = fista_unroll(&x, &dict, &SolverConfig::default()).unwrap();
        let last = codes.last().unwrap();
        assert!(last.count_zeros() > 0 && last.count_zeros() <= last.len());
    }

    proptest! {
        #[test]
        fn prox_scale_property(c in 0.01f64..10.0, lambda in 0.0f64..2.0, seed in any::<u64>()) {
            let u = lcg(&[16], seed).scale(4.0);
            let lhs = soft_threshold(&u.scale(c), c * lambda).unwrap();
            let rhs = soft_threshold(&u, lambda).unwrap().scale(c);
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12 * c.max(1.0) * 8.0);
        }

        #[test]
        fn dead_zone_is_exact(lambda in 0.0f64..2.0, seed in any::<u64>()) {
            let u = lcg(&[32], seed).scale(4.0);
            let s = soft_threshold(&u, lambda).unwrap();
            for (a, b) in u.data().iter().zip(s.data()) {
                if a.abs() <= lambda {
                    prop_assert_eq!(*b, 0.0);
                } else {
                    prop_assert!((b.abs() - (a.abs() - lambda)).abs() <= 1e-15 && b.signum() == a.signum());
                }
            }
        }
    }
}
