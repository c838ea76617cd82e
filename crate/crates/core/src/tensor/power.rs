use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Tensor;

/// Estimate of `σ_max(AᵀA)` from [`power_iteration_sigma_max`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaEstimate {
    pub value: f64,
    /// The iteration collapsed onto the zero vector; `value` is 0.
    pub zero_operator: bool,
}

/// Power iteration on `AᵀA` given `A` and `Aᵀ` as closures over tensors of
/// shape `dim`. Returns the Rayleigh quotient of the final iterate, which for
/// a PSD operator never decreases from one iteration to the next.
pub fn power_iteration_sigma_max<F, G>(
    apply: F,
    apply_adjoint: G,
    dim: &[usize],
    iters: usize,
    seed: u64,
) -> SigmaEstimate
where
    F: Fn(&Tensor) -> Tensor,
    G: Fn(&Tensor) -> Tensor,
{
    assert!(iters >= 1, "power iteration needs at least one step");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Tensor::from_fn(dim, |_| StandardNormal.sample(&mut rng));
    let n = v.norm();
    v = v.scale(1.0 / n);
    let mut estimate = 0.0;
    for _ in 0..iters {
        let w = apply_adjoint(&apply(&v));
        let rayleigh = v.inner(&w).expect("operator must preserve shape");
        let norm = w.norm();
        if norm == 0.0 || !norm.is_finite() {
            return SigmaEstimate {
                value: 0.0,
                zero_operator: norm == 0.0,
            };
        }
        estimate = rayleigh;
        v = w.scale(1.0 / norm);
    }
    SigmaEstimate {
        value: estimate,
        zero_operator: false,
    }
}
