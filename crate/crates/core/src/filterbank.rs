//! Filter banks whose dictionary is the cyclic-group orbit of a small set of
//! learnable basis filters.
//!
//! The expanded bank is laid out basis-major: the `k` rotations of basis
//! filter `i` occupy slots `i·k .. i·k + k`, with slot `i·k + j` holding
//! `g^j(basis[i])`.

use alloc::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rotation::CyclicGroup;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct FilterBank {
    basis: Tensor,
    group: Arc<CyclicGroup>,
    expanded: Tensor,
}

fn basis_dims(basis: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match *basis.shape() {
        [m, c, h, w] => Ok([m, c, h, w]),
        ref s => Err(Error::dim(op, "[m, C_in, h, w]", s)),
    }
}

/// Materializes the orbit of every basis filter in the documented layout.
pub fn expand(basis: &Tensor, group: &CyclicGroup) -> Result<Tensor> {
    let [m, c, h, w] = basis_dims(basis, "expand")?;
    if group.grid() != (h, w) {
        return Err(Error::dim("expand", group.grid(), (h, w)));
    }
    let k = group.order();
    let filter_len = c * h * w;
    let mut out = Tensor::zeros(&[m * k, c, h, w]);
    for i in 0..m {
        let src = &basis.data()[i * filter_len..(i + 1) * filter_len];
        for j in 0..k {
            let slot = i * k + j;
            let dst = &mut out.data_mut()[slot * filter_len..(slot + 1) * filter_len];
            let rot = group.element(j);
            for (s, d) in src.chunks(h * w).zip(dst.chunks_mut(h * w)) {
                rot.apply_slice(s, d);
            }
        }
    }
    Ok(out)
}

/// `d/d basis[i] = Σ_j (g^j)ᵀ grad_expanded[i·k + j]`.
pub fn accumulate_basis_gradient(group: &CyclicGroup, grad_expanded: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = basis_dims(grad_expanded, "accumulate_basis_gradient")?;
    let k = group.order();
    if n % k != 0 || group.grid() != (h, w) {
        return Err(Error::dim(
            "accumulate_basis_gradient",
            alloc::format!("[multiple of {k}, C, {}, {}]", group.grid().0, group.grid().1),
            grad_expanded.shape(),
        ));
    }
    let m = n / k;
    let filter_len = c * h * w;
    let mut out = Tensor::zeros(&[m, c, h, w]);
    for i in 0..m {
        let dst = &mut out.data_mut()[i * filter_len..(i + 1) * filter_len];
        for j in 0..k {
            let slot = i * k + j;
            let src = &grad_expanded.data()[slot * filter_len..(slot + 1) * filter_len];
            let rot = group.element(j);
            for (s, d) in src.chunks(h * w).zip(dst.chunks_mut(h * w)) {
                rot.adjoint_add_slice(s, d);
            }
        }
    }
    Ok(out)
}

impl FilterBank {
    pub fn new(basis: Tensor, group: Arc<CyclicGroup>) -> Result<Self> {
        let expanded = expand(&basis, &group)?;
        Ok(FilterBank { basis, group, expanded })
    }

    /// Zero-mean Gaussian basis with standard deviation `gain / sqrt(C_in·h·w)`.
    pub fn random<R: Rng + ?Sized>(
        num_basis: usize,
        in_channels: usize,
        kernel: (usize, usize),
        group: Arc<CyclicGroup>,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = (in_channels * kernel.0 * kernel.1) as f64;
        let normal = Normal::new(0.0, gain / libm::sqrt(fan_in))
            .map_err(|_| Error::arg("FilterBank::random", "gain must be finite and non-negative"))?;
        let basis = Tensor::from_fn(&[num_basis, in_channels, kernel.0, kernel.1], |_| normal.sample(rng));
        Self::new(basis, group)
    }

    pub fn basis(&self) -> &Tensor {
        &self.basis
    }

    pub fn expanded(&self) -> &Tensor {
        &self.expanded
    }

    pub fn group(&self) -> &Arc<CyclicGroup> {
        &self.group
    }

    pub fn num_basis(&self) -> usize {
        self.basis.shape()[0]
    }

    pub fn order(&self) -> usize {
        self.group.order()
    }

    pub fn num_filters(&self) -> usize {
        self.num_basis() * self.order()
    }

    pub fn in_channels(&self) -> usize {
        self.basis.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.basis.shape()[2], self.basis.shape()[3])
    }

    /// Replaces the basis and re-expands the dictionary.
    pub fn set_basis(&mut self, basis: Tensor) -> Result<()> {
        if basis.shape() != self.basis.shape() {
            return Err(Error::dim("FilterBank::set_basis", self.basis.shape(), basis.shape()));
        }
        self.expanded = expand(&basis, &self.group)?;
        self.basis = basis;
        Ok(())
    }

    /// Mutates the basis in place, then re-expands. This is the only way to
    /// change the basis, so the expanded cache is never stale.
    pub fn update_basis(&mut self, f: impl FnOnce(&mut Tensor)) {
        let shape = self.basis.shape().to_vec();
        f(&mut self.basis);
        assert_eq!(
            self.basis.shape(),
            shape.as_slice(),
            "update_basis changed the basis shape"
        );
        self.expanded = expand(&self.basis, &self.group).expect("basis geometry validated at construction");
    }

    pub fn accumulate_basis_gradient(&self, grad_expanded: &Tensor) -> Result<Tensor> {
        if grad_expanded.shape() != self.expanded.shape() {
            return Err(Error::dim(
                "accumulate_basis_gradient",
                self.expanded.shape(),
                grad_expanded.shape(),
            ));
        }
        accumulate_basis_gradient(&self.group, grad_expanded)
    }

    /// Number of learnable scalars: `m · C_in · h · w`.
    pub fn count_trainable(&self) -> usize {
        self.basis.len()
    }

    /// Whether the cached expansion equals a fresh one bit for bit.
    pub fn orbit_consistent(&self) -> bool {
        expand(&self.basis, &self.group).is_ok_and(|e| e == self.expanded)
    }
}
