//! Linear rotation operators on filter grids and the cyclic groups they
//! generate.
//!
//! Positive angles rotate counter-clockwise as the grid is displayed (row 0
//! on top), about the grid center `((h-1)/2, (w-1)/2)`. Multiples of 90° on a
//! square grid are exact pixel permutations; everything else is bilinear
//! resampling with zero fill outside the source grid. Every operator is
//! stored as a sparse table `target -> [(source, weight)]`, which makes the
//! adjoint an exact transpose.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{conv2d_correlate, Padding, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RotationKind {
    /// Lossless permutation (angle a multiple of 90°, square grid).
    QuarterTurn,
    /// Bilinear interpolation, zero outside the grid.
    Bilinear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotationOperator {
    angle_degrees: f64,
    grid: (usize, usize),
    kind: RotationKind,
    // CSR layout: entries offsets[t]..offsets[t+1] feed target pixel t.
    offsets: Vec<usize>,
    sources: Vec<u32>,
    weights: Vec<f64>,
}

fn validate(angle_degrees: f64, grid: (usize, usize)) -> Result<()> {
    if !(0.0..360.0).contains(&angle_degrees) {
        return Err(Error::arg(
            "make_rotation",
            alloc::format!("angle {angle_degrees} outside [0, 360)"),
        ));
    }
    if grid.0 == 0 || grid.1 == 0 {
        return Err(Error::arg("make_rotation", "grid extents must be positive"));
    }
    Ok(())
}

/// Builds the rotation by `angle_degrees` on an `h x w` grid, choosing the
/// exact permutation whenever the angle is a multiple of 90° and `h == w`.
pub fn make_rotation(angle_degrees: f64, grid: (usize, usize)) -> Result<RotationOperator> {
    validate(angle_degrees, grid)?;
    let quarter = [0.0, 90.0, 180.0, 270.0].iter().position(|&a| a == angle_degrees);
    match quarter {
        Some(turns) if grid.0 == grid.1 => Ok(RotationOperator::quarter_turns(turns, grid.0)),
        _ => RotationOperator::bilinear(angle_degrees, grid),
    }
}

impl RotationOperator {
    pub fn identity(grid: (usize, usize)) -> Self {
        let n = grid.0 * grid.1;
        RotationOperator {
            angle_degrees: 0.0,
            grid,
            kind: if grid.0 == grid.1 {
                RotationKind::QuarterTurn
            } else {
                RotationKind::Bilinear
            },
            offsets: (0..=n).collect(),
            sources: (0..n as u32).collect(),
            weights: vec![1.0; n],
        }
    }

    fn quarter_turns(turns: usize, n: usize) -> Self {
        let mut sources = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                let (sr, sc) = match turns % 4 {
                    0 => (r, c),
                    1 => (c, n - 1 - r),
                    2 => (n - 1 - r, n - 1 - c),
                    _ => (n - 1 - c, r),
                };
                sources.push((sr * n + sc) as u32);
            }
        }
        RotationOperator {
            angle_degrees: 90.0 * turns as f64,
            grid: (n, n),
            kind: RotationKind::QuarterTurn,
            offsets: (0..=n * n).collect(),
            sources,
            weights: vec![1.0; n * n],
        }
    }

    /// Bilinear rotation regardless of angle (used where the interpolated
    /// path is wanted even at multiples of 90°).
    pub fn bilinear(angle_degrees: f64, grid: (usize, usize)) -> Result<Self> {
        validate(angle_degrees, grid)?;
        let (h, w) = grid;
        let theta = angle_degrees.to_radians();
        let (sin, cos) = (libm::sin(theta), libm::cos(theta));
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let mut offsets = Vec::with_capacity(h * w + 1);
        let mut sources = Vec::with_capacity(4 * h * w);
        let mut weights = Vec::with_capacity(4 * h * w);
        offsets.push(0);
        for r in 0..h {
            for c in 0..w {
                // target point in y-up coordinates, rotated back by -theta
                let xt = c as f64 - cx;
                let yt = cy - r as f64;
                let xs = cos * xt + sin * yt;
                let ys = -sin * xt + cos * yt;
                let (sr, sc) = (cy - ys, cx + xs);
                let (r0, c0) = (libm::floor(sr), libm::floor(sc));
                let (fr, fc) = (sr - r0, sc - c0);
                for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
                    for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                        let (rr, cc) = (r0 as i64 + dr, c0 as i64 + dc);
                        let weight = wr * wc;
                        if weight != 0.0 && rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                            sources.push((rr as usize * w + cc as usize) as u32);
                            weights.push(weight);
                        }
                    }
                }
                offsets.push(sources.len());
            }
        }
        Ok(RotationOperator {
            angle_degrees,
            grid,
            kind: RotationKind::Bilinear,
            offsets,
            sources,
            weights,
        })
    }

    pub fn angle_degrees(&self) -> f64 {
        self.angle_degrees
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn kind(&self) -> RotationKind {
        self.kind
    }

    fn pixels(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Weights feeding target pixel `t`, as `(source, weight)` pairs.
    pub fn coefficients(&self, t: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[t]..self.offsets[t + 1];
        self.sources[span.clone()]
            .iter()
            .zip(&self.weights[span])
            .map(|(&s, &w)| (s as usize, w))
    }

    pub(crate) fn apply_slice(&self, src: &[f64], dst: &mut [f64]) {
        for (t, out) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (s, w) in self.coefficients(t) {
                acc += w * src[s];
            }
            *out = acc;
        }
    }

    pub(crate) fn adjoint_add_slice(&self, src: &[f64], dst: &mut [f64]) {
        for (t, &g) in src.iter().enumerate() {
            for (s, w) in self.coefficients(t) {
                dst[s] += w * g;
            }
        }
    }

    fn check_grid(&self, t: &Tensor, op: &'static str) -> Result<()> {
        let s = t.shape();
        if s.len() < 2 || (s[s.len() - 2], s[s.len() - 1]) != self.grid {
            return Err(Error::dim(
                op,
                alloc::format!("[..., {}, {}]", self.grid.0, self.grid.1),
                s,
            ));
        }
        Ok(())
    }

    /// Rotates every trailing `h x w` plane of `t` independently.
    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        self.check_grid(t, "rotation apply")?;
        let n = self.pixels();
        let mut out = Tensor::zeros(t.shape());
        for (src, dst) in t.data().chunks(n).zip(out.data_mut().chunks_mut(n)) {
            self.apply_slice(src, dst);
        }
        Ok(out)
    }

    /// Transpose of [`apply`](Self::apply).
    pub fn apply_adjoint(&self, t: &Tensor) -> Result<Tensor> {
        self.check_grid(t, "rotation apply_adjoint")?;
        let n = self.pixels();
        let mut out = Tensor::zeros(t.shape());
        for (src, dst) in t.data().chunks(n).zip(out.data_mut().chunks_mut(n)) {
            self.adjoint_add_slice(src, dst);
        }
        Ok(out)
    }

    /// The operator `self ∘ inner` (apply `inner` first).
    pub fn compose(&self, inner: &RotationOperator) -> Result<RotationOperator> {
        if self.grid != inner.grid {
            return Err(Error::dim("rotation compose", self.grid, inner.grid));
        }
        let n = self.pixels();
        let mut acc = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut sources = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for t in 0..n {
            for (mid, w1) in self.coefficients(t) {
                for (s, w2) in inner.coefficients(mid) {
                    if acc[s] == 0.0 && !touched.contains(&s) {
                        touched.push(s);
                    }
                    acc[s] += w1 * w2;
                }
            }
            touched.sort_unstable();
            for &s in &touched {
                if acc[s] != 0.0 {
                    sources.push(s as u32);
                    weights.push(acc[s]);
                }
                acc[s] = 0.0;
            }
            touched.clear();
            offsets.push(sources.len());
        }
        let kind = if self.kind == RotationKind::QuarterTurn && inner.kind == RotationKind::QuarterTurn {
            RotationKind::QuarterTurn
        } else {
            RotationKind::Bilinear
        };
        Ok(RotationOperator {
            angle_degrees: (self.angle_degrees + inner.angle_degrees) % 360.0,
            grid: self.grid,
            kind,
            offsets,
            sources,
            weights,
        })
    }

    /// Dense `[h*w, h*w]` matrix of the operator.
    pub fn to_dense(&self) -> Tensor {
        let n = self.pixels();
        let mut m = Tensor::zeros(&[n, n]);
        for t in 0..n {
            for (s, w) in self.coefficients(t) {
                m.data_mut()[t * n + s] += w;
            }
        }
        m
    }
}

/// `{e, g, g², …, g^(k-1)}` for a rotation generator `g` with `k·θ = 360°`.
#[derive(Clone, Debug, PartialEq)]
pub struct CyclicGroup {
    elements: Vec<RotationOperator>,
}

impl CyclicGroup {
    /// The group of order `k` generated by rotation through `360/k` degrees.
    pub fn new(order: usize, grid: (usize, usize)) -> Result<Self> {
        if order == 0 {
            return Err(Error::arg("CyclicGroup::new", "order must be positive"));
        }
        let generator = make_rotation(360.0 / order as f64, grid).or_else(|_| {
            // order 1 yields 360°, which is the identity
            if order == 1 {
                Ok(RotationOperator::identity(grid))
            } else {
                Err(Error::arg("CyclicGroup::new", "invalid grid"))
            }
        })?;
        Self::from_generator(generator, order)
    }

    pub fn from_generator(generator: RotationOperator, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::arg("CyclicGroup", "order must be positive"));
        }
        let total = generator.angle_degrees() * order as f64;
        let closes = if order == 1 {
            generator.angle_degrees() == 0.0
        } else {
            (total - 360.0).abs() <= 1e-9
        };
        if !closes {
            return Err(Error::arg(
                "CyclicGroup",
                alloc::format!("{order} x {}° does not close to 360°", generator.angle_degrees()),
            ));
        }
        let grid = generator.grid();
        let mut elements = Vec::with_capacity(order);
        elements.push(RotationOperator::identity(grid));
        for i in 1..order {
            let next = generator.compose(&elements[i - 1])?;
            elements.push(next);
        }
        Ok(CyclicGroup { elements })
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn generator(&self) -> &RotationOperator {
        self.elements.get(1).unwrap_or(&self.elements[0])
    }

    pub fn angle_degrees(&self) -> f64 {
        360.0 / self.order() as f64
    }

    pub fn grid(&self) -> (usize, usize) {
        self.elements[0].grid()
    }

    /// `g^i`; element 0 is the identity.
    pub fn element(&self, i: usize) -> &RotationOperator {
        &self.elements[i % self.order()]
    }

    pub fn elements(&self) -> &[RotationOperator] {
        &self.elements
    }

    pub fn is_exact(&self) -> bool {
        self.elements.iter().all(|e| e.kind() == RotationKind::QuarterTurn)
    }
}

/// Maximum deviation between `R(x) ⋆ h` and `R(x ⋆ R⁻¹(h))`, both computed
/// with "same" zero padding. `x` is `[C, H, W]`, `h` is `[C_out, C, kh, kw]`
/// and `op` acts on the `H x W` grid. Zero up to roundoff for quarter turns
/// on square inputs with odd kernels.
pub fn check_conv_rotation_relation(x: &Tensor, h: &Tensor, op: &RotationOperator) -> Result<f64> {
    let kernel = match h.shape() {
        [_, _, kh, kw] => (*kh, *kw),
        s => return Err(Error::dim("check_conv_rotation_relation", "[C_out, C, kh, kw]", s)),
    };
    let inverse_angle = (360.0 - op.angle_degrees()) % 360.0;
    let inverse = match op.kind() {
        RotationKind::QuarterTurn => make_rotation(inverse_angle, kernel)?,
        RotationKind::Bilinear => RotationOperator::bilinear(inverse_angle, kernel)?,
    };
    let lhs = conv2d_correlate(&op.apply(x)?, h, Padding::Same)?;
    let rhs = op.apply(&conv2d_correlate(x, &inverse.apply(h)?, Padding::Same)?)?;
    lhs.max_abs_diff(&rhs)
}
