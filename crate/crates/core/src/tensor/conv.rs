//! Stride-1 zero-padded 2-D cross-correlation and its exact adjoint.
//!
//! Both directions lower to GEMM through an im2col buffer. For `Same`
//! padding with an even kernel the extra row/column of padding sits on the
//! bottom/right, so `Same` always preserves the spatial extent.

use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{gemm, MatRef};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    /// Zero padding `(before, after)` along one axis for a kernel of extent `k`.
    pub fn pads(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let total = k - 1;
                (total / 2, total - total / 2)
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    pt: usize,
    pl: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn taps(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_px(&self) -> usize {
        self.ho * self.wo
    }

    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }
}

fn filter_dims(filters: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match *filters.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::dim(op, "filters [C_out, C_in, h, w]", s)),
    }
}

/// Splits `[B, C, H, W]` or `[C, H, W]` into `(batch, C, H, W, batched)`.
fn image_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize, bool)> {
    match *t.shape() {
        [b, c, h, w] => Ok((b, c, h, w, true)),
        [c, h, w] => Ok((1, c, h, w, false)),
        ref s => Err(Error::dim(op, "[B, C, H, W] or [C, H, W]", s)),
    }
}

fn forward_geometry(input: &Tensor, fdims: [usize; 4], padding: Padding, op: &'static str) -> Result<(Geometry, bool)> {
    let (batch, cin, h, w, batched) = image_dims(input, op)?;
    let [cout, fcin, kh, kw] = fdims;
    if fcin != cin {
        return Err(Error::dim(
            op,
            alloc::format!("{fcin} input channels"),
            alloc::format!("{cin} input channels"),
        ));
    }
    let (pt, pb) = padding.pads(kh);
    let (pl, pr) = padding.pads(kw);
    if kh > h + pt + pb || kw > w + pl + pr {
        return Err(Error::dim(
            op,
            alloc::format!("kernel fitting in {h}x{w} with {padding:?} padding"),
            [kh, kw],
        ));
    }
    let g = Geometry {
        batch,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        pt,
        pl,
        ho: h + pt + pb - kh + 1,
        wo: w + pl + pr - kw + 1,
    };
    Ok((g, batched))
}

fn im2col(image: &[f64], g: &Geometry, cols: &mut [f64]) {
    let px = g.out_px();
    for c in 0..g.cin {
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = ((c * g.kh + u) * g.kw + v) * px;
                let dst = &mut cols[row..row + px];
                // valid output columns for this tap: 0 <= ox + v - pl < w
                let ox_lo = g.pl.saturating_sub(v).min(g.wo);
                let ox_hi = (g.w + g.pl).saturating_sub(v).min(g.wo).max(ox_lo);
                for oy in 0..g.ho {
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = oy + u;
                    if iy < g.pt || iy - g.pt >= g.h {
                        line.fill(0.0);
                        continue;
                    }
                    let src_row = &image[(c * g.h + iy - g.pt) * g.w..][..g.w];
                    line[..ox_lo].fill(0.0);
                    line[ox_hi..].fill(0.0);
                    let ix0 = ox_lo + v - g.pl;
                    line[ox_lo..ox_hi].copy_from_slice(&src_row[ix0..ix0 + (ox_hi - ox_lo)]);
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], g: &Geometry, image: &mut [f64]) {
    let px = g.out_px();
    for c in 0..g.cin {
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = ((c * g.kh + u) * g.kw + v) * px;
                let src = &cols[row..row + px];
                let ox_lo = g.pl.saturating_sub(v).min(g.wo);
                let ox_hi = (g.w + g.pl).saturating_sub(v).min(g.wo).max(ox_lo);
                for oy in 0..g.ho {
                    let iy = oy + u;
                    if iy < g.pt || iy - g.pt >= g.h {
                        continue;
                    }
                    let dst_row = &mut image[(c * g.h + iy - g.pt) * g.w..][..g.w];
                    let ix0 = ox_lo + v - g.pl;
                    let line = &src[oy * g.wo + ox_lo..oy * g.wo + ox_hi];
                    for (d, s) in dst_row[ix0..ix0 + line.len()].iter_mut().zip(line) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input` (`[B, C_in, H, W]` or `[C_in, H, W]`) with
/// `filters: [C_out, C_in, h, w]`, summed over input channels.
pub fn conv2d_correlate(input: &Tensor, filters: &Tensor, padding: Padding) -> Result<Tensor> {
    let fdims = filter_dims(filters, "conv2d_correlate")?;
    let (g, batched) = forward_geometry(input, fdims, padding, "conv2d_correlate")?;
    let mut cols = vec![0.0; g.taps() * g.out_px()];
    let out_len = g.cout * g.out_px();
    let mut out = vec![0.0; g.batch * out_len];
    let fmat = MatRef::row_major(filters.data(), g.cout, g.taps());
    for b in 0..g.batch {
        im2col(&input.data()[b * g.in_len()..(b + 1) * g.in_len()], &g, &mut cols);
        gemm(
            1.0,
            fmat,
            MatRef::row_major(&cols, g.taps(), g.out_px()),
            0.0,
            &mut out[b * out_len..(b + 1) * out_len],
        );
    }
    let shape: Vec<usize> = if batched {
        vec![g.batch, g.cout, g.ho, g.wo]
    } else {
        vec![g.cout, g.ho, g.wo]
    };
    Tensor::new(&shape, out)
}

fn transpose_geometry(
    codes: &Tensor,
    fdims: [usize; 4],
    padding: Padding,
    op: &'static str,
) -> Result<(Geometry, bool)> {
    let (batch, cout, ho, wo, batched) = image_dims(codes, op)?;
    let [fcout, cin, kh, kw] = fdims;
    if fcout != cout {
        return Err(Error::dim(
            op,
            alloc::format!("{fcout} code channels"),
            alloc::format!("{cout} code channels"),
        ));
    }
    let (pt, pb) = padding.pads(kh);
    let (pl, pr) = padding.pads(kw);
    // invert ho = h + pt + pb - kh + 1
    let h = (ho + kh - 1).checked_sub(pt + pb).filter(|&h| h > 0);
    let w = (wo + kw - 1).checked_sub(pl + pr).filter(|&w| w > 0);
    let (Some(h), Some(w)) = (h, w) else {
        return Err(Error::dim(
            op,
            alloc::format!("code geometry consistent with {padding:?} padding"),
            [ho, wo],
        ));
    };
    let g = Geometry {
        batch,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        pt,
        pl,
        ho,
        wo,
    };
    Ok((g, batched))
}

/// Exact adjoint of [`conv2d_correlate`] with the same padding mode: maps
/// codes `[B, C_out, H', W']` back to images `[B, C_in, H, W]`.
pub fn conv2d_transpose(codes: &Tensor, filters: &Tensor, padding: Padding) -> Result<Tensor> {
    let fdims = filter_dims(filters, "conv2d_transpose")?;
    let (g, batched) = transpose_geometry(codes, fdims, padding, "conv2d_transpose")?;
    let mut cols = vec![0.0; g.taps() * g.out_px()];
    let code_len = g.cout * g.out_px();
    let mut out = vec![0.0; g.batch * g.in_len()];
    let ftrans = MatRef::row_major(filters.data(), g.cout, g.taps()).t();
    for b in 0..g.batch {
        gemm(
            1.0,
            ftrans,
            MatRef::row_major(&codes.data()[b * code_len..(b + 1) * code_len], g.cout, g.out_px()),
            0.0,
            &mut cols,
        );
        col2im_add(&cols, &g, &mut out[b * g.in_len()..(b + 1) * g.in_len()]);
    }
    let shape: Vec<usize> = if batched {
        vec![g.batch, g.cin, g.h, g.w]
    } else {
        vec![g.cin, g.h, g.w]
    };
    Tensor::new(&shape, out)
}

/// Gradient of `⟨grad_out, correlate(input, F)⟩` with respect to `F`, whose
/// shape is `[C_out, C_in, kh, kw]`. Also serves the transpose direction with
/// the roles of images and codes swapped.
pub fn conv2d_filter_grad(
    input: &Tensor,
    grad_out: &Tensor,
    kernel: (usize, usize),
    padding: Padding,
) -> Result<Tensor> {
    let (_, gcout, _, _, _) = image_dims(grad_out, "conv2d_filter_grad")?;
    let (_, cin, _, _, _) = image_dims(input, "conv2d_filter_grad")?;
    let fdims = [gcout, cin, kernel.0, kernel.1];
    let (g, _) = forward_geometry(input, fdims, padding, "conv2d_filter_grad")?;
    let expected: Vec<usize> = match grad_out.rank() {
        4 => vec![g.batch, g.cout, g.ho, g.wo],
        _ => vec![g.cout, g.ho, g.wo],
    };
    if grad_out.shape() != expected.as_slice() {
        return Err(Error::dim("conv2d_filter_grad", expected, grad_out.shape()));
    }
    let mut cols = vec![0.0; g.taps() * g.out_px()];
    let mut out = vec![0.0; g.cout * g.taps()];
    let out_len = g.cout * g.out_px();
    for b in 0..g.batch {
        im2col(&input.data()[b * g.in_len()..(b + 1) * g.in_len()], &g, &mut cols);
        gemm(
            1.0,
            MatRef::row_major(&grad_out.data()[b * out_len..(b + 1) * out_len], g.cout, g.out_px()),
            MatRef::row_major(&cols, g.taps(), g.out_px()).t(),
            if b == 0 { 0.0 } else { 1.0 },
            &mut out,
        );
    }
    Tensor::new(&fdims, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(shape: &[usize], seed: u64) -> Tensor {
        let mut s = seed ^ 0x9e37_79b9_7f4a_7c15;
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    /// Quadruple-loop reference correlation, independent of im2col.
    fn reference(x: &Tensor, f: &Tensor, padding: Padding) -> Tensor {
        let [cin, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2]];
        let [cout, _, kh, kw] = [f.shape()[0], f.shape()[1], f.shape()[2], f.shape()[3]];
        let (pt, pb) = padding.pads(kh);
        let (pl, pr) = padding.pads(kw);
        let (ho, wo) = (h + pt + pb - kh + 1, w + pl + pr - kw + 1);
        let mut out = Tensor::zeros(&[cout, ho, wo]);
        for o in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for c in 0..cin {
                        for u in 0..kh {
                            for v in 0..kw {
                                let iy = oy as isize + u as isize - pt as isize;
                                let ix = ox as isize + v as isize - pl as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    s += x.data()[(c * h + iy as usize) * w + ix as usize]
                                        * f.data()[((o * cin + c) * kh + u) * kw + v];
                                }
                            }
                        }
                    }
                    out.data_mut()[(o * ho + oy) * wo + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn zero_input_gives_zero() {
        let x = Tensor::zeros(&[1, 3, 3]);
        let f = lcg(&[1, 1, 2, 2], 1);
        assert_eq!(
            conv2d_correlate(&x, &f, Padding::Valid).unwrap(),
            Tensor::zeros(&[1, 2, 2])
        );
    }

    #[test]
    fn scalar_product() {
        let x = Tensor::new(&[1, 1, 1], alloc::vec![5.0]).unwrap();
        let f = Tensor::new(&[1, 1, 1, 1], alloc::vec![2.0]).unwrap();
        assert_eq!(conv2d_correlate(&x, &f, Padding::Valid).unwrap().data(), &[10.0]);
    }

    #[test]
    fn matches_loop_reference() {
        let x = lcg(&[1, 6, 6], 2);
        let f = lcg(&[4, 1, 3, 3], 3);
        for padding in [Padding::Valid, Padding::Same] {
            let got = conv2d_correlate(&x, &f, padding).unwrap();
            let want = reference(&x, &f, padding);
            assert!(got.max_abs_diff(&want).unwrap() <= 1e-12);
        }
        // multi-channel, even kernel, non-square
        let x = lcg(&[3, 5, 7], 4);
        let f = lcg(&[2, 3, 4, 2], 5);
        for padding in [Padding::Valid, Padding::Same] {
            let got = conv2d_correlate(&x, &f, padding).unwrap();
            assert!(got.max_abs_diff(&reference(&x, &f, padding)).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn batched_equals_per_image() {
        let x = lcg(&[3, 2, 5, 5], 6);
        let f = lcg(&[4, 2, 3, 3], 7);
        let out = conv2d_correlate(&x, &f, Padding::Same).unwrap();
        for b in 0..3 {
            let single = conv2d_correlate(&x.slice0(b), &f, Padding::Same).unwrap();
            assert_eq!(out.slice0(b), single);
        }
    }

    #[test]
    fn even_same_padding_is_bottom_right() {
        assert_eq!(Padding::Same.pads(8), (3, 4));
        assert_eq!(Padding::Same.pads(7), (3, 3));
        assert_eq!(Padding::Same.pads(1), (0, 0));
    }

    #[test]
    fn single_tap_transpose_places_filter() {
        let f = lcg(&[1, 1, 3, 2], 8);
        let z = Tensor::new(&[1, 1, 1], alloc::vec![2.5]).unwrap();
        let out = conv2d_transpose(&z, &f, Padding::Valid).unwrap();
        assert_eq!(out.shape(), &[1, 3, 2]);
        for (o, v) in out.data().iter().zip(f.data()) {
            assert_eq!(*o, 2.5 * v);
        }
    }

    #[test]
    fn transpose_of_zero_is_zero() {
        let f = lcg(&[3, 2, 3, 3], 9);
        let out = conv2d_transpose(&Tensor::zeros(&[3, 4, 4]), &f, Padding::Same).unwrap();
        assert_eq!(out, Tensor::zeros(&[2, 4, 4]));
    }

    #[test]
    fn adjoint_identity() {
        let x = lcg(&[2, 3, 7, 6], 10);
        let f = lcg(&[5, 3, 4, 3], 11);
        for padding in [Padding::Valid, Padding::Same] {
            let y = conv2d_correlate(&x, &f, padding).unwrap();
            let z = lcg(y.shape(), 12);
            let lhs = y.inner(&z).unwrap();
            let rhs = x.inner(&conv2d_transpose(&z, &f, padding).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn filter_grad_matches_inner_product_derivative() {
        let x = lcg(&[2, 2, 5, 5], 13);
        let f = lcg(&[3, 2, 3, 3], 14);
        let y = conv2d_correlate(&x, &f, Padding::Same).unwrap();
        let gout = lcg(y.shape(), 15);
        let grad = conv2d_filter_grad(&x, &gout, (3, 3), Padding::Same).unwrap();
        // linear in f, so the derivative along each basis direction is exact
        for idx in [0usize, 7, 20, 53] {
            let mut e = Tensor::zeros(f.shape());
            e.data_mut()[idx] = 1.0;
            let d = conv2d_correlate(&x, &e, Padding::Same).unwrap().inner(&gout).unwrap();
            assert!((d - grad.data()[idx]).abs() <= 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let f = Tensor::zeros(&[1, 3, 2, 2]);
        assert!(matches!(
            conv2d_correlate(&x, &f, Padding::Valid),
            Err(Error::Dimension { .. })
        ));
        let z = Tensor::zeros(&[2, 4, 4]);
        assert!(matches!(
            conv2d_transpose(&z, &f, Padding::Valid),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn oversized_valid_kernel_rejected() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let f = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(conv2d_correlate(&x, &f, Padding::Valid).is_err());
        assert!(conv2d_correlate(&x, &f, Padding::Same).is_ok());
    }
}
