//! Direct 3D cross-correlation and its adjoints.

use alloc::format;

use super::for_each_chunk;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Geometry of a 3D convolution `(N, C_in, D, H, W) -> (N, C_out, D', H', W')`
/// with a cubic kernel of side `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
}

impl ConvGeom {
    pub fn new(
        n: usize,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        in_dims: [usize; 3],
    ) -> Result<Self> {
        if k == 0 || stride == 0 {
            return Err(Error::ShapeMismatch(format!("kernel {k} and stride {stride} must be positive")));
        }
        let mut out_dims = [0; 3];
        for (o, &i) in out_dims.iter_mut().zip(&in_dims) {
            let span = i + 2 * pad;
            if span < k {
                return Err(Error::NonPositiveOutputExtent(format!(
                    "input extent {i} with padding {pad} is smaller than kernel {k}"
                )));
            }
            *o = (span - k) / stride + 1;
        }
        Ok(Self { n, c_in, c_out, k, stride, pad, in_dims, out_dims })
    }

    /// Geometry of the forward convolution whose input-adjoint is a transposed
    /// convolution taking `(N, c_in_t, dims_t)` to `(N, c_out_t, (d-1)s - 2p + k)`.
    pub fn transposed(
        n: usize,
        c_in_t: usize,
        c_out_t: usize,
        k: usize,
        stride: usize,
        pad: usize,
        dims_t: [usize; 3],
    ) -> Result<Self> {
        if k == 0 || stride == 0 {
            return Err(Error::ShapeMismatch(format!("kernel {k} and stride {stride} must be positive")));
        }
        let mut big = [0; 3];
        for (b, &d) in big.iter_mut().zip(&dims_t) {
            let full = (d.max(1) - 1) * stride + k;
            if d == 0 || full <= 2 * pad {
                return Err(Error::NonPositiveOutputExtent(format!(
                    "transposed convolution of extent {d} collapses"
                )));
            }
            *b = full - 2 * pad;
        }
        let g = Self::new(n, c_out_t, c_in_t, k, stride, pad, big)?;
        debug_assert_eq!(g.out_dims, dims_t);
        Ok(g)
    }

    #[inline]
    pub fn in_len(&self) -> usize {
        self.in_dims.iter().product()
    }

    #[inline]
    pub fn out_len(&self) -> usize {
        self.out_dims.iter().product()
    }

    #[inline]
    pub fn taps(&self) -> usize {
        self.k * self.k * self.k
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.taps()
    }
}

/// Output positions `o` in `[lo, hi)` with `0 <= o*stride + shift < in_len`.
#[inline]
fn valid(out_len: usize, in_len: usize, stride: usize, shift: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
    let last = in_len as isize - 1 - shift;
    if last < 0 {
        return (0, 0);
    }
    let hi = ((last / s) + 1).min(out_len as isize);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// Visits every (kernel tap, output row) pair touching valid input, passing
/// the tap index, output row offset, input row offset and valid column span.
#[inline]
fn for_each_row(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let [id, ih, iw] = g.in_dims;
    let [od, oh, ow] = g.out_dims;
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    for kd in 0..k {
        let (d0, d1) = valid(od, id, s, kd as isize - p);
        for kh in 0..k {
            let (h0, h1) = valid(oh, ih, s, kh as isize - p);
            for kw in 0..k {
                let shift = kw as isize - p;
                let (w0, w1) = valid(ow, iw, s, shift);
                if w0 == w1 {
                    continue;
                }
                let tap = (kd * k + kh) * k + kw;
                let in_col = (w0 as isize * s as isize + shift) as usize;
                for o_d in d0..d1 {
                    let i_d = (o_d as isize * s as isize + kd as isize - p) as usize;
                    for o_h in h0..h1 {
                        let i_h = (o_h as isize * s as isize + kh as isize - p) as usize;
                        f(tap, (o_d * oh + o_h) * ow + w0, (i_d * ih + i_h) * iw + in_col, w1 - w0, s);
                    }
                }
            }
        }
    }
}

/// `out = bias + W ⋆ input`. `out` is fully overwritten.
pub fn conv3d_forward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let (isz, osz, taps) = (g.in_len(), g.out_len(), g.taps());
    debug_assert_eq!(input.len(), g.n * g.c_in * isz);
    debug_assert_eq!(out.len(), g.n * g.c_out * osz);
    for_each_chunk(out, osz, |idx, o| {
        let (n, co) = (idx / g.c_out, idx % g.c_out);
        o.fill(bias.map_or(T::zero(), |b| b[co]));
        for ci in 0..g.c_in {
            let x = &input[(n * g.c_in + ci) * isz..][..isz];
            let w = &weight[(co * g.c_in + ci) * taps..][..taps];
            for_each_row(g, |tap, o_off, i_off, len, s| {
                let wv = w[tap];
                let orow = &mut o[o_off..o_off + len];
                if s == 1 {
                    for (ov, &xv) in orow.iter_mut().zip(&x[i_off..i_off + len]) {
                        *ov += wv * xv;
                    }
                } else {
                    for (j, ov) in orow.iter_mut().enumerate() {
                        *ov += wv * x[i_off + j * s];
                    }
                }
            });
        }
    });
}

/// Input adjoint: `grad_in = Wᵀ ⋆ grad_out`. `grad_in` is fully overwritten.
/// This is also the forward pass of a transposed convolution.
pub fn conv3d_backward_input<T: Real>(g: &ConvGeom, grad_out: &[T], weight: &[T], grad_in: &mut [T]) {
    let (isz, osz, taps) = (g.in_len(), g.out_len(), g.taps());
    debug_assert_eq!(grad_in.len(), g.n * g.c_in * isz);
    debug_assert_eq!(grad_out.len(), g.n * g.c_out * osz);
    for_each_chunk(grad_in, isz, |idx, gi| {
        let (n, ci) = (idx / g.c_in, idx % g.c_in);
        gi.fill(T::zero());
        for co in 0..g.c_out {
            let go = &grad_out[(n * g.c_out + co) * osz..][..osz];
            let w = &weight[(co * g.c_in + ci) * taps..][..taps];
            for_each_row(g, |tap, o_off, i_off, len, s| {
                let wv = w[tap];
                let grow = &go[o_off..o_off + len];
                if s == 1 {
                    for (iv, &gv) in gi[i_off..i_off + len].iter_mut().zip(grow) {
                        *iv += wv * gv;
                    }
                } else {
                    for (j, &gv) in grow.iter().enumerate() {
                        gi[i_off + j * s] += wv * gv;
                    }
                }
            });
        }
    });
}

/// Weight gradient `dW[co, ci, tap] = Σ grad_out[n, co, o] · input[n, ci, o·s + tap − p]`.
/// `grad_w` is fully overwritten.
pub fn conv3d_backward_weight<T: Real>(g: &ConvGeom, input: &[T], grad_out: &[T], grad_w: &mut [T]) {
    let (isz, osz, taps) = (g.in_len(), g.out_len(), g.taps());
    debug_assert_eq!(grad_w.len(), g.weight_len());
    for_each_chunk(grad_w, g.c_in * taps, |co, gw| {
        gw.fill(T::zero());
        for n in 0..g.n {
            let go = &grad_out[(n * g.c_out + co) * osz..][..osz];
            for ci in 0..g.c_in {
                let x = &input[(n * g.c_in + ci) * isz..][..isz];
                let gwc = &mut gw[ci * taps..][..taps];
                for_each_row(g, |tap, o_off, i_off, len, s| {
                    let grow = &go[o_off..o_off + len];
                    let acc: T = if s == 1 {
                        grow.iter().zip(&x[i_off..i_off + len]).map(|(&a, &b)| a * b).sum()
                    } else {
                        grow.iter().enumerate().map(|(j, &a)| a * x[i_off + j * s]).sum()
                    };
                    gwc[tap] += acc;
                });
            }
        }
    });
}

/// Bias gradient: sum of `grad_out` over batch and space per output channel.
pub fn conv3d_backward_bias<T: Real>(g: &ConvGeom, grad_out: &[T], grad_b: &mut [T]) {
    let osz = g.out_len();
    for (co, gb) in grad_b.iter_mut().enumerate() {
        *gb = (0..g.n)
            .map(|n| grad_out[(n * g.c_out + co) * osz..][..osz].iter().copied().sum::<T>())
            .sum();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn valid_ranges() {
        // in 4, stride 1, shift -1 (pad 1, tap 0): o=0 maps to -1 → start at 1
        assert_eq!(valid(4, 4, 1, -1), (1, 4));
        assert_eq!(valid(4, 4, 1, 1), (0, 3));
        // stride 2, pad 1, tap 0: o*2-1 in [0,4) → o in {1}
        assert_eq!(valid(2, 4, 2, -1), (1, 2));
        assert_eq!(valid(3, 2, 1, 5), (0, 0));
    }

    #[test]
    fn output_extent_formula() {
        let g = ConvGeom::new(1, 2, 3, 3, 2, 1, [4, 5, 7]).unwrap();
        assert_eq!(g.out_dims, [2, 3, 4]);
        assert!(matches!(
            ConvGeom::new(1, 1, 1, 5, 1, 0, [3, 3, 3]),
            Err(Error::NonPositiveOutputExtent(_))
        ));
    }

    #[test]
    fn transposed_geometry_doubles() {
        let g = ConvGeom::transposed(1, 4, 2, 2, 2, 0, [3, 4, 5]).unwrap();
        assert_eq!(g.in_dims, [6, 8, 10]);
        assert_eq!((g.c_in, g.c_out), (2, 4));
    }

    #[test]
    fn scalar_product() {
        let g = ConvGeom::new(1, 1, 1, 1, 1, 0, [1, 1, 1]).unwrap();
        let mut out = vec![0.0f64];
        conv3d_forward(&g, &[2.0], &[3.0], Some(&[0.0]), &mut out);
        assert_eq!(out, vec![6.0]);
    }
}
