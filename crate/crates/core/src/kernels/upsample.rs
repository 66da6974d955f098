//! Trilinear upsampling by an integer factor (half-pixel centers, edges clamped).

use alloc::vec::Vec;

use crate::tensor::Real;

/// Per-output-index interpolation taps along one axis: `(i0, i1, t)` meaning
/// `(1 - t)·x[i0] + t·x[i1]`.
pub fn axis_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    let f = factor as f64;
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / f - 0.5).max(0.0);
            let i0 = (num_traits::Float::floor(src) as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

struct Taps<T> {
    z: Vec<(usize, usize, T)>,
    y: Vec<(usize, usize, T)>,
    x: Vec<(usize, usize, T)>,
}

fn taps<T: Real>(dims: [usize; 3], factor: usize) -> Taps<T> {
    let conv = |v: Vec<(usize, usize, f64)>| v.into_iter().map(|(a, b, t)| (a, b, T::from_f64(t))).collect();
    Taps {
        z: conv(axis_taps(dims[0], factor)),
        y: conv(axis_taps(dims[1], factor)),
        x: conv(axis_taps(dims[2], factor)),
    }
}

pub fn upsample_forward<T: Real>(planes: usize, dims: [usize; 3], factor: usize, input: &[T], out: &mut [T]) {
    let [d, h, w] = dims;
    let (oh, ow) = (h * factor, w * factor);
    let isz = d * h * w;
    let osz = isz * factor * factor * factor;
    let t = taps::<T>(dims, factor);
    let one = T::one();
    for p in 0..planes {
        let x = &input[p * isz..][..isz];
        let o = &mut out[p * osz..][..osz];
        for (zo, &(z0, z1, tz)) in t.z.iter().enumerate() {
            for (yo, &(y0, y1, ty)) in t.y.iter().enumerate() {
                let r00 = (z0 * h + y0) * w;
                let r01 = (z0 * h + y1) * w;
                let r10 = (z1 * h + y0) * w;
                let r11 = (z1 * h + y1) * w;
                let orow = &mut o[(zo * oh + yo) * ow..][..ow];
                for (ov, &(x0, x1, tx)) in orow.iter_mut().zip(&t.x) {
                    let lerp = |r: usize| x[r + x0] * (one - tx) + x[r + x1] * tx;
                    let a = lerp(r00) * (one - ty) + lerp(r01) * ty;
                    let b = lerp(r10) * (one - ty) + lerp(r11) * ty;
                    *ov = a * (one - tz) + b * tz;
                }
            }
        }
    }
}

/// Adjoint of [`upsample_forward`]; accumulates into `grad_in`.
pub fn upsample_backward<T: Real>(planes: usize, dims: [usize; 3], factor: usize, grad_out: &[T], grad_in: &mut [T]) {
    let [d, h, w] = dims;
    let (oh, ow) = (h * factor, w * factor);
    let isz = d * h * w;
    let osz = isz * factor * factor * factor;
    let t = taps::<T>(dims, factor);
    let one = T::one();
    for p in 0..planes {
        let go = &grad_out[p * osz..][..osz];
        let gi = &mut grad_in[p * isz..][..isz];
        for (zo, &(z0, z1, tz)) in t.z.iter().enumerate() {
            for (yo, &(y0, y1, ty)) in t.y.iter().enumerate() {
                let rows = [
                    ((z0 * h + y0) * w, (one - tz) * (one - ty)),
                    ((z0 * h + y1) * w, (one - tz) * ty),
                    ((z1 * h + y0) * w, tz * (one - ty)),
                    ((z1 * h + y1) * w, tz * ty),
                ];
                let grow = &go[(zo * oh + yo) * ow..][..ow];
                for (&g, &(x0, x1, tx)) in grow.iter().zip(&t.x) {
                    for &(r, wzy) in &rows {
                        gi[r + x0] += g * wzy * (one - tx);
                        gi[r + x1] += g * wzy * tx;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_two_taps() {
        let t = axis_taps(2, 2);
        // sources: -0.25→0 (clamped), 0.25, 0.75, 1.25→i0 clamped to 1
        assert_eq!(t[0], (0, 1, 0.0));
        assert_eq!(t[1], (0, 1, 0.25));
        assert_eq!(t[2], (0, 1, 0.75));
        assert_eq!(t[3].0, 1);
        assert_eq!(t[3].1, 1);
    }
}
