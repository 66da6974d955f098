//! Non-overlapping max pooling.

use crate::tensor::Real;

/// Max over each `k³` block of every `(D, H, W)` plane. `argmax` receives the
/// within-plane flat input index of each winner; ties go to the lowest index.
pub fn maxpool_forward<T: Real>(
    planes: usize,
    dims: [usize; 3],
    k: usize,
    input: &[T],
    out: &mut [T],
    argmax: &mut [usize],
) {
    let [d, h, w] = dims;
    let [od, oh, ow] = [d / k, h / k, w / k];
    let (isz, osz) = (d * h * w, od * oh * ow);
    for p in 0..planes {
        let x = &input[p * isz..][..isz];
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for dz in 0..k {
                        for dy in 0..k {
                            let row = ((z * k + dz) * h + (y * k + dy)) * w + xo * k;
                            for dx in 0..k {
                                let v = x[row + dx];
                                // strict comparison keeps the lowest flat index on ties
                                if v > best || best_i == usize::MAX {
                                    best = v;
                                    best_i = row + dx;
                                }
                            }
                        }
                    }
                    let o = p * osz + (z * oh + y) * ow + xo;
                    out[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
    }
}

/// Routes each output gradient to its recorded argmax.
pub fn maxpool_backward<T: Real>(
    planes: usize,
    in_len: usize,
    out_len: usize,
    argmax: &[usize],
    grad_out: &[T],
    grad_in: &mut [T],
) {
    for p in 0..planes {
        for o in 0..out_len {
            grad_in[p * in_len + argmax[p * out_len + o]] += grad_out[p * out_len + o];
        }
    }
}
