//! Convolution kernels (stride 1, zero padding, odd square kernels).
//!
//! Weights are laid out `(c_out, c_in, k, k)` and feature maps `(c, h, w)`.

use std::ops::Range;

/// Rows/columns of the output for which the shifted input index stays inside `[0, n)`.
#[inline]
fn valid(n: usize, shift: isize) -> Range<usize> {
    let lo = (-shift).max(0) as usize;
    let hi = (n as isize - shift).clamp(0, n as isize) as usize;
    lo..hi.max(lo)
}

#[derive(Clone, Copy)]
pub(crate) struct ConvDims {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn taps(&self) -> impl Iterator<Item = (usize, usize, isize, isize)> + '_ {
        let p = (self.k / 2) as isize;
        (0..self.k).flat_map(move |ky| (0..self.k).map(move |kx| (ky, kx, ky as isize - p, kx as isize - p)))
    }
}

/// `out[o] += sum_i x[i] (*) w[o, i]` (cross-correlation, zero padding).
pub(crate) fn conv2d_forward(x: &[f64], weights: &[f64], d: ConvDims, out: &mut [f64]) {
    let hw = d.h * d.w;
    let kk = d.k * d.k;
    for o in 0..d.cout {
        let out_o = &mut out[o * hw..(o + 1) * hw];
        for i in 0..d.cin {
            let x_i = &x[i * hw..(i + 1) * hw];
            let w_oi = &weights[(o * d.cin + i) * kk..(o * d.cin + i + 1) * kk];
            for (ky, kx, dy, dx) in d.taps() {
                let wv = w_oi[ky * d.k + kx];
                if wv == 0.0 {
                    continue;
                }
                let xs = valid(d.w, dx);
                for y in valid(d.h, dy) {
                    let src_row = (y as isize + dy) as usize * d.w;
                    let dst = &mut out_o[y * d.w + xs.start..y * d.w + xs.end];
                    let lo = (src_row as isize + xs.start as isize + dx) as usize;
                    let src = &x_i[lo..lo + xs.len()];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += wv * b;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`conv2d_forward`] in its input: `dx[i] += sum_o dy[o] (*)^T w[o, i]`.
pub(crate) fn conv2d_input_grad(dy: &[f64], weights: &[f64], d: ConvDims, dx: &mut [f64]) {
    let hw = d.h * d.w;
    let kk = d.k * d.k;
    for i in 0..d.cin {
        let dx_i = &mut dx[i * hw..(i + 1) * hw];
        for o in 0..d.cout {
            let dy_o = &dy[o * hw..(o + 1) * hw];
            let w_oi = &weights[(o * d.cin + i) * kk..(o * d.cin + i + 1) * kk];
            for (ky, kx, sy, sx) in d.taps() {
                let wv = w_oi[ky * d.k + kx];
                if wv == 0.0 {
                    continue;
                }
                let xs = valid(d.w, sx);
                for y in valid(d.h, sy) {
                    let dst_row = (y as isize + sy) as usize * d.w;
                    let lo = (dst_row as isize + xs.start as isize + sx) as usize;
                    let dst = &mut dx_i[lo..lo + xs.len()];
                    let src = &dy_o[y * d.w + xs.start..y * d.w + xs.end];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += wv * b;
                    }
                }
            }
        }
    }
}

/// Gradient of `<dy, conv(x, w)>` with respect to `w`, accumulated into `dw`.
pub(crate) fn conv2d_weight_grad(dy: &[f64], x: &[f64], d: ConvDims, dw: &mut [f64]) {
    let hw = d.h * d.w;
    let kk = d.k * d.k;
    for o in 0..d.cout {
        let dy_o = &dy[o * hw..(o + 1) * hw];
        for i in 0..d.cin {
            let x_i = &x[i * hw..(i + 1) * hw];
            let dw_oi = &mut dw[(o * d.cin + i) * kk..(o * d.cin + i + 1) * kk];
            for (ky, kx, dy_s, dx_s) in d.taps() {
                let xs = valid(d.w, dx_s);
                let mut acc = 0.0;
                for y in valid(d.h, dy_s) {
                    let src_row = (y as isize + dy_s) as usize * d.w;
                    let lo = (src_row as isize + xs.start as isize + dx_s) as usize;
                    let a = &dy_o[y * d.w + xs.start..y * d.w + xs.end];
                    let b = &x_i[lo..lo + xs.len()];
                    acc += a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
                }
                dw_oi[ky * d.k + kx] += acc;
            }
        }
    }
}
