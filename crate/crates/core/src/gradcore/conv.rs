//! Same-padded, stride-1 2D convolution kernels over `[N, C, H, W]` buffers.
//!
//! Each routine walks whole rows so the innermost loop is a contiguous
//! multiply-accumulate over the valid column range of one kernel tap.

use super::tensor::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub k: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }

    /// Valid output index range `[lo, hi)` along an axis of length `len`
    /// for a tap at offset `d` from the center.
    #[inline]
    fn span(len: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d).min(len as isize).max(0) as usize;
        (lo, hi.max(lo))
    }
}

pub(crate) fn forward<T: Real>(
    dims: ConvDims,
    input: &[T],
    kernel: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let ConvDims { n, c, h, w, f, k } = dims;
    let plane = h * w;
    let pad = dims.pad();
    for ni in 0..n {
        for fi in 0..f {
            let o = &mut out[(ni * f + fi) * plane..(ni * f + fi + 1) * plane];
            o.fill(bias[fi]);
            for ci in 0..c {
                let src = &input[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                let kbase = (fi * c + ci) * k * k;
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = ConvDims::span(h, dy);
                    for kx in 0..k {
                        let wgt = kernel[kbase + ky * k + kx];
                        if wgt == T::zero() {
                            continue;
                        }
                        let dx = kx as isize - pad;
                        let (x0, x1) = ConvDims::span(w, dx);
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let orow = &mut o[y * w + x0..y * w + x1];
                            let sx0 = (x0 as isize + dx) as usize;
                            let srow = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            for (a, &b) in orow.iter_mut().zip(srow) {
                                *a = *a + wgt * b;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates the input gradient into `grad_in`.
pub(crate) fn backward_input<T: Real>(
    dims: ConvDims,
    grad_out: &[T],
    kernel: &[T],
    grad_in: &mut [T],
) {
    let ConvDims { n, c, h, w, f, k } = dims;
    let plane = h * w;
    let pad = dims.pad();
    for ni in 0..n {
        for fi in 0..f {
            let g = &grad_out[(ni * f + fi) * plane..(ni * f + fi + 1) * plane];
            for ci in 0..c {
                let dst = &mut grad_in[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                let kbase = (fi * c + ci) * k * k;
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = ConvDims::span(h, dy);
                    for kx in 0..k {
                        let wgt = kernel[kbase + ky * k + kx];
                        let dx = kx as isize - pad;
                        let (x0, x1) = ConvDims::span(w, dx);
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let grow = &g[y * w + x0..y * w + x1];
                            let drow = &mut dst[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            for (a, &b) in drow.iter_mut().zip(grow) {
                                *a = *a + wgt * b;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates kernel and bias gradients.
pub(crate) fn backward_params<T: Real>(
    dims: ConvDims,
    grad_out: &[T],
    input: &[T],
    grad_kernel: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    let ConvDims { n, c, h, w, f, k } = dims;
    let plane = h * w;
    let pad = dims.pad();
    if let Some(gb) = grad_bias {
        for ni in 0..n {
            for fi in 0..f {
                let g = &grad_out[(ni * f + fi) * plane..(ni * f + fi + 1) * plane];
                gb[fi] = gb[fi] + g.iter().copied().sum::<T>();
            }
        }
    }
    let Some(gk) = grad_kernel else {
        return;
    };
    for ni in 0..n {
        for fi in 0..f {
            let g = &grad_out[(ni * f + fi) * plane..(ni * f + fi + 1) * plane];
            for ci in 0..c {
                let src = &input[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                let kbase = (fi * c + ci) * k * k;
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = ConvDims::span(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = ConvDims::span(w, dx);
                        let sx0 = (x0 as isize + dx) as usize;
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let grow = &g[y * w + x0..y * w + x1];
                            let srow = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            acc = acc + grow.iter().zip(srow).map(|(&a, &b)| a * b).sum::<T>();
                        }
                        gk[kbase + ky * k + kx] = gk[kbase + ky * k + kx] + acc;
                    }
                }
            }
        }
    }
}
