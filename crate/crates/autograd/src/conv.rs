//! 2-D convolution kernels (NCHW, square kernels, symmetric zero padding).
//!
//! The three functions are the three bilinear maps of one trilinear form
//! `<conv(x, w), g>`, so each one's derivatives are expressed through the
//! other two. A transposed ("up") convolution is `conv_input_grad` with the
//! roles of the small and large feature maps swapped.

use crate::float::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Geometry of a strided convolution from a `c_in × h × w` map.
    pub fn down(
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        assert!(stride >= 1 && kernel >= 1);
        assert!(
            h + 2 * pad >= kernel && w + 2 * pad >= kernel,
            "kernel larger than padded input"
        );
        Self {
            c_in,
            h_in: h,
            w_in: w,
            c_out,
            h_out: (h + 2 * pad - kernel) / stride + 1,
            w_out: (w + 2 * pad - kernel) / stride + 1,
            kernel,
            stride,
            pad,
        }
    }

    /// Geometry of an up-convolution taking a `c_small × h × w` map to
    /// `c_big × ((h-1)·stride - 2·pad + kernel) × …`.
    ///
    /// Expressed as the adjoint of a down convolution, so `c_in`/`h_in`/`w_in`
    /// describe the large output and `c_out`/`h_out`/`w_out` the small input.
    pub fn up(
        c_small: usize,
        h: usize,
        w: usize,
        c_big: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let big_h = (h - 1) * stride + kernel - 2 * pad;
        let big_w = (w - 1) * stride + kernel - 2 * pad;
        let g = Self::down(c_big, big_h, big_w, c_small, kernel, stride, pad);
        debug_assert_eq!((g.h_out, g.w_out), (h, w));
        g
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kernel, self.kernel]
    }

    pub fn in_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.c_in, self.h_in, self.w_in]
    }

    pub fn out_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.c_out, self.h_out, self.w_out]
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    fn in_len(&self) -> usize {
        self.c_in * self.h_in * self.w_in
    }

    fn out_len(&self) -> usize {
        self.c_out * self.positions()
    }
}

fn im2col<T: Float>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let p = g.positions();
    let k = g.kernel;
    for ci in 0..g.c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * p;
                for oy in 0..g.h_out {
                    let dst = &mut col[row + oy * g.w_out..row + (oy + 1) * g.w_out];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h_in as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * g.h_in + iy as usize) * g.w_in..][..g.w_in];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix >= 0 && ix < g.w_in as isize {
                            src[ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(g: &ConvGeom, col: &[T], x: &mut [T]) {
    let p = g.positions();
    let k = g.kernel;
    for ci in 0..g.c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * p;
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h_in as isize {
                        continue;
                    }
                    let src = &col[row + oy * g.w_out..row + (oy + 1) * g.w_out];
                    let dst = &mut x[(ci * g.h_in + iy as usize) * g.w_in..][..g.w_in];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w_in as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `y = conv(x, w)` for a batch; `x` is `[B, c_in, h_in, w_in]`, `w` is `[c_out, c_in, k, k]`.
pub fn conv_forward<T: Float>(g: &ConvGeom, batch: usize, x: &[T], w: &[T]) -> Vec<T> {
    assert_eq!(x.len(), batch * g.in_len());
    assert_eq!(w.len(), g.c_out * g.col_rows());
    let (kr, p) = (g.col_rows(), g.positions());
    let mut col = vec![T::zero(); kr * p];
    let mut y = vec![T::zero(); batch * g.out_len()];
    for b in 0..batch {
        im2col(g, &x[b * g.in_len()..(b + 1) * g.in_len()], &mut col);
        let yb = &mut y[b * g.out_len()..(b + 1) * g.out_len()];
        // SAFETY: w is c_out×kr, col is kr×p, yb is c_out×p, all contiguous.
        unsafe {
            T::gemm(
                g.c_out,
                kr,
                p,
                T::one(),
                w.as_ptr(),
                kr as isize,
                1,
                col.as_ptr(),
                p as isize,
                1,
                T::zero(),
                yb.as_mut_ptr(),
                p as isize,
                1,
            );
        }
    }
    y
}

/// Adjoint of `conv_forward` in `x`: maps `[B, c_out, h_out, w_out]` to `[B, c_in, h_in, w_in]`.
pub fn conv_input_grad<T: Float>(g: &ConvGeom, batch: usize, gy: &[T], w: &[T]) -> Vec<T> {
    assert_eq!(gy.len(), batch * g.out_len());
    assert_eq!(w.len(), g.c_out * g.col_rows());
    let (kr, p) = (g.col_rows(), g.positions());
    let mut col = vec![T::zero(); kr * p];
    let mut dx = vec![T::zero(); batch * g.in_len()];
    for b in 0..batch {
        let gb = &gy[b * g.out_len()..(b + 1) * g.out_len()];
        // SAFETY: wᵀ is kr×c_out (column-major view of w), gb is c_out×p, col is kr×p.
        unsafe {
            T::gemm(
                kr,
                g.c_out,
                p,
                T::one(),
                w.as_ptr(),
                1,
                kr as isize,
                gb.as_ptr(),
                p as isize,
                1,
                T::zero(),
                col.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        col2im(g, &col, &mut dx[b * g.in_len()..(b + 1) * g.in_len()]);
    }
    dx
}

/// Adjoint of `conv_forward` in `w`: `[c_out, c_in, k, k]` from input and output-side maps.
pub fn conv_weight_grad<T: Float>(g: &ConvGeom, batch: usize, x: &[T], gy: &[T]) -> Vec<T> {
    assert_eq!(x.len(), batch * g.in_len());
    assert_eq!(gy.len(), batch * g.out_len());
    let (kr, p) = (g.col_rows(), g.positions());
    let mut col = vec![T::zero(); kr * p];
    let mut dw = vec![T::zero(); g.c_out * kr];
    for b in 0..batch {
        im2col(g, &x[b * g.in_len()..(b + 1) * g.in_len()], &mut col);
        let gb = &gy[b * g.out_len()..(b + 1) * g.out_len()];
        // SAFETY: gb is c_out×p, colᵀ is p×kr (column-major view of col), dw is c_out×kr.
        unsafe {
            T::gemm(
                g.c_out,
                p,
                kr,
                T::one(),
                gb.as_ptr(),
                p as isize,
                1,
                col.as_ptr(),
                1,
                p as isize,
                T::one(),
                dw.as_mut_ptr(),
                kr as isize,
                1,
            );
        }
    }
    dw
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution.
    fn naive(g: &ConvGeom, batch: usize, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; batch * g.c_out * g.h_out * g.w_out];
        for b in 0..batch {
            for co in 0..g.c_out {
                for oy in 0..g.h_out {
                    for ox in 0..g.w_out {
                        let mut acc = 0.0;
                        for ci in 0..g.c_in {
                            for ky in 0..g.kernel {
                                for kx in 0..g.kernel {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= g.h_in as isize
                                        || ix >= g.w_in as isize
                                    {
                                        continue;
                                    }
                                    acc += x[((b * g.c_in + ci) * g.h_in + iy as usize) * g.w_in
                                        + ix as usize]
                                        * w[((co * g.c_in + ci) * g.kernel + ky) * g.kernel + kx];
                                }
                            }
                        }
                        y[((b * g.c_out + co) * g.h_out + oy) * g.w_out + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn seq(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + seed) * 0.7311).sin()).collect()
    }

    #[test]
    fn forward_matches_naive_loops() {
        let g = ConvGeom::down(3, 7, 9, 4, 4, 2, 1);
        let x = seq(2 * 3 * 7 * 9, 0.3);
        let w = seq(4 * 3 * 16, 1.1);
        let y = conv_forward(&g, 2, &x, &w);
        let r = naive(&g, 2, &x, &w);
        for (a, b) in y.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identities_hold() {
        let g = ConvGeom::down(2, 6, 10, 3, 4, 2, 1);
        let x = seq(2 * g.in_len(), 0.1);
        let w = seq(g.c_out * g.col_rows(), 2.0);
        let gy = seq(2 * g.out_len(), 5.0);
        let y = conv_forward(&g, 2, &x, &w);
        let lhs: f64 = y.iter().zip(&gy).map(|(a, b)| a * b).sum();
        let dx = conv_input_grad(&g, 2, &gy, &w);
        let via_x: f64 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
        let dw = conv_weight_grad(&g, 2, &x, &gy);
        let via_w: f64 = dw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
    }

    #[test]
    fn up_geometry_doubles() {
        let mut h = 3;
        let mut w = 5;
        for _ in 0..4 {
            let g = ConvGeom::up(8, h, w, 4, 4, 2, 1);
            h = g.h_in;
            w = g.w_in;
        }
        assert_eq!((h, w), (48, 80));
    }
}
