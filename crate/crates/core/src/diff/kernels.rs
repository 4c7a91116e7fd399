//! Dense f64 kernels backing the tape primitives.
//!
//! All loops are plain and sequential so results are bit-reproducible; the
//! matmul uses an ikj ordering that the compiler vectorizes well enough for
//! the scene sizes this crate targets.

/// out[m x n] += a[m x k] * b[k x n]
pub fn matmul_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// out[m x n] += a^T * b where a is [k x m], b is [k x n]
pub fn matmul_at_b_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for l in 0..k {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * n..(l + 1) * n];
        for i in 0..m {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// out[m x n] += a * b^T where a is [m x k], b is [n x k]
pub fn matmul_a_bt_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for l in 0..k {
                s += arow[l] * brow[l];
            }
            orow[j] += s;
        }
    }
}

pub fn conv_out_size(h: usize, k: usize, stride: usize, pad: usize) -> usize {
    (h + 2 * pad - k) / stride + 1
}

/// Unrolls `x` (c,h,w) into columns of shape (c*kh*kw, ho*wo), zero padded.
pub fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    cols: &mut [f64],
) {
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(w, kw, stride, pad);
    debug_assert_eq!(cols.len(), c * kh * kw * ho * wo);
    cols.fill(0.0);
    let plane = h * w;
    let ncol = ho * wo;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * ncol;
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = ci * plane + iy as usize * w;
                    let dst = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[dst + ox] = x[src + ix as usize];
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-adds columns back into an image (c,h,w).
pub fn col2im_acc(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    x: &mut [f64],
) {
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(w, kw, stride, pad);
    debug_assert_eq!(cols.len(), c * kh * kw * ho * wo);
    debug_assert_eq!(x.len(), c * h * w);
    let plane = h * w;
    let ncol = ho * wo;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * ncol;
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = ci * plane + iy as usize * w;
                    let src = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[dst + ix as usize] += cols[src + ox];
                    }
                }
            }
        }
    }
}

/// Depthwise separable correlation with the same 1D kernel along both axes,
/// zero padded to keep the spatial size ("same" mode). `flip` selects the
/// adjoint (kernel reversed), which differs only for asymmetric kernels.
pub fn separable_filter_same(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    flip: bool,
    out: &mut [f64],
) {
    let k = kernel.len();
    let half = k / 2;
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(out.len(), c * h * w);
    let mut tmp = vec![0.0; h * w];
    let tap = |i: usize| -> f64 {
        if flip {
            kernel[k - 1 - i]
        } else {
            kernel[i]
        }
    };
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        // horizontal
        for y in 0..h {
            for xx in 0..w {
                let mut s = 0.0;
                for i in 0..k {
                    let sx = xx as isize + i as isize - half as isize;
                    if sx >= 0 && (sx as usize) < w {
                        s += tap(i) * plane[y * w + sx as usize];
                    }
                }
                tmp[y * w + xx] = s;
            }
        }
        // vertical
        let oplane = &mut out[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut s = 0.0;
                for i in 0..k {
                    let sy = y as isize + i as isize - half as isize;
                    if sy >= 0 && (sy as usize) < h {
                        s += tap(i) * tmp[sy as usize * w + xx];
                    }
                }
                oplane[y * w + xx] = s;
            }
        }
    }
}

/// Normalized 1D Gaussian taps, length `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as isize;
    let mut k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as isize - half;
            (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = [1.0, 2.0, 3.0, 4.0]; // 2x2
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut out = [0.0; 4];
        matmul_acc(2, 2, 2, &a, &b, &mut out);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn im2col_identity_kernel() {
        // 1x1 kernel, stride 1, no pad: columns equal the image
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut cols = [0.0; 4];
        im2col(&x, 1, 2, 2, 1, 1, 1, 0, &mut cols);
        assert_eq!(cols, x);
    }

    #[test]
    fn col2im_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random-ish data
        let c = 2;
        let (h, w, kh, kw, s, p) = (5, 4, 3, 3, 2, 1);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let ho = conv_out_size(h, kh, s, p);
        let wo = conv_out_size(w, kw, s, p);
        let ncols = c * kh * kw * ho * wo;
        let y: Vec<f64> = (0..ncols).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; ncols];
        im2col(&x, c, h, w, kh, kw, s, p, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut xt = vec![0.0; c * h * w];
        col2im_acc(&y, c, h, w, kh, kw, s, p, &mut xt);
        let rhs: f64 = xt.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gaussian_kernel_normalized() {
        let k = gaussian_kernel(11, 1.5);
        let s: f64 = k.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!((k[5] - k.iter().cloned().fold(0.0, f64::max)).abs() < 1e-15);
    }
}
