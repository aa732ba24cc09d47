//! Convolution and matrix-multiply kernels.
//!
//! Convolution lowers to one batched im2col followed by a single GEMM; the
//! column matrix is `[C*k*k, N*Ho*Wo]` so small spatial maps still produce
//! one reasonably sized product.

use super::array::NdArray;
use crate::error::{Error, Result};

/// Supported square kernel sizes.
pub const KERNEL_SIZES: [usize; 4] = [1, 3, 5, 7];

/// `c = a * b (+ c)` in row-major layout. `a_t` means `a` is stored as `[k, m]`;
/// `b_t` means `b` is stored as `[n, k]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: bounds asserted above; strides describe dense row-major views
    // of the slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn infer(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 {
            return Err(Error::shape("conv2d", format!("input must be [N,C,H,W], got {input:?}")));
        }
        if kernel.len() != 4 {
            return Err(Error::shape("conv2d", format!("kernel must be [Co,C,k,k], got {kernel:?}")));
        }
        let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
        let (co, ci, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if ci != c {
            return Err(Error::shape(
                "conv2d",
                format!("dimension 1 (channels): input has {c}, kernel expects {ci}"),
            ));
        }
        if kh != kw {
            return Err(Error::shape("conv2d", format!("dimension 3: kernel is {kh}x{kw}, must be square")));
        }
        if !KERNEL_SIZES.contains(&kh) {
            return Err(Error::shape("conv2d", format!("dimension 2: kernel size {kh} not in {KERNEL_SIZES:?}")));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        if h + 2 * padding < kh || w + 2 * padding < kh {
            return Err(Error::shape(
                "conv2d",
                format!("dimension 2/3: padded input {}x{} smaller than kernel {kh}", h + 2 * padding, w + 2 * padding),
            ));
        }
        Ok(Self {
            batch: n,
            in_channels: c,
            height: h,
            width: w,
            out_channels: co,
            kernel: kh,
            stride,
            padding,
            out_height: (h + 2 * padding - kh) / stride + 1,
            out_width: (w + 2 * padding - kh) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.batch * self.out_height * self.out_width
    }
}

fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut col = vec![0.0; rows * cols];
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let plane = g.height * g.width;
    let out_plane = g.out_height * g.out_width;
    for c in 0..g.in_channels {
        for ki in 0..k {
            for kj in 0..k {
                let r = (c * k + ki) * k + kj;
                let dst_row = &mut col[r * cols..(r + 1) * cols];
                for n in 0..g.batch {
                    let src = &x[(n * g.in_channels + c) * plane..][..plane];
                    for oh in 0..g.out_height {
                        let ih = (oh * s + ki) as isize - p;
                        if ih < 0 || ih >= g.height as isize {
                            continue;
                        }
                        let src_row = &src[ih as usize * g.width..][..g.width];
                        let dst = &mut dst_row[n * out_plane + oh * g.out_width..][..g.out_width];
                        for (ow, d) in dst.iter_mut().enumerate() {
                            let iw = (ow * s + kj) as isize - p;
                            if iw >= 0 && iw < g.width as isize {
                                *d = src_row[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let cols = g.col_cols();
    let mut x = vec![0.0; g.batch * g.in_channels * g.height * g.width];
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let plane = g.height * g.width;
    let out_plane = g.out_height * g.out_width;
    for c in 0..g.in_channels {
        for ki in 0..k {
            for kj in 0..k {
                let r = (c * k + ki) * k + kj;
                let src_row = &col[r * cols..(r + 1) * cols];
                for n in 0..g.batch {
                    let dst = &mut x[(n * g.in_channels + c) * plane..][..plane];
                    for oh in 0..g.out_height {
                        let ih = (oh * s + ki) as isize - p;
                        if ih < 0 || ih >= g.height as isize {
                            continue;
                        }
                        let src = &src_row[n * out_plane + oh * g.out_width..][..g.out_width];
                        let dst_row = &mut dst[ih as usize * g.width..][..g.width];
                        for (ow, v) in src.iter().enumerate() {
                            let iw = (ow * s + kj) as isize - p;
                            if iw >= 0 && iw < g.width as isize {
                                dst_row[iw as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[Co, N*P]` -> `[N, Co, P]`.
fn channels_to_batch_major(y: &[f64], co: usize, n: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; co * n * plane];
    for o in 0..co {
        for b in 0..n {
            out[(b * co + o) * plane..][..plane].copy_from_slice(&y[o * n * plane + b * plane..][..plane]);
        }
    }
    out
}

/// `[N, Co, P]` -> `[Co, N*P]`.
fn batch_to_channels_major(y: &[f64], co: usize, n: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; co * n * plane];
    for b in 0..n {
        for o in 0..co {
            out[o * n * plane + b * plane..][..plane].copy_from_slice(&y[(b * co + o) * plane..][..plane]);
        }
    }
    out
}

/// Cross-correlation of `input` `[N,C,H,W]` with `kernel` `[Co,C,k,k]`.
pub fn conv2d(input: &NdArray, kernel: &NdArray, stride: usize, padding: usize) -> Result<NdArray> {
    let g = ConvGeometry::infer(input.shape(), kernel.shape(), stride, padding)?;
    Ok(conv2d_forward(input.data(), kernel.data(), &g))
}

pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], g: &ConvGeometry) -> NdArray {
    let col = im2col(x, g);
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut y = vec![0.0; g.out_channels * cols];
    gemm(g.out_channels, rows, cols, w, false, &col, false, &mut y, false);
    let plane = g.out_height * g.out_width;
    NdArray::from_vec(
        &[g.batch, g.out_channels, g.out_height, g.out_width],
        channels_to_batch_major(&y, g.out_channels, g.batch, plane),
    )
}

/// Gradients of a convolution with respect to its input and kernel.
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    g: &ConvGeometry,
    need_input: bool,
    need_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let plane = g.out_height * g.out_width;
    let gy = batch_to_channels_major(grad_out, g.out_channels, g.batch, plane);
    let gw = need_kernel.then(|| {
        let col = im2col(x, g);
        let mut gw = vec![0.0; g.out_channels * rows];
        gemm(g.out_channels, cols, rows, &gy, false, &col, true, &mut gw, false);
        gw
    });
    let gx = need_input.then(|| {
        let mut gcol = vec![0.0; rows * cols];
        gemm(rows, g.out_channels, cols, w, true, &gy, false, &mut gcol, false);
        col2im(&gcol, g)
    });
    (gx, gw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, false);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }

    #[test]
    fn identity_scaled_kernel() {
        let x = NdArray::ones(&[1, 1, 3, 3]);
        let w = NdArray::from_vec(&[1, 1, 1, 1], vec![2.0]);
        let y = conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn size_preserving_padding() {
        let x = NdArray::ones(&[1, 1, 4, 4]);
        for (k, p) in [(3, 1), (5, 2), (7, 3)] {
            let w = NdArray::ones(&[1, 1, k, k]);
            assert_eq!(conv2d(&x, &w, 1, p).unwrap().shape(), &[1, 1, 4, 4]);
        }
        let w = NdArray::ones(&[2, 1, 3, 3]);
        assert_eq!(conv2d(&x, &w, 2, 1).unwrap().shape(), &[1, 2, 2, 2]);
    }

    #[test]
    fn mismatch_names_dimension() {
        let x = NdArray::ones(&[1, 3, 4, 4]);
        let w = NdArray::ones(&[2, 4, 3, 3]);
        let err = conv2d(&x, &w, 1, 1).unwrap_err().to_string();
        assert!(err.contains("dimension 1"), "{err}");
        let w = NdArray::ones(&[2, 3, 4, 4]);
        assert!(conv2d(&x, &w, 1, 1).is_err());
    }
}
