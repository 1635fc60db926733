//! im2col / col2im for square kernels with symmetric zero padding.

use ndarray::{Array2, Array4, ArrayView4};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Geometry {
    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

/// Rows are output positions `(n, oy, ox)`, columns are `(c, ky, kx)`.
pub(crate) fn im2col<T: Scalar>(x: ArrayView4<T>, g: Geometry) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (g.out_len(h), g.out_len(w));
    let k = g.kernel;
    let cols_w = c * k * k;
    let mut cols = Array2::zeros((n * oh * ow, cols_w));
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let out = cols.as_slice_mut().expect("fresh array");
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * cols_w;
                for ch in 0..c {
                    let base = (b * c + ch) * h * w;
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            out[row + (ch * k + ky) * k + kx] = xs[base + iy as usize * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an `(n, c, h, w)` image.
pub(crate) fn col2im<T: Scalar>(cols: &Array2<T>, shape: (usize, usize, usize, usize), g: Geometry) -> Array4<T> {
    let (n, c, h, w) = shape;
    let (oh, ow) = (g.out_len(h), g.out_len(w));
    let k = g.kernel;
    let cols_w = c * k * k;
    debug_assert_eq!(cols.dim(), (n * oh * ow, cols_w));
    let mut img = Array4::zeros(shape);
    let cs = cols.as_slice().expect("standard layout");
    let out = img.as_slice_mut().expect("fresh array");
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * cols_w;
                for ch in 0..c {
                    let base = (b * c + ch) * h * w;
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            out[base + iy as usize * w + ix as usize] += cs[row + (ch * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
    img
}

/// `(n, c, h, w)` → `(n·h·w, c)`.
pub(crate) fn nchw_to_rows<T: Scalar>(x: ArrayView4<T>) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    let p = x.permuted_axes([0, 2, 3, 1]);
    let p = p.as_standard_layout().into_owned();
    p.into_shape_with_order((n * h * w, c)).expect("contiguous")
}

/// `(n·h·w, c)` → `(n, c, h, w)`.
pub(crate) fn rows_to_nchw<T: Scalar>(rows: Array2<T>, n: usize, h: usize, w: usize) -> Array4<T> {
    let c = rows.ncols();
    let rows = rows.as_standard_layout().into_owned();
    let x = rows.into_shape_with_order((n, h, w, c)).expect("contiguous");
    x.permuted_axes([0, 3, 1, 2]).as_standard_layout().into_owned()
}
