//! im2col-backed 2-D convolution kernels shared by the graph ops.

use ndarray::{Array2, Array3, ArrayView3};

/// Output spatial size for one axis.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize, dilation: usize) -> usize {
    let span = dilation * (kernel - 1) + 1;
    assert!(
        input + 2 * pad >= span,
        "convolution span {span} exceeds padded input {}",
        input + 2 * pad
    );
    (input + 2 * pad - span) / stride + 1
}

/// Unfold `x` (C,H,W) into a (C*kh*kw, Ho*Wo) matrix. Out-of-bounds taps read
/// zero (implicit zero padding).
pub fn im2col(
    x: ArrayView3<f64>,
    kernel: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
) -> Array2<f64> {
    let (c_in, h, w) = x.dim();
    let ho = conv_out_size(h, kernel, stride, pad, dilation);
    let wo = conv_out_size(w, kernel, stride, pad, dilation);
    let mut cols = Array2::<f64>::zeros((c_in * kernel * kernel, ho * wo));
    for c in 0..c_in {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let mut dst = cols.row_mut(row);
                for oi in 0..ho {
                    let iy = (oi * stride + ki * dilation) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let ix = (oj * stride + kj * dilation) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dst[oi * wo + oj] = x[(c, iy as usize, ix as usize)];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add column gradients back onto the input.
pub fn col2im_accumulate(
    dcols: &Array2<f64>,
    dx: &mut Array3<f64>,
    kernel: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
    out_hw: (usize, usize),
) {
    let (c_in, h, w) = dx.dim();
    let (ho, wo) = out_hw;
    debug_assert_eq!(dcols.dim(), (c_in * kernel * kernel, ho * wo));
    for c in 0..c_in {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let src = dcols.row(row);
                for oi in 0..ho {
                    let iy = (oi * stride + ki * dilation) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let ix = (oj * stride + kj * dilation) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[(c, iy as usize, ix as usize)] += src[oi * wo + oj];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    /// Direct nested-loop convolution used as the oracle for the im2col path.
    pub fn conv2d_scalar(
        x: &Array3<f64>,
        w: &ndarray::Array4<f64>,
        b: &[f64],
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> Array3<f64> {
        let (c_in, h, win) = x.dim();
        let (c_out, c_in2, kh, kw) = w.dim();
        assert_eq!(c_in, c_in2);
        let ho = conv_out_size(h, kh, stride, pad, dilation);
        let wo = conv_out_size(win, kw, stride, pad, dilation);
        let mut y = Array3::<f64>::zeros((c_out, ho, wo));
        for co in 0..c_out {
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..c_in {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (oi * stride + ki * dilation) as isize - pad as isize;
                                let ix = (oj * stride + kj * dilation) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= win as isize {
                                    continue;
                                }
                                acc += x[(ci, iy as usize, ix as usize)] * w[(co, ci, ki, kj)];
                            }
                        }
                    }
                    y[(co, oi, oj)] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn im2col_matches_scalar_conv() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for &(c_in, c_out, hw, k, stride, dilation) in &[
            (2usize, 3usize, 6usize, 3usize, 1usize, 1usize),
            (3, 2, 8, 3, 2, 1),
            (2, 2, 8, 3, 1, 3),
            (1, 4, 9, 7, 1, 1),
            (3, 1, 5, 1, 1, 1),
            (2, 2, 4, 3, 1, 7),
        ] {
            let pad = dilation * (k - 1) / 2;
            let x = Array3::from_shape_fn((c_in, hw, hw), |_| rng.gen_range(-1.0..1.0));
            let w = ndarray::Array4::from_shape_fn((c_out, c_in, k, k), |_| rng.gen_range(-1.0..1.0));
            let b: Vec<f64> = (0..c_out).map(|_| rng.gen_range(-0.5..0.5)).collect();

            let oracle = conv2d_scalar(&x, &w, &b, stride, pad, dilation);

            let cols = im2col(x.view(), k, stride, pad, dilation);
            let w2 = w.view().into_shape_with_order((c_out, c_in * k * k)).unwrap();
            let mut y2 = w2.dot(&cols);
            for (co, mut row) in y2.rows_mut().into_iter().enumerate() {
                row += b[co];
            }
            let (ho, wo) = (oracle.dim().1, oracle.dim().2);
            let y = y2.into_shape_with_order((c_out, ho, wo)).unwrap();

            let max_err = (&y - &oracle).iter().fold(0.0f64, |m, d| m.max(d.abs()));
            assert!(max_err < 1e-12, "im2col conv deviates from scalar oracle: {max_err}");
        }
    }
}
