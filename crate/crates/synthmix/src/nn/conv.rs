//! 2D convolution as im2col plus GEMM, with the matching scatter-add
//! backward. Zero padding, square kernels, batch size one.

use ndarray::{Array2, Array3, ArrayView2};

use super::{Feat, Float};

/// Static shape of one convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.k) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.k) / self.stride + 1;
        (oh, ow)
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.k * self.k
    }
}

/// Unfold the input into a (in_ch*k*k, out_h*out_w) matrix. Out-of-image
/// taps read as zero.
pub fn im2col<F: Float>(shape: &ConvShape, x: &Feat<F>) -> Array2<F> {
    let (c, h, w) = x.dim();
    debug_assert_eq!(c, shape.in_ch);
    let (oh, ow) = shape.out_hw(h, w);
    let n = oh * ow;
    let mut cols = Array2::<F>::zeros((shape.patch_len(), n));
    let xs = x.as_slice().expect("input must be contiguous");
    let cs = cols.as_slice_mut().unwrap();
    let (k, s, p) = (shape.k, shape.stride, shape.pad);
    for ci in 0..shape.in_ch {
        let x_plane = &xs[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * n;
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    let dst = &mut cs[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        continue; // stays zero
                    }
                    let x_row = &x_plane[iy as usize * w..(iy as usize + 1) * w];
                    if s == 1 {
                        // Contiguous segment: ix = ox + kx - p.
                        let off = kx as isize - p as isize;
                        let ox_lo = (-off).max(0) as usize;
                        let ox_hi = ((w as isize - off).min(ow as isize)).max(0) as usize;
                        if ox_lo < ox_hi {
                            dst[ox_lo..ox_hi].copy_from_slice(
                                &x_row[(ox_lo as isize + off) as usize
                                    ..(ox_hi as isize + off) as usize],
                            );
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = x_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold a column-gradient matrix back onto the input grid (scatter-add).
pub fn col2im<F: Float>(
    shape: &ConvShape,
    dcols: &ArrayView2<F>,
    h: usize,
    w: usize,
) -> Feat<F> {
    let (oh, ow) = shape.out_hw(h, w);
    let n = oh * ow;
    let mut dx = Array3::<F>::zeros((shape.in_ch, h, w));
    let ds = dx.as_slice_mut().unwrap();
    let dc = dcols.as_slice().expect("dcols must be contiguous");
    let (k, s, p) = (shape.k, shape.stride, shape.pad);
    for ci in 0..shape.in_ch {
        let plane = ci * h * w;
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * n;
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &dc[row + oy * ow..row + (oy + 1) * ow];
                    let dst_row = plane + iy as usize * w;
                    if s == 1 {
                        let off = kx as isize - p as isize;
                        let ox_lo = (-off).max(0) as usize;
                        let ox_hi = ((w as isize - off).min(ow as isize)).max(0) as usize;
                        if ox_lo < ox_hi {
                            let dst_lo = (ox_lo as isize + off) as usize;
                            let dst = &mut ds[dst_row + dst_lo..dst_row + dst_lo + (ox_hi - ox_lo)];
                            for (d, &g) in dst.iter_mut().zip(&src[ox_lo..ox_hi]) {
                                *d = *d + g;
                            }
                        }
                    } else {
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                ds[dst_row + ix as usize] = ds[dst_row + ix as usize] + g;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use ndarray::Array3;

    fn rand_feat(c: usize, h: usize, w: usize, rng: &mut StreamRng) -> Feat<f64> {
        Array3::from_shape_simple_fn((c, h, w), || rng.uniform_in(-1.0, 1.0))
    }

    // Direct convolution, the slow reference.
    fn conv_reference(shape: &ConvShape, x: &Feat<f64>, wgt: &ndarray::Array4<f64>) -> Feat<f64> {
        let (_, h, w) = x.dim();
        let (oh, ow) = shape.out_hw(h, w);
        let mut out = Array3::zeros((shape.out_ch, oh, ow));
        for co in 0..shape.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..shape.in_ch {
                        for ky in 0..shape.k {
                            for kx in 0..shape.k {
                                let iy = (oy * shape.stride + ky) as isize - shape.pad as isize;
                                let ix = (ox * shape.stride + kx) as isize - shape.pad as isize;
                                if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                                    acc += x[(ci, iy as usize, ix as usize)]
                                        * wgt[(co, ci, ky, kx)];
                                }
                            }
                        }
                    }
                    out[(co, oy, ox)] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_direct_convolution() {
        let mut rng = StreamRng::new(3, 80);
        for &(in_ch, out_ch, k, stride, pad, h, w) in &[
            (1usize, 2usize, 3usize, 1usize, 1usize, 6usize, 7usize),
            (2, 3, 3, 2, 1, 8, 8),
            (3, 2, 4, 2, 1, 8, 10),
            (2, 2, 7, 1, 3, 9, 9),
            (2, 1, 1, 1, 0, 5, 5),
        ] {
            let shape = ConvShape {
                in_ch,
                out_ch,
                k,
                stride,
                pad,
            };
            let x = rand_feat(in_ch, h, w, &mut rng);
            let wgt = ndarray::Array4::from_shape_simple_fn((out_ch, in_ch, k, k), || {
                rng.uniform_in(-1.0, 1.0)
            });
            let cols = im2col(&shape, &x);
            let wmat = wgt
                .view()
                .into_shape_with_order((out_ch, in_ch * k * k))
                .unwrap()
                .to_owned();
            let out_mat = wmat.dot(&cols);
            let (oh, ow) = shape.out_hw(h, w);
            let got = out_mat.into_shape_with_order((out_ch, oh, ow)).unwrap();
            let want = conv_reference(&shape, &x, &wgt);
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        let mut rng = StreamRng::new(4, 81);
        let shape = ConvShape {
            in_ch: 2,
            out_ch: 1,
            k: 3,
            stride: 2,
            pad: 1,
        };
        let (h, w) = (9, 7);
        let x = rand_feat(2, h, w, &mut rng);
        let cols = im2col(&shape, &x);
        let y = Array2::from_shape_simple_fn(cols.dim(), || rng.uniform_in(-1.0, 1.0));
        let lhs: f64 = cols.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let folded = col2im(&shape, &y.view(), h, w);
        let rhs: f64 = x.iter().zip(folded.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
