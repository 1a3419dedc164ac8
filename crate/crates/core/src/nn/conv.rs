//! 2-D convolution via im2col plus one large matrix multiply.

use ndarray::{Array2, Array4, ArrayD, ArrayView4, Axis, Ix4};
use rayon::prelude::*;

use super::{BackwardFn, GradStore, Graph, VarId};

/// Output spatial size for a conv with `kernel`, `stride`, `pad`.
pub fn conv2d_shape(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

struct ConvDims {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvDims {
    fn from(x: &ArrayView4<f32>, wgt: &ArrayView4<f32>, stride: usize, pad: usize) -> Self {
        let (n, ci, h, w) = x.dim();
        let (co, ci_w, kh, kw) = wgt.dim();
        assert_eq!(ci, ci_w, "conv input channels mismatch");
        ConvDims {
            n,
            ci,
            h,
            w,
            co,
            kh,
            kw,
            ho: conv2d_shape(h, kh, stride, pad),
            wo: conv2d_shape(w, kw, stride, pad),
            stride,
            pad,
        }
    }

    fn k(&self) -> usize {
        self.ci * self.kh * self.kw
    }
}

/// Column matrix (K, N*Ho*Wo); per-sample blocks are filled in parallel.
fn im2col(x: &ArrayView4<f32>, d: &ConvDims) -> Array2<f32> {
    let k = d.k();
    let cols_per_sample = d.ho * d.wo;
    let mut data = vec![0f32; k * d.n * cols_per_sample];
    let total_cols = d.n * cols_per_sample;

    // row-major (K, total_cols): element (r, c) at r*total_cols + c
    let x = x.to_owned(); // ensure standard layout for fast indexing
    let xs = x.as_slice().unwrap();
    let (h, w) = (d.h, d.w);

    data.par_chunks_mut(total_cols)
        .enumerate()
        .for_each(|(r, row)| {
            let ci = r / (d.kh * d.kw);
            let ky = (r / d.kw) % d.kh;
            let kx = r % d.kw;
            for n in 0..d.n {
                let base = (n * d.ci + ci) * h * w;
                for oy in 0..d.ho {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    let col_base = n * cols_per_sample + oy * d.wo;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row_base = base + iy as usize * w;
                    for ox in 0..d.wo {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            row[col_base + ox] = xs[row_base + ix as usize];
                        }
                    }
                }
            }
        });
    Array2::from_shape_vec((k, total_cols), data).unwrap()
}

/// Scatter-add of a column-gradient matrix back to input layout.
fn col2im(dcol: &Array2<f32>, d: &ConvDims) -> Array4<f32> {
    let cols_per_sample = d.ho * d.wo;
    let mut dx = Array4::<f32>::zeros((d.n, d.ci, d.h, d.w));
    // parallel over samples: each sample's gradient block is disjoint
    let dxs = dx.as_slice_mut().unwrap();
    let sample_len = d.ci * d.h * d.w;
    let dcol_slice = dcol.as_slice().unwrap();
    let total_cols = d.n * cols_per_sample;
    let k = d.k();
    dxs.par_chunks_mut(sample_len)
        .enumerate()
        .for_each(|(n, dxn)| {
            for r in 0..k {
                let ci = r / (d.kh * d.kw);
                let ky = (r / d.kw) % d.kh;
                let kx = r % d.kw;
                for oy in 0..d.ho {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for ox in 0..d.wo {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix < 0 || ix >= d.w as isize {
                            continue;
                        }
                        let col = n * cols_per_sample + oy * d.wo + ox;
                        dxn[(ci * d.h + iy as usize) * d.w + ix as usize] +=
                            dcol_slice[r * total_cols + col];
                    }
                }
            }
        });
    dx
}

impl Graph {
    /// Convolution: x(N,Ci,H,W) * w(Co,Ci,kh,kw) + b(Co).
    pub fn conv2d(&mut self, x: VarId, w: VarId, b: VarId, stride: usize, pad: usize) -> VarId {
        let xv = self.value4(x);
        let wv = self.value4(w);
        let d = ConvDims::from(&xv, &wv, stride, pad);
        let col = im2col(&xv, &d);
        let w2 = wv.to_owned().into_shape_with_order((d.co, d.k())).unwrap();
        let out_mat = w2.dot(&col); // (Co, N*Ho*Wo)

        let bv = self.value(b);
        let mut out = Array4::<f32>::zeros((d.n, d.co, d.ho, d.wo));
        let cols_per_sample = d.ho * d.wo;
        for n in 0..d.n {
            for co in 0..d.co {
                let bias = bv[ndarray::IxDyn(&[co])];
                let src = out_mat.row(co);
                let mut dst = out.index_axis_mut(Axis(0), n);
                let mut dst = dst.index_axis_mut(Axis(0), co);
                let dst_slice = dst.as_slice_mut().unwrap();
                for (i, v) in dst_slice.iter_mut().enumerate() {
                    *v = src[n * cols_per_sample + i] + bias;
                }
            }
        }

        let needs = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        let back: Option<BackwardFn> = needs.then(|| {
            Box::new(move |g: &Graph, grad: &ArrayD<f32>, store: &mut GradStore| {
                let xv = g.value4(x);
                let wv = g.value4(w);
                let d = ConvDims::from(&xv, &wv, stride, pad);
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
                let cols_per_sample = d.ho * d.wo;

                // gather grad into (Co, N*Ho*Wo)
                let mut g_mat = Array2::<f32>::zeros((d.co, d.n * cols_per_sample));
                for n in 0..d.n {
                    for co in 0..d.co {
                        let src = g4.index_axis(Axis(0), n);
                        let src = src.index_axis(Axis(0), co);
                        let src = src.to_owned();
                        let src_slice = src.as_slice().unwrap();
                        for (i, v) in src_slice.iter().enumerate() {
                            g_mat[(co, n * cols_per_sample + i)] = *v;
                        }
                    }
                }

                if g.needs_grad(b) {
                    let db = g_mat.sum_axis(Axis(1));
                    store.accumulate(b, db.into_dyn());
                }
                if g.needs_grad(w) {
                    let col = im2col(&xv, &d);
                    let dw2 = g_mat.dot(&col.t()); // (Co, K)
                    let dw = dw2
                        .into_shape_with_order((d.co, d.ci, d.kh, d.kw))
                        .unwrap();
                    store.accumulate(w, dw.into_dyn());
                }
                if g.needs_grad(x) {
                    let w2 = wv.to_owned().into_shape_with_order((d.co, d.k())).unwrap();
                    let dcol = w2.t().dot(&g_mat); // (K, N*Ho*Wo)
                    let dx = col2im(&dcol, &d);
                    store.accumulate(x, dx.into_dyn());
                }
            }) as BackwardFn
        });
        self.push(out.into_dyn(), needs, back)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{check_grad, rand_array};
    use super::*;

    #[test]
    fn conv_matches_naive() {
        let x = rand_array(&[2, 3, 5, 5], 11);
        let w = rand_array(&[4, 3, 3, 3], 12);
        let b = rand_array(&[4], 13);
        let mut g = Graph::new();
        let (xi, wi, bi) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
        let y = g.conv2d(xi, wi, bi, 2, 1);
        let yv = g.value4(y);

        let x4 = x.view().into_dimensionality::<Ix4>().unwrap();
        let w4 = w.view().into_dimensionality::<Ix4>().unwrap();
        let (n, ci, h, wd) = x4.dim();
        let (co, _, kh, kw) = w4.dim();
        let (stride, pad) = (2usize, 1usize);
        let ho = conv2d_shape(h, kh, stride, pad);
        let wo = conv2d_shape(wd, kw, stride, pad);
        assert_eq!(yv.dim(), (n, co, ho, wo));
        for ni in 0..n {
            for c in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[ndarray::IxDyn(&[c])];
                        for cc in 0..ci {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                        acc += x4[(ni, cc, iy as usize, ix as usize)]
                                            * w4[(c, cc, ky, kx)];
                                    }
                                }
                            }
                        }
                        assert!((yv[(ni, c, oy, ox)] - acc).abs() < 1e-4);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_grad() {
        let x = rand_array(&[2, 2, 4, 4], 21);
        let w = rand_array(&[3, 2, 3, 3], 22);
        let b = rand_array(&[3], 23);
        check_grad(
            |g, ids| {
                let y = g.conv2d(ids[0], ids[1], ids[2], 2, 1);
                let sq = g.mul(y, y);
                g.spatial_mean_like_sum(sq)
            },
            &[x, w, b],
            2e-2,
        );
    }
}
