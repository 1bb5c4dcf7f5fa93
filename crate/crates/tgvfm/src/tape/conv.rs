//! Convolution and resampling ops: im2col conv2d, nearest ×2 upsampling,
//! bilinear resizing, and a separable renormalized Gaussian filter.

use super::{Op, Tape, Var};
use ndarray::{Array2, ArrayD, Axis, Ix3, Ix4};

impl Tape {
    /// 2-D convolution: `x [Ci,H,W]`, `w [Co,Ci,kh,kw]`, `b [Co]`, zero
    /// padding `pad`, square stride. Output `[Co,Ho,Wo]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix3>().expect("conv2d input rank 3");
        let wv = self.value(w).view().into_dimensionality::<Ix4>().expect("conv2d weight rank 4");
        let (ci, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (co, wci, kh, kw) = (wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]);
        assert_eq!(ci, wci, "conv2d: channel mismatch");
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "conv2d: kernel larger than input");
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;

        let cols = im2col(&xv.to_owned(), kh, kw, stride, pad, ho, wo);
        let w2 = wv.to_shape((co, ci * kh * kw)).unwrap().to_owned();
        let mut out2 = w2.dot(&cols);
        let bv = self.value(b);
        for (mut row, bias) in out2.rows_mut().into_iter().zip(bv.iter()) {
            row.mapv_inplace(|v| v + bias);
        }
        let out = out2.into_shape_with_order((co, ho, wo)).unwrap().into_dyn();
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(out, Op::Conv2d { x: x.0, w: w.0, b: b.0, stride, pad }, needs)
    }

    pub(crate) fn backprop_conv2d(
        &self,
        node: usize,
        grad: &ArrayD<f64>,
        g: &mut [Option<ArrayD<f64>>],
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
        pad: usize,
    ) {
        let xv = self.nodes[x].value.view().into_dimensionality::<Ix3>().unwrap().to_owned();
        let wv = self.nodes[w].value.view().into_dimensionality::<Ix4>().unwrap();
        let out_shape = self.nodes[node].value.shape();
        let (co, ho, wo) = (out_shape[0], out_shape[1], out_shape[2]);
        let (ci, kh, kw) = (wv.shape()[1], wv.shape()[2], wv.shape()[3]);
        let dy2 = grad.to_shape((co, ho * wo)).unwrap().to_owned();

        let db = dy2.sum_axis(Axis(1)).into_dyn();
        self.acc(g, b, db);

        let cols = im2col(&xv, kh, kw, stride, pad, ho, wo);
        let dw2 = dy2.dot(&cols.t());
        self.acc(g, w, dw2.into_shape_with_order((co, ci, kh, kw)).unwrap().into_dyn());

        if self.nodes[x].needs {
            let w2 = wv.to_shape((co, ci * kh * kw)).unwrap().to_owned();
            let dcols = w2.t().dot(&dy2);
            let dx = col2im(&dcols, xv.shape(), kh, kw, stride, pad, ho, wo);
            self.acc(g, x, dx.into_dyn());
        }
    }

    /// Nearest-neighbor ×2 upsampling of `[C,H,W]`.
    pub fn nearest_up2(&mut self, a: Var) -> Var {
        let xv = self.value(a).view().into_dimensionality::<Ix3>().expect("nearest_up2 rank 3");
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut out = ndarray::Array3::<f64>::zeros((c, 2 * h, 2 * w));
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = xv[(ci, y, x)];
                    out[(ci, 2 * y, 2 * x)] = v;
                    out[(ci, 2 * y, 2 * x + 1)] = v;
                    out[(ci, 2 * y + 1, 2 * x)] = v;
                    out[(ci, 2 * y + 1, 2 * x + 1)] = v;
                }
            }
        }
        self.unary(a, out.into_dyn(), Op::NearestUp2(a.0))
    }

    pub(crate) fn backprop_nearest_up2(
        &self,
        grad: &ArrayD<f64>,
        g: &mut [Option<ArrayD<f64>>],
        a: usize,
    ) {
        let gv = grad.view().into_dimensionality::<Ix3>().unwrap();
        let (c, h2, w2) = (gv.shape()[0], gv.shape()[1], gv.shape()[2]);
        let mut dx = ndarray::Array3::<f64>::zeros((c, h2 / 2, w2 / 2));
        for ci in 0..c {
            for y in 0..h2 {
                for x in 0..w2 {
                    dx[(ci, y / 2, x / 2)] += gv[(ci, y, x)];
                }
            }
        }
        self.acc(g, a, dx.into_dyn());
    }

    /// Bilinear resize of `[C,h,w]` to `[C,out_h,out_w]` (half-pixel centers).
    pub fn bilinear_resize(&mut self, a: Var, out_h: usize, out_w: usize) -> Var {
        let xv = self.value(a).view().into_dimensionality::<Ix3>().expect("bilinear rank 3");
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut out = ndarray::Array3::<f64>::zeros((c, out_h, out_w));
        for oy in 0..out_h {
            let (y0, y1, fy) = sample_axis(oy, out_h, h);
            for ox in 0..out_w {
                let (x0, x1, fx) = sample_axis(ox, out_w, w);
                for ci in 0..c {
                    let v = (1.0 - fy) * ((1.0 - fx) * xv[(ci, y0, x0)] + fx * xv[(ci, y0, x1)])
                        + fy * ((1.0 - fx) * xv[(ci, y1, x0)] + fx * xv[(ci, y1, x1)]);
                    out[(ci, oy, ox)] = v;
                }
            }
        }
        self.unary(a, out.into_dyn(), Op::BilinearResize { input: a.0, out_h, out_w })
    }

    pub(crate) fn backprop_bilinear(
        &self,
        grad: &ArrayD<f64>,
        g: &mut [Option<ArrayD<f64>>],
        a: usize,
        out_h: usize,
        out_w: usize,
    ) {
        let shape = self.nodes[a].value.shape();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let gv = grad.view().into_dimensionality::<Ix3>().unwrap();
        let mut dx = ndarray::Array3::<f64>::zeros((c, h, w));
        for oy in 0..out_h {
            let (y0, y1, fy) = sample_axis(oy, out_h, h);
            for ox in 0..out_w {
                let (x0, x1, fx) = sample_axis(ox, out_w, w);
                for ci in 0..c {
                    let gr = gv[(ci, oy, ox)];
                    dx[(ci, y0, x0)] += (1.0 - fy) * (1.0 - fx) * gr;
                    dx[(ci, y0, x1)] += (1.0 - fy) * fx * gr;
                    dx[(ci, y1, x0)] += fy * (1.0 - fx) * gr;
                    dx[(ci, y1, x1)] += fy * fx * gr;
                }
            }
        }
        self.acc(g, a, dx.into_dyn());
    }

    /// Separable filtering of `[H,W]` with a symmetric 1-D kernel; weights are
    /// renormalized over the in-bounds support so every position is valid.
    pub fn gauss_filter(&mut self, a: Var, kernel: &[f64]) -> Var {
        let xv = self.value(a).view().into_dimensionality::<ndarray::Ix2>().expect("filter rank 2");
        let tmp = sep_pass(&xv.to_owned(), kernel, true);
        let out = sep_pass(&tmp, kernel, false);
        self.unary(a, out.into_dyn(), Op::GaussFilter { input: a.0, kernel: kernel.to_vec() })
    }

    pub(crate) fn backprop_gauss(
        &self,
        grad: &ArrayD<f64>,
        g: &mut [Option<ArrayD<f64>>],
        a: usize,
        kernel: &[f64],
    ) {
        let gv = grad.view().into_dimensionality::<ndarray::Ix2>().unwrap().to_owned();
        let dtmp = sep_pass_t(&gv, kernel, false);
        let dx = sep_pass_t(&dtmp, kernel, true);
        self.acc(g, a, dx.into_dyn());
    }
}

/// Source indices and interpolation weight for one output coordinate.
fn sample_axis(o: usize, out_len: usize, in_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, in_len as f64 - 1.0);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, s - i0 as f64)
}

fn im2col(
    x: &ndarray::Array3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f64> {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut cols = Array2::<f64>::zeros((ci * kh * kw, ho * wo));
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().unwrap();
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * (ho * wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xbase = (c * h + iy as usize) * w;
                    let cbase = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cs[cbase + ox] = xs[xbase + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    dcols: &Array2<f64>,
    x_shape: &[usize],
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> ndarray::Array3<f64> {
    let (ci, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
    let mut dx = ndarray::Array3::<f64>::zeros((ci, h, w));
    let ds = dcols.as_slice().expect("standard layout");
    let xs = dx.as_slice_mut().unwrap();
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * (ho * wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xbase = (c * h + iy as usize) * w;
                    let cbase = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        xs[xbase + ix as usize] += ds[cbase + ox];
                    }
                }
            }
        }
    }
    dx
}

/// One renormalized filtering pass; `vertical` filters along rows (axis 0).
fn sep_pass(x: &Array2<f64>, k: &[f64], vertical: bool) -> Array2<f64> {
    let r = k.len() / 2;
    let (h, w) = (x.nrows(), x.ncols());
    let len = if vertical { h } else { w };
    let norms = boundary_norms(len, k, r);
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x_ in 0..w {
            let pos = if vertical { y } else { x_ };
            let mut acc = 0.0;
            for (j, &kj) in k.iter().enumerate() {
                let i = pos as isize + j as isize - r as isize;
                if i < 0 || i >= len as isize {
                    continue;
                }
                let v = if vertical { x[(i as usize, x_)] } else { x[(y, i as usize)] };
                acc += kj * v;
            }
            out[(y, x_)] = acc / norms[pos];
        }
    }
    out
}

/// Transpose of [`sep_pass`] (scatter with the same renormalized weights).
fn sep_pass_t(g: &Array2<f64>, k: &[f64], vertical: bool) -> Array2<f64> {
    let r = k.len() / 2;
    let (h, w) = (g.nrows(), g.ncols());
    let len = if vertical { h } else { w };
    let norms = boundary_norms(len, k, r);
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x_ in 0..w {
            let pos = if vertical { y } else { x_ };
            let gr = g[(y, x_)] / norms[pos];
            for (j, &kj) in k.iter().enumerate() {
                let i = pos as isize + j as isize - r as isize;
                if i < 0 || i >= len as isize {
                    continue;
                }
                if vertical {
                    out[(i as usize, x_)] += kj * gr;
                } else {
                    out[(y, i as usize)] += kj * gr;
                }
            }
        }
    }
    out
}

fn boundary_norms(len: usize, k: &[f64], r: usize) -> Vec<f64> {
    (0..len)
        .map(|pos| {
            let mut n = 0.0;
            for (j, &kj) in k.iter().enumerate() {
                let i = pos as isize + j as isize - r as isize;
                if i >= 0 && i < len as isize {
                    n += kj;
                }
            }
            n
        })
        .collect()
}
