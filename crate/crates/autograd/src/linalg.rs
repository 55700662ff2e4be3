//! Matrix product and 2-D convolutions.
//!
//! The three convolution primitives (forward conv, its input adjoint and its
//! weight adjoint) are the three partial derivatives of one trilinear form
//! `<g, conv(x, w)>`, so each one's backward rule is expressed with the other
//! two and the set is closed under repeated differentiation.

use rayon::prelude::*;

use crate::tensor::{Backward, Tensor};

fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_rs: isize, a_cs: isize, b: &[f64], b_rs: isize, b_cs: isize, beta: f64, c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller passes slices whose extents cover the strided views
    // described by (m, k, n) and the row/column strides; `c` is row-major m×n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_rs,
            a_cs,
            b.as_ptr(),
            b_rs,
            b_cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct MatMul {
    a: Tensor,
    b: Tensor,
}

impl Backward for MatMul {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.a, &self.b]
    }
    fn backward(&self, _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![
            self.a.requires_grad().then(|| g.matmul(&self.b.t())),
            self.b.requires_grad().then(|| self.a.t().matmul(g)),
        ]
    }
}

impl Tensor {
    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.rank(), 2, "matmul lhs must be 2-D, got {:?}", self.shape());
        assert_eq!(other.rank(), 2, "matmul rhs must be 2-D, got {:?}", other.shape());
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        assert_eq!(k, k2, "matmul inner extent {:?} × {:?}", self.shape(), other.shape());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), k as isize, 1, other.data(), n as isize, 1, 0.0, &mut out);
        Tensor::from_op(out, vec![m, n], MatMul { a: self.clone(), b: other.clone() })
    }
}

/// Geometry of a strided, zero-padded 2-D convolution seen from its "large"
/// side (`in_*`) and its "small" side (`out_*`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub kh: usize,
    pub kw: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Forward geometry for an `in_h × in_w` input.
    pub fn forward(in_h: usize, in_w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Self {
        assert!(in_h + 2 * pad >= kh && in_w + 2 * pad >= kw, "kernel larger than padded input");
        ConvGeom {
            stride,
            pad,
            kh,
            kw,
            in_h,
            in_w,
            out_h: (in_h + 2 * pad - kh) / stride + 1,
            out_w: (in_w + 2 * pad - kw) / stride + 1,
        }
    }

    /// Geometry of a transposed convolution mapping `out_h × out_w` up to the
    /// smallest input size consistent with it.
    pub fn transposed(out_h: usize, out_w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Self {
        let in_h = (out_h - 1) * stride + kh - 2 * pad;
        let in_w = (out_w - 1) * stride + kw - 2 * pad;
        let g = Self::forward(in_h, in_w, kh, kw, stride, pad);
        debug_assert_eq!((g.out_h, g.out_w), (out_h, out_w));
        g
    }

    fn col_rows(&self, c: usize) -> usize {
        c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one `[C, in_h, in_w]` image into `[C·kh·kw, out_h·out_w]`.
    fn im2col(&self, x: &[f64], c: usize, col: &mut [f64]) {
        let cols = self.col_cols();
        for ci in 0..c {
            let plane = &x[ci * self.in_h * self.in_w..(ci + 1) * self.in_h * self.in_w];
            for p in 0..self.kh {
                for q in 0..self.kw {
                    let row = (ci * self.kh + p) * self.kw + q;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for i in 0..self.out_h {
                        let y = (i * self.stride + p) as isize - self.pad as isize;
                        let line = &mut dst[i * self.out_w..(i + 1) * self.out_w];
                        if y < 0 || y >= self.in_h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[y as usize * self.in_w..(y as usize + 1) * self.in_w];
                        for (j, v) in line.iter_mut().enumerate() {
                            let xx = (j * self.stride + q) as isize - self.pad as isize;
                            *v = if xx < 0 || xx >= self.in_w as isize { 0.0 } else { src[xx as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatter-adds columns back into `[C, in_h, in_w]`.
    fn col2im(&self, col: &[f64], c: usize, x: &mut [f64]) {
        let cols = self.col_cols();
        for ci in 0..c {
            let plane = &mut x[ci * self.in_h * self.in_w..(ci + 1) * self.in_h * self.in_w];
            for p in 0..self.kh {
                for q in 0..self.kw {
                    let row = (ci * self.kh + p) * self.kw + q;
                    let src = &col[row * cols..(row + 1) * cols];
                    for i in 0..self.out_h {
                        let y = (i * self.stride + p) as isize - self.pad as isize;
                        if y < 0 || y >= self.in_h as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * self.in_w..(y as usize + 1) * self.in_w];
                        for j in 0..self.out_w {
                            let xx = (j * self.stride + q) as isize - self.pad as isize;
                            if xx >= 0 && xx < self.in_w as isize {
                                dst[xx as usize] += src[i * self.out_w + j];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `x [N,C,in] , w [O,C,k] → y [N,O,out]`
fn conv_forward_raw(x: &Tensor, w: &Tensor, g: &ConvGeom) -> Vec<f64> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let (rows, cols) = (g.col_rows(c), g.col_cols());
    let in_sz = c * g.in_h * g.in_w;
    let out_sz = o * cols;
    let mut out = vec![0.0; n * out_sz];
    let (xd, wd) = (x.data(), w.data());
    out.par_chunks_mut(out_sz).enumerate().for_each(|(b, y)| {
        let mut col = vec![0.0; rows * cols];
        g.im2col(&xd[b * in_sz..(b + 1) * in_sz], c, &mut col);
        gemm(o, rows, cols, wd, rows as isize, 1, &col, cols as isize, 1, 0.0, y);
    });
    out
}

/// `gy [N,O,out] , w [O,C,k] → x [N,C,in]`
fn conv_input_adjoint_raw(gy: &Tensor, w: &Tensor, g: &ConvGeom) -> Vec<f64> {
    let n = gy.shape()[0];
    let (o, c) = (w.shape()[0], w.shape()[1]);
    let (rows, cols) = (g.col_rows(c), g.col_cols());
    let in_sz = c * g.in_h * g.in_w;
    let out_sz = o * cols;
    let mut out = vec![0.0; n * in_sz];
    let (gd, wd) = (gy.data(), w.data());
    out.par_chunks_mut(in_sz).enumerate().for_each(|(b, x)| {
        let mut col = vec![0.0; rows * cols];
        // col = Wᵀ · gy_b
        gemm(rows, o, cols, wd, 1, rows as isize, &gd[b * out_sz..(b + 1) * out_sz], cols as isize, 1, 0.0, &mut col);
        g.col2im(&col, c, x);
    });
    out
}

/// `x [N,C,in] , gy [N,O,out] → w [O,C,k]`
fn conv_weight_adjoint_raw(x: &Tensor, gy: &Tensor, g: &ConvGeom) -> Vec<f64> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let o = gy.shape()[1];
    let (rows, cols) = (g.col_rows(c), g.col_cols());
    let in_sz = c * g.in_h * g.in_w;
    let out_sz = o * cols;
    let (xd, gd) = (x.data(), gy.data());
    let partials: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|b| {
            let mut col = vec![0.0; rows * cols];
            g.im2col(&xd[b * in_sz..(b + 1) * in_sz], c, &mut col);
            let mut dw = vec![0.0; o * rows];
            // dw = gy_b · colᵀ
            gemm(o, cols, rows, &gd[b * out_sz..(b + 1) * out_sz], cols as isize, 1, &col, 1, cols as isize, 0.0, &mut dw);
            dw
        })
        .collect();
    // fixed-order reduction keeps results independent of thread scheduling
    let mut acc = vec![0.0; o * rows];
    for p in partials {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

struct Conv2d {
    x: Tensor,
    w: Tensor,
    geom: ConvGeom,
}

impl Backward for Conv2d {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x, &self.w]
    }
    fn backward(&self, _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![
            self.x.requires_grad().then(|| conv_input_adjoint(g, &self.w, self.geom)),
            self.w.requires_grad().then(|| conv_weight_adjoint(&self.x, g, self.geom)),
        ]
    }
}

struct ConvInputAdjoint {
    gy: Tensor,
    w: Tensor,
    geom: ConvGeom,
}

impl Backward for ConvInputAdjoint {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.gy, &self.w]
    }
    fn backward(&self, _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![
            self.gy.requires_grad().then(|| conv_forward(g, &self.w, self.geom)),
            self.w.requires_grad().then(|| conv_weight_adjoint(g, &self.gy, self.geom)),
        ]
    }
}

struct ConvWeightAdjoint {
    x: Tensor,
    gy: Tensor,
    geom: ConvGeom,
}

impl Backward for ConvWeightAdjoint {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x, &self.gy]
    }
    fn backward(&self, _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![
            self.x.requires_grad().then(|| conv_input_adjoint(&self.gy, g, self.geom)),
            self.gy.requires_grad().then(|| conv_forward(&self.x, g, self.geom)),
        ]
    }
}

fn conv_forward(x: &Tensor, w: &Tensor, geom: ConvGeom) -> Tensor {
    let shape = vec![x.shape()[0], w.shape()[0], geom.out_h, geom.out_w];
    let data = conv_forward_raw(x, w, &geom);
    Tensor::from_op(data, shape, Conv2d { x: x.clone(), w: w.clone(), geom })
}

fn conv_input_adjoint(gy: &Tensor, w: &Tensor, geom: ConvGeom) -> Tensor {
    let shape = vec![gy.shape()[0], w.shape()[1], geom.in_h, geom.in_w];
    let data = conv_input_adjoint_raw(gy, w, &geom);
    Tensor::from_op(data, shape, ConvInputAdjoint { gy: gy.clone(), w: w.clone(), geom })
}

fn conv_weight_adjoint(x: &Tensor, gy: &Tensor, geom: ConvGeom) -> Tensor {
    let shape = vec![gy.shape()[1], x.shape()[1], geom.kh, geom.kw];
    let data = conv_weight_adjoint_raw(x, gy, &geom);
    Tensor::from_op(data, shape, ConvWeightAdjoint { x: x.clone(), gy: gy.clone(), geom })
}

impl Tensor {
    /// Cross-correlation of `[N,C,H,W]` with weights `[O,C,kh,kw]`.
    pub fn conv2d(&self, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        assert_eq!(self.rank(), 4, "conv2d input must be NCHW, got {:?}", self.shape());
        assert_eq!(w.rank(), 4, "conv2d weight must be OCHW, got {:?}", w.shape());
        assert_eq!(self.shape()[1], w.shape()[1], "conv2d channels: input {:?}, weight {:?}", self.shape(), w.shape());
        let geom = ConvGeom::forward(self.shape()[2], self.shape()[3], w.shape()[2], w.shape()[3], stride, pad);
        conv_forward(self, w, geom)
    }

    /// Transposed convolution of `[N,Ci,h,w]` with weights `[Ci,Co,kh,kw]`,
    /// producing `[N,Co,(h-1)·s+kh-2p, (w-1)·s+kw-2p]`.
    pub fn conv_transpose2d(&self, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        assert_eq!(self.rank(), 4, "conv_transpose2d input must be NCHW, got {:?}", self.shape());
        assert_eq!(w.rank(), 4, "conv_transpose2d weight must be 4-D, got {:?}", w.shape());
        assert_eq!(self.shape()[1], w.shape()[0], "conv_transpose2d channels: input {:?}, weight {:?}", self.shape(), w.shape());
        let geom = ConvGeom::transposed(self.shape()[2], self.shape()[3], w.shape()[2], w.shape()[3], stride, pad);
        conv_input_adjoint(self, w, geom)
    }
}
