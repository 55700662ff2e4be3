//! Broadcasting binary ops, unary maps and scalar arithmetic.

use crate::tensor::{numel, Backward, Tensor};

/// Right-aligned numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` with zero stride on broadcast axes.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + rank - shape.len();
        strides[oi] = if shape[i] == 1 && out[oi] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_offset, b_offset)` over every element of `out`.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel(out);
    if n == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for i in 0..n {
        f(i, oa, ob);
        // increment the multi-index
        let mut d = rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> (Vec<f64>, Vec<usize>) {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return (data, a.shape().to_vec());
    }
    let out = broadcast_shape(a.shape(), b.shape())
        .unwrap_or_else(|| panic!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()));
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![0.0; numel(&out)];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |i, ia, ib| data[i] = f(ad[ia], bd[ib]));
    (data, out)
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

struct BinaryOp {
    kind: BinaryKind,
    a: Tensor,
    b: Tensor,
}

impl Backward for BinaryOp {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let (a, b) = (&self.a, &self.b);
        let ga_full = |t: Tensor| Some(t.sum_to(a.shape()));
        let gb_full = |t: Tensor| Some(t.sum_to(b.shape()));
        let need_a = a.requires_grad();
        let need_b = b.requires_grad();
        match self.kind {
            BinaryKind::Add => vec![
                need_a.then(|| g.sum_to(a.shape())),
                need_b.then(|| g.sum_to(b.shape())),
            ],
            BinaryKind::Sub => vec![
                need_a.then(|| g.sum_to(a.shape())),
                need_b.then(|| g.neg().sum_to(b.shape())),
            ],
            BinaryKind::Mul => vec![
                if need_a { ga_full(g.mul(b)) } else { None },
                if need_b { gb_full(g.mul(a)) } else { None },
            ],
            BinaryKind::Div => vec![
                if need_a { ga_full(g.div(b)) } else { None },
                // d(a/b)/db = -a / b^2
                if need_b { gb_full(g.mul(a).div(&b.square()).neg()) } else { None },
            ],
        }
    }
}

fn binary(kind: BinaryKind, a: &Tensor, b: &Tensor) -> Tensor {
    let (data, shape) = match kind {
        BinaryKind::Add => zip_broadcast(a, b, |x, y| x + y),
        BinaryKind::Sub => zip_broadcast(a, b, |x, y| x - y),
        BinaryKind::Mul => zip_broadcast(a, b, |x, y| x * y),
        BinaryKind::Div => zip_broadcast(a, b, |x, y| x / y),
    };
    Tensor::from_op(data, shape, BinaryOp { kind, a: a.clone(), b: b.clone() })
}

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Neg,
    AddScalar(f64),
    MulScalar(f64),
    Exp,
    Log,
    Sqrt,
    Square,
    Tanh,
    Sigmoid,
    Abs,
    LeakyRelu(f64),
    Clamp(f64, f64),
}

impl UnaryKind {
    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Neg => -x,
            UnaryKind::AddScalar(c) => x + c,
            UnaryKind::MulScalar(c) => x * c,
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Square => x * x,
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            UnaryKind::Abs => x.abs(),
            UnaryKind::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            UnaryKind::Clamp(lo, hi) => x.clamp(lo, hi),
        }
    }
}

struct UnaryOp {
    kind: UnaryKind,
    x: Tensor,
}

impl Backward for UnaryOp {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }

    fn backward(&self, out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let x = &self.x;
        let gx = match self.kind {
            UnaryKind::Neg => g.neg(),
            UnaryKind::AddScalar(_) => g.clone(),
            UnaryKind::MulScalar(c) => g.mul_scalar(c),
            UnaryKind::Exp => g.mul(out),
            UnaryKind::Log => g.div(x),
            UnaryKind::Sqrt => g.div(out).mul_scalar(0.5),
            UnaryKind::Square => g.mul(x).mul_scalar(2.0),
            // 1 - tanh^2
            UnaryKind::Tanh => g.mul(&out.square().neg().add_scalar(1.0)),
            UnaryKind::Sigmoid => g.mul(&out.mul(&out.neg().add_scalar(1.0))),
            UnaryKind::Abs => g.mul(&x.map_const(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })),
            UnaryKind::LeakyRelu(s) => g.mul(&x.map_const(|v| if v > 0.0 { 1.0 } else { s })),
            UnaryKind::Clamp(lo, hi) => g.mul(&x.map_const(|v| if v >= lo && v <= hi { 1.0 } else { 0.0 })),
        };
        vec![Some(gx)]
    }
}

fn unary(kind: UnaryKind, x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor::from_op(data, x.shape().to_vec(), UnaryOp { kind, x: x.clone() })
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        binary(BinaryKind::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        binary(BinaryKind::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        binary(BinaryKind::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        binary(BinaryKind::Div, self, other)
    }

    pub fn neg(&self) -> Tensor {
        unary(UnaryKind::Neg, self)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(UnaryKind::AddScalar(c), self)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        unary(UnaryKind::MulScalar(c), self)
    }

    pub fn exp(&self) -> Tensor {
        unary(UnaryKind::Exp, self)
    }

    pub fn log(&self) -> Tensor {
        unary(UnaryKind::Log, self)
    }

    pub fn sqrt(&self) -> Tensor {
        unary(UnaryKind::Sqrt, self)
    }

    pub fn square(&self) -> Tensor {
        unary(UnaryKind::Square, self)
    }

    pub fn tanh(&self) -> Tensor {
        unary(UnaryKind::Tanh, self)
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(UnaryKind::Sigmoid, self)
    }

    pub fn abs(&self) -> Tensor {
        unary(UnaryKind::Abs, self)
    }

    pub fn relu(&self) -> Tensor {
        unary(UnaryKind::LeakyRelu(0.0), self)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        unary(UnaryKind::LeakyRelu(slope), self)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        unary(UnaryKind::Clamp(lo, hi), self)
    }

    /// Elementwise map producing a constant (untracked) tensor.
    pub fn map_const(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_vec(self.data().iter().map(|&v| f(v)).collect(), self.shape())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3, 4, 4], &[1, 3, 1, 1]), Some(vec![2, 3, 4, 4]));
        assert_eq!(broadcast_shape(&[3], &[2, 1]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[], &[2, 2]), Some(vec![2, 2]));
        assert_eq!(broadcast_shape(&[2], &[3]), None);
    }

    #[test]
    fn broadcast_add_matches_manual() {
        let a = Tensor::from_vec((0..6).map(|v| v as f64).collect(), &[2, 3]);
        let b = Tensor::from_vec(vec![10.0, 20.0], &[2, 1]);
        let c = a.add(&b);
        assert_eq!(c.data(), &[10.0, 11.0, 12.0, 23.0, 24.0, 25.0]);
    }

    #[test]
    fn broadcast_grad_sums_back() {
        let a = Tensor::var(vec![1.0; 6], &[2, 3]);
        let b = Tensor::var(vec![2.0, 3.0, 4.0], &[3]);
        let g = a.mul(&b).sum_all().backward();
        assert_eq!(g.get(&a).unwrap().data(), &[2.0, 3.0, 4.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.get(&b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        let x = Tensor::from_vec(vec![-800.0, 0.0, 800.0], &[3]);
        let s = x.sigmoid();
        assert_eq!(s.data(), &[0.0, 0.5, 1.0]);
    }
}
