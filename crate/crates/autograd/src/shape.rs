//! Reductions, broadcasting and layout ops.

use crate::elementwise::{broadcast_shape, broadcast_strides};
use crate::tensor::{numel, Backward, Tensor};

struct SumAll {
    x: Tensor,
}

impl Backward for SumAll {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.broadcast_to(self.x.shape()))]
    }
}

struct SumTo {
    x: Tensor,
}

impl Backward for SumTo {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.broadcast_to(self.x.shape()))]
    }
}

struct BroadcastTo {
    x: Tensor,
}

impl Backward for BroadcastTo {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.sum_to(self.x.shape()))]
    }
}

struct Reshape {
    x: Tensor,
}

impl Backward for Reshape {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.reshape(self.x.shape()))]
    }
}

struct Concat {
    parts: Vec<Tensor>,
    axis: usize,
}

impl Backward for Concat {
    fn inputs(&self) -> Vec<&Tensor> {
        self.parts.iter().collect()
    }
    fn backward(&self, _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let mut start = 0;
        self.parts
            .iter()
            .map(|p| {
                let len = p.shape()[self.axis];
                let s = start;
                start += len;
                p.requires_grad().then(|| g.narrow(self.axis, s, len))
            })
            .collect()
    }
}

struct Narrow {
    x: Tensor,
    axis: usize,
    start: usize,
}

impl Backward for Narrow {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.pad_axis(self.axis, self.start, self.x.shape()[self.axis]))]
    }
}

/// Adjoint of `Narrow`: embeds a slice into zeros along one axis.
struct PadAxis {
    x: Tensor,
    axis: usize,
    start: usize,
}

impl Backward for PadAxis {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.narrow(self.axis, self.start, self.x.shape()[self.axis]))]
    }
}

struct Transpose2 {
    x: Tensor,
}

impl Backward for Transpose2 {
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x]
    }
    fn backward(&self, _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.t())]
    }
}

/// (outer, axis_len, inner) decomposition around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tensor {
    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(vec![s], vec![], SumAll { x: self.clone() })
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum_all().mul_scalar(1.0 / n)
    }

    /// Sums broadcast axes so the result has `shape` (the inverse of broadcasting).
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let out_b = broadcast_shape(shape, self.shape());
        assert_eq!(
            out_b.as_deref(),
            Some(self.shape()),
            "cannot sum {:?} down to {:?}",
            self.shape(),
            shape
        );
        let src = self.shape();
        let strides = broadcast_strides(shape, src);
        let mut data = vec![0.0; numel(shape)];
        let rank = src.len();
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        for &v in self.data() {
            data[off] += v;
            let mut d = rank;
            while d > 0 {
                d -= 1;
                idx[d] += 1;
                off += strides[d];
                if idx[d] < src[d] {
                    break;
                }
                off -= strides[d] * src[d];
                idx[d] = 0;
            }
        }
        Tensor::from_op(data, shape.to_vec(), SumTo { x: self.clone() })
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let ok = broadcast_shape(self.shape(), shape);
        assert_eq!(ok.as_deref(), Some(shape), "cannot broadcast {:?} to {:?}", self.shape(), shape);
        let strides = broadcast_strides(self.shape(), shape);
        let n = numel(shape);
        let mut data = Vec::with_capacity(n);
        let rank = shape.len();
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        let src = self.data();
        for _ in 0..n {
            data.push(src[off]);
            let mut d = rank;
            while d > 0 {
                d -= 1;
                idx[d] += 1;
                off += strides[d];
                if idx[d] < shape[d] {
                    break;
                }
                off -= strides[d] * shape[d];
                idx[d] = 0;
            }
        }
        Tensor::from_op(data, shape.to_vec(), BroadcastTo { x: self.clone() })
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(numel(shape), self.numel(), "reshape {:?} -> {:?}", self.shape(), shape);
        Tensor::from_op(self.to_vec(), shape.to_vec(), Reshape { x: self.clone() })
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn cat(parts: &[Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "cat of zero tensors");
        let first = parts[0].shape();
        for p in parts {
            assert_eq!(p.rank(), first.len());
            for d in 0..first.len() {
                if d != axis {
                    assert_eq!(p.shape()[d], first[d], "cat extent mismatch on axis {d}");
                }
            }
        }
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut shape = first.to_vec();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let len = p.shape()[axis] * inner;
                data.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
            }
        }
        Tensor::from_op(data, shape, Concat { parts: parts.to_vec(), axis })
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let (outer, alen, inner) = split_axis(self.shape(), axis);
        assert!(start + len <= alen, "narrow out of range");
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        Tensor::from_op(data, shape, Narrow { x: self.clone(), axis, start })
    }

    fn pad_axis(&self, axis: usize, start: usize, full: usize) -> Tensor {
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let mut shape = self.shape().to_vec();
        shape[axis] = full;
        let mut data = vec![0.0; numel(&shape)];
        for o in 0..outer {
            let dst = o * full * inner + start * inner;
            let src = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&self.data()[src..src + len * inner]);
        }
        Tensor::from_op(data, shape, PadAxis { x: self.clone(), axis, start })
    }

    /// Transpose of a 2-D tensor.
    pub fn t(&self) -> Tensor {
        assert_eq!(self.rank(), 2, "t() needs a matrix");
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let src = self.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        Tensor::from_op(data, vec![c, r], Transpose2 { x: self.clone() })
    }
}
