use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording disabled on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// The backward rule of a recorded operation.
///
/// Rules are written in terms of `Tensor` operations, so when the graph is
/// recorded during a backward pass the resulting gradients are themselves
/// differentiable.
pub(crate) trait Backward: Send + Sync {
    fn inputs(&self) -> Vec<&Tensor>;
    fn backward(&self, output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad_fn: Option<Box<dyn Backward>>,
}

/// An immutable n-dimensional array of `f64` with an optional gradient history.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(data: Arc<Vec<f64>>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<Box<dyn Backward>>) -> Self {
        assert_eq!(
            data.len(),
            numel(&shape),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad_fn,
        }))
    }

    /// A constant tensor (no gradient tracking).
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Self {
        Self::build(Arc::new(data), shape.to_vec(), false, None)
    }

    /// A leaf tensor that gradients are accumulated for.
    pub fn var(data: Vec<f64>, shape: &[usize]) -> Self {
        Self::build(Arc::new(data), shape.to_vec(), true, None)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(vec![v], &[])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(vec![0.0; numel(shape)], shape)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::from_vec(vec![v; numel(shape)], shape)
    }

    /// Output of a recorded op. The backward rule is kept only when grad mode
    /// is on and at least one input requires a gradient.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: impl Backward + 'static) -> Self {
        let track = is_grad_enabled() && op.inputs().iter().any(|t| t.requires_grad());
        if track {
            Self::build(Arc::new(data), shape, true, Some(Box::new(op)))
        } else {
            Self::build(Arc::new(data), shape, false, None)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.as_ref().clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Same values, no history. Shares storage with `self`.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    /// Same values as a fresh leaf that requires a gradient.
    pub fn detach_var(&self) -> Tensor {
        Self::build(self.0.data.clone(), self.0.shape.clone(), true, None)
    }

    pub(crate) fn grad_fn(&self) -> Option<&dyn Backward> {
        self.0.grad_fn.as_deref()
    }

    /// Reverse-mode gradients of this scalar with respect to every leaf that
    /// requires a gradient. The returned gradients carry no history.
    pub fn backward(&self) -> Gradients {
        no_grad(|| backprop(self, &HashSet::new()).0)
    }

    /// Like [`Tensor::backward`] but records the backward computation, so the
    /// returned gradients can be differentiated again.
    pub fn backward_with_graph(&self) -> Gradients {
        let prev = GRAD_ENABLED.with(|g| g.replace(true));
        let out = backprop(self, &HashSet::new()).0;
        GRAD_ENABLED.with(|g| g.set(prev));
        out
    }

    /// Gradients of this scalar with respect to arbitrary tensors in its
    /// history (leaves or intermediates). Unreached tensors get zeros. With
    /// `create_graph` the results are differentiable.
    pub fn grad(&self, wrt: &[&Tensor], create_graph: bool) -> Vec<Tensor> {
        let keep: HashSet<usize> = wrt.iter().map(|t| t.id()).collect();
        let prev = GRAD_ENABLED.with(|g| g.replace(create_graph));
        let (leaves, retained) = backprop(self, &keep);
        GRAD_ENABLED.with(|g| g.set(prev));
        wrt.iter()
            .map(|t| {
                retained
                    .get(&t.id())
                    .or_else(|| leaves.map.get(&t.id()))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect()
    }
}

/// Leaf gradients keyed by tensor id.
#[derive(Default, Clone)]
pub struct Gradients {
    map: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        self.map.get(&t.id())
    }

    /// Gradient for `t`, or zeros of its shape when `t` did not influence the root.
    pub fn get_or_zeros(&self, t: &Tensor) -> Tensor {
        self.get(t).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Elementwise sum of two gradient sets (used to accumulate passes).
    pub fn accumulate(&mut self, other: Gradients) {
        for (id, g) in other.map {
            match self.map.remove(&id) {
                Some(prev) => {
                    self.map.insert(id, prev.add(&g));
                }
                None => {
                    self.map.insert(id, g);
                }
            }
        }
    }
}

fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    // (node, children pushed?)
    let mut stack = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        let Some(f) = node.grad_fn() else { continue };
        let inputs: Vec<Tensor> = f.inputs().into_iter().cloned().collect();
        stack.push((node, true));
        for inp in inputs {
            if inp.requires_grad() && !visited.contains(&inp.id()) {
                stack.push((inp, false));
            }
        }
    }
    order
}

fn backprop(root: &Tensor, keep: &HashSet<usize>) -> (Gradients, HashMap<usize, Tensor>) {
    assert_eq!(root.numel(), 1, "backward() needs a scalar root, got shape {:?}", root.shape());
    let mut grads: HashMap<usize, Tensor> = HashMap::new();
    let mut retained = HashMap::new();
    if !root.requires_grad() {
        return (Gradients::default(), retained);
    }
    grads.insert(root.id(), Tensor::ones(root.shape()));
    let order = topo_order(root);
    for node in order.iter().rev() {
        let Some(g) = grads.remove(&node.id()) else { continue };
        if keep.contains(&node.id()) {
            retained.insert(node.id(), g.clone());
        }
        let f = node.grad_fn().expect("topo order only holds non-leaf nodes");
        let inputs: Vec<Tensor> = f.inputs().into_iter().cloned().collect();
        let input_grads = f.backward(node, &g);
        debug_assert_eq!(inputs.len(), input_grads.len());
        for (inp, ig) in inputs.iter().zip(input_grads) {
            let Some(ig) = ig else { continue };
            if !inp.requires_grad() {
                continue;
            }
            debug_assert_eq!(ig.shape(), inp.shape());
            let acc = match grads.remove(&inp.id()) {
                Some(prev) => prev.add(&ig),
                None => ig,
            };
            grads.insert(inp.id(), acc);
        }
    }
    (Gradients { map: grads }, retained)
}
