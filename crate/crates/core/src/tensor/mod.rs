//! Reverse-mode automatic differentiation over 2-D `f64` arrays.
//!
//! Every value in the trainable part of the pipeline is a [`Tensor`]: a
//! reference-counted node holding an `Array2<f64>`, its parents, and a
//! backward closure. Feature grids are stored flattened as `(h*w, channels)`
//! rows so attention, convolution (via im2col) and projections are all plain
//! matrix ops. Scalars are `(1, 1)` tensors.
//!
//! Graphs are rebuilt on every forward pass; node ids are monotone, so
//! processing reachable nodes in descending id order is a valid reverse
//! topological order for backprop.

mod ops;
mod optim;

pub use ops::softmax_array as softmax_probs;
pub use optim::Adam;

use ndarray::Array2;
use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

type BackwardFn = Box<dyn Fn(&Array2<f64>) -> Vec<Array2<f64>>>;

pub(crate) struct Node {
    id: u64,
    data: RefCell<Array2<f64>>,
    grad: RefCell<Option<Array2<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Handle to a node in the computation graph.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Node>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Tensor({r}x{c}, grad={})", self.0.requires_grad)
    }
}

impl Tensor {
    fn new(data: Array2<f64>, parents: Vec<Tensor>, backward: Option<BackwardFn>) -> Tensor {
        let requires_grad = backward.is_some() && parents.iter().any(|p| p.0.requires_grad);
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            parents: if requires_grad { parents } else { Vec::new() },
            backward: if requires_grad { backward } else { None },
            requires_grad,
        }))
    }

    /// A node that carries no gradient (frozen inputs, masks, priors).
    pub fn constant(data: Array2<f64>) -> Tensor {
        Tensor::new(data, Vec::new(), None)
    }

    /// A trainable leaf; gradients accumulate here across backward passes.
    pub fn param(data: Array2<f64>) -> Tensor {
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
        }))
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(Array2::from_elem((1, 1), v))
    }

    pub fn data(&self) -> Ref<'_, Array2<f64>> {
        self.0.data.borrow()
    }

    pub fn to_array(&self) -> Array2<f64> {
        self.0.data.borrow().clone()
    }

    pub fn value(&self) -> f64 {
        let d = self.0.data.borrow();
        debug_assert_eq!(d.len(), 1, "value() on non-scalar tensor");
        d[(0, 0)]
    }

    pub fn shape(&self) -> (usize, usize) {
        let d = self.0.data.borrow();
        (d.nrows(), d.ncols())
    }

    pub fn rows(&self) -> usize {
        self.0.data.borrow().nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.data.borrow().ncols()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Replace the stored value (optimizer updates, finite differences).
    pub fn set_data(&self, data: Array2<f64>) {
        *self.0.data.borrow_mut() = data;
    }

    pub fn grad(&self) -> Option<Array2<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn accumulate_grad(&self, g: Array2<f64>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => *acc += &g,
            None => *slot = Some(g),
        }
    }

    /// Backpropagate from this scalar node. Leaf gradients accumulate until
    /// explicitly cleared, so batches may sum losses before a single call.
    pub fn backward(&self) {
        assert_eq!(self.shape(), (1, 1), "backward() requires a scalar loss");
        let mut reachable: BTreeMap<u64, Tensor> = BTreeMap::new();
        collect(self, &mut reachable);
        self.accumulate_grad(Array2::from_elem((1, 1), 1.0));
        for (_, node) in reachable.iter().rev() {
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            let grad = node.0.grad.borrow().clone();
            let Some(grad) = grad else { continue };
            let parent_grads = backward(&grad);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                if parent.0.requires_grad {
                    parent.accumulate_grad(pg);
                }
            }
            // Interior grads are no longer needed once propagated.
            if node.0.backward.is_some() {
                *node.0.grad.borrow_mut() = None;
            }
        }
    }

    /// Number of gradient-tracked interior nodes reachable from this tensor.
    /// Used to compare wiring between model variants.
    pub fn graph_size(&self) -> usize {
        let mut reachable = BTreeMap::new();
        collect(self, &mut reachable);
        reachable
            .values()
            .filter(|t| t.0.backward.is_some())
            .count()
    }
}

fn collect(t: &Tensor, out: &mut BTreeMap<u64, Tensor>) {
    if !t.0.requires_grad || out.contains_key(&t.0.id) {
        return;
    }
    out.insert(t.0.id, t.clone());
    for p in &t.0.parents {
        collect(p, out);
    }
}

/// Named collection of trainable parameters with deterministic iteration
/// order. The registration order is the canonical order used by the
/// optimizer and checkpoints.
#[derive(Default)]
pub struct ParamStore {
    names: Vec<String>,
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, t: Tensor) -> Tensor {
        assert!(t.0.requires_grad, "registering non-trainable tensor {name}");
        assert!(
            self.params.insert(name.to_string(), t.clone()).is_none(),
            "duplicate parameter name {name}"
        );
        self.names.push(name.to_string());
        t
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| (n.as_str(), &self.params[n]))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.iter().map(|(_, t)| t.data().len()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in self.iter() {
            t.zero_grad();
        }
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        let mut sq = 0.0;
        for (_, t) in self.iter() {
            if let Some(g) = t.0.grad.borrow().as_ref() {
                sq += g.iter().map(|v| v * v).sum::<f64>();
            }
        }
        sq.sqrt()
    }

    /// Scale all gradients so the global norm does not exceed `max_norm`.
    pub fn clip_grad_norm(&self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for (_, t) in self.iter() {
                if let Some(g) = t.0.grad.borrow_mut().as_mut() {
                    g.mapv_inplace(|v| v * s);
                }
            }
        }
        norm
    }
}
