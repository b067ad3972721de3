//! A small double-precision tensor with reverse-mode differentiation.
//!
//! Tensors are immutable, reference-counted graph nodes. Every differentiable
//! primitive records its parents and a closure computing vector-Jacobian
//! products; [`DiffTensor::backward`] walks the graph in reverse topological
//! order and accumulates gradients into the leaves. There is no batch axis and
//! no broadcasting beyond scalar multiplication.
//!
//! Graphs are single-threaded (`Rc`); independent graphs can be evaluated on
//! different threads.

mod conv;
mod fft;
pub mod gradcheck;
mod ops;
mod optim;
mod sparse;

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use conv::{conv2d, max_pool2d, max_pool2d_centered, upsample_bilinear};
pub use fft::correlate_fft;
pub use ops::{
    add, add_channel_bias, cross_entropy, elu, matmul, mix_channels, mul, reshape, scale,
    softmax, spatial_mean, sum,
};
pub use optim::{adam_step, AdamState};
pub use sparse::{linear_map, SparseMap};

pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[DiffTensor]) -> Vec<Option<Vec<f64>>>>;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static LIVE_BYTES: Cell<usize> = const { Cell::new(0) };
    static PEAK_BYTES: Cell<usize> = const { Cell::new(0) };
}

/// Run `f` without recording any differentiation graph.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Accounting of tensor payload bytes alive on the current thread.
pub mod memory {
    use super::{LIVE_BYTES, PEAK_BYTES};

    pub fn live_bytes() -> usize {
        LIVE_BYTES.with(|b| b.get())
    }

    pub fn peak_bytes() -> usize {
        PEAK_BYTES.with(|b| b.get())
    }

    /// Reset the high-water mark to the current live size.
    pub fn reset_peak() {
        let live = live_bytes();
        PEAK_BYTES.with(|p| p.set(live));
    }

    pub(super) fn alloc(bytes: usize) {
        let live = LIVE_BYTES.with(|b| {
            let v = b.get() + bytes;
            b.set(v);
            v
        });
        PEAK_BYTES.with(|p| p.set(p.get().max(live)));
    }

    pub(super) fn free(bytes: usize) {
        LIVE_BYTES.with(|b| b.set(b.get().saturating_sub(bytes)));
    }
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<DiffTensor>,
    backward: Option<BackwardFn>,
}

impl Drop for Node {
    fn drop(&mut self) {
        memory::free(self.data.len() * std::mem::size_of::<f64>());
    }
}

/// An n-dimensional array participating in reverse-mode differentiation.
#[derive(Clone)]
pub struct DiffTensor(Rc<Node>);

impl fmt::Debug for DiffTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffTensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} needs {n} values, got {len}"
        )));
    }
    Ok(())
}

impl DiffTensor {
    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        check_len(&shape, data.len())?;
        memory::alloc(data.len() * std::mem::size_of::<f64>());
        Ok(DiffTensor(Rc::new(Node {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
        })))
    }

    /// A leaf that does not take part in differentiation.
    pub fn constant(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, false)
    }

    /// A trainable leaf; `backward` accumulates into its gradient buffer.
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::constant(shape, vec![0.0; n]).expect("valid shape")
    }

    pub fn scalar(value: f64) -> Self {
        Self::constant(&[1], vec![value]).expect("valid shape")
    }

    /// Result of a primitive. The backward closure is only kept when a parent
    /// requires a gradient and recording is enabled.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<DiffTensor>,
        backward: impl Fn(&[f64], &[DiffTensor]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> DiffTensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        memory::alloc(data.len() * std::mem::size_of::<f64>());
        let (parents, backward): (Vec<DiffTensor>, Option<BackwardFn>) = if track {
            (parents, Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        DiffTensor(Rc::new(Node {
            shape,
            data,
            requires_grad: track,
            grad: RefCell::new(None),
            parents,
            backward,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on a tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, no history.
    pub fn detach(&self) -> DiffTensor {
        DiffTensor::constant(self.shape(), self.data().to_vec()).expect("valid tensor")
    }

    /// Same values as a fresh trainable leaf.
    pub fn to_parameter(&self) -> DiffTensor {
        DiffTensor::parameter(self.shape(), self.data().to_vec()).expect("valid tensor")
    }

    fn ptr(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    /// Back-propagate from a scalar. Leaf gradients accumulate across calls.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let mut grads: HashMap<*const Node, Vec<f64>> = HashMap::new();
        grads.insert(self.ptr(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.ptr()) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(f) => {
                    let parent_grads = f(&g, &node.0.parents);
                    for (p, pg) in node.0.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.len());
                        match grads.get_mut(&p.ptr()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(p.ptr(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes that require a gradient, parents before children.
    fn topological_order(&self) -> Vec<DiffTensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(DiffTensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.ptr()) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in &node.0.parents {
                if p.requires_grad() && !visited.contains(&p.ptr()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}
