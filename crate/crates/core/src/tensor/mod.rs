//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The design is a single-threaded dynamic graph: every differentiable
//! operation allocates a fresh output tensor holding a backward record
//! (parent handles plus a closure that routes the output gradient to the
//! parents). [`Tensor::backward`] walks the graph in reverse topological
//! order, keeps intermediate gradients in a transient store, and deposits
//! final gradients only into leaf tensors created with
//! [`Tensor::requires_grad`]. Leaf gradients accumulate across backward
//! calls until [`Tensor::zero_grad`].
//!
//! Tensors are `!Send` by construction (`Rc` handles): a tensor carrying a
//! backprop record cannot leave the thread that owns the graph. Raw data
//! intended for cross-thread movement lives outside this type (see
//! `data::LabeledDataset`).
//!
//! Parameters must not be mutated between a forward pass and the matching
//! `backward`; backward closures read parent data in place instead of
//! snapshotting it.

mod element;
pub mod gradcheck;
mod ops;

pub use element::Element;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static NO_GRAD_DEPTH: Cell<u32> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

fn grad_disabled() -> bool {
    NO_GRAD_DEPTH.with(|c| c.get() > 0)
}

/// Run `f` with graph recording disabled; forwards inside build no backward
/// records regardless of `requires_grad` flags.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    NO_GRAD_DEPTH.with(|c| c.set(c.get() + 1));
    struct Guard;
    impl Drop for Guard {
        fn drop(&mut self) {
            NO_GRAD_DEPTH.with(|c| c.set(c.get() - 1));
        }
    }
    let _guard = Guard;
    f()
}

pub(crate) type BackwardFn<E> = Box<dyn Fn(&[E], &[Tensor<E>], &mut GradStore<E>)>;

pub(crate) struct Node<E: Element> {
    parents: Vec<Tensor<E>>,
    backward: BackwardFn<E>,
}

struct TensorInner<E: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<E>>,
    grad: RefCell<Option<Vec<E>>>,
    requires_grad: bool,
    node: Option<Node<E>>,
}

/// Transient gradient buffers keyed by tensor id, alive for one backward pass.
pub(crate) struct GradStore<E: Element> {
    map: HashMap<u64, Vec<E>>,
}

impl<E: Element> GradStore<E> {
    fn new() -> Self {
        GradStore { map: HashMap::new() }
    }

    /// Add `contrib` to the gradient accumulating for `t`. No-op when no
    /// gradient can flow through `t`.
    pub(crate) fn accumulate(&mut self, t: &Tensor<E>, contrib: Vec<E>) {
        if !t.needs_grad() {
            return;
        }
        debug_assert_eq!(contrib.len(), t.numel());
        match self.map.entry(t.id()) {
            std::collections::hash_map::Entry::Occupied(mut e) => {
                for (a, b) in e.get_mut().iter_mut().zip(contrib.iter()) {
                    *a += *b;
                }
            }
            std::collections::hash_map::Entry::Vacant(v) => {
                v.insert(contrib);
            }
        }
    }

    fn take(&mut self, id: u64) -> Option<Vec<E>> {
        self.map.remove(&id)
    }
}

pub struct Tensor<E: Element> {
    inner: Rc<TensorInner<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Element> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor<{}>(id={}, shape={:?}, grad={})",
            E::NAME,
            self.inner.id,
            self.inner.shape,
            if self.inner.requires_grad { "param" } else { "-" },
        )
    }
}

impl<E: Element> Tensor<E> {
    fn new_inner(shape: Vec<usize>, data: Vec<E>, requires_grad: bool, node: Option<Node<E>>) -> Self {
        Tensor {
            inner: Rc::new(TensorInner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                node,
            }),
        }
    }

    /// Leaf tensor from explicit data. Fails if the shape does not cover the
    /// data exactly.
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "from_vec",
                msg: format!("shape {:?} holds {} elements, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self::new_inner(shape.to_vec(), data, false, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self::new_inner(shape.to_vec(), vec![E::zero(); numel], false, None)
    }

    pub fn full(shape: &[usize], v: E) -> Self {
        let numel: usize = shape.iter().product();
        Self::new_inner(shape.to_vec(), vec![v; numel], false, None)
    }

    pub fn scalar(v: E) -> Self {
        Self::new_inner(vec![1], vec![v], false, None)
    }

    /// Mark a leaf as a trainable parameter. Consumes the handle; panics if
    /// called on a non-leaf (that is a programming error, not a data error).
    pub fn requires_grad(self) -> Self {
        assert!(
            self.inner.node.is_none(),
            "requires_grad is only valid on leaf tensors"
        );
        let inner = match Rc::try_unwrap(self.inner) {
            Ok(inner) => inner,
            Err(rc) => TensorInner {
                id: rc.id,
                shape: rc.shape.clone(),
                data: RefCell::new(rc.data.borrow().clone()),
                grad: RefCell::new(None),
                requires_grad: true,
                node: None,
            },
        };
        Tensor {
            inner: Rc::new(TensorInner {
                requires_grad: true,
                ..inner
            }),
        }
    }

    /// Result of a differentiable op. Degrades to a plain constant when
    /// gradients are disabled or no parent can receive one.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<E>,
        parents: Vec<Tensor<E>>,
        backward: BackwardFn<E>,
    ) -> Self {
        let numel: usize = shape.iter().product();
        debug_assert_eq!(numel, data.len());
        if grad_disabled() || !parents.iter().any(|p| p.needs_grad()) {
            return Self::new_inner(shape, data, false, None);
        }
        Self::new_inner(shape, data, false, Some(Node { parents, backward }))
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub fn is_param(&self) -> bool {
        self.inner.requires_grad
    }

    /// Whether a gradient can flow through or into this tensor.
    pub(crate) fn needs_grad(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    pub fn data(&self) -> Ref<'_, Vec<E>> {
        self.inner.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<E>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.borrow().clone()
    }

    /// Scalar value of a 1-element tensor.
    pub fn item(&self) -> E {
        let data = self.inner.data.borrow();
        assert_eq!(data.len(), 1, "item() requires a scalar tensor");
        data[0]
    }

    /// Copy of the data as a fresh constant leaf (no grad, no graph).
    pub fn detach(&self) -> Tensor<E> {
        Self::new_inner(self.inner.shape.clone(), self.to_vec(), false, None)
    }

    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    fn deposit_grad(&self, contrib: Vec<E>) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contrib.iter()) {
                    *a += *b;
                }
            }
            None => *slot = Some(contrib),
        }
    }

    /// Reverse-mode gradient accumulation from a scalar loss into every
    /// reachable parameter. Repeated calls without `zero_grad` keep adding.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }

        // Reverse post-order DFS over backward records = topological order.
        let mut visited: HashSet<u64> = HashSet::new();
        let mut leaves: Vec<Tensor<E>> = Vec::new();
        let mut order: Vec<Tensor<E>> = Vec::new();
        let mut stack: Vec<(Tensor<E>, usize)> = Vec::new();

        visited.insert(self.id());
        if self.inner.node.is_some() {
            stack.push((self.clone(), 0));
        } else if self.inner.requires_grad {
            leaves.push(self.clone());
        }

        while let Some((t, pi)) = stack.pop() {
            let node = t.inner.node.as_ref().expect("stack holds op tensors only");
            if pi < node.parents.len() {
                let parent = node.parents[pi].clone();
                stack.push((t, pi + 1));
                if visited.insert(parent.id()) {
                    if parent.inner.node.is_some() {
                        stack.push((parent, 0));
                    } else if parent.inner.requires_grad {
                        leaves.push(parent);
                    }
                }
            } else {
                order.push(t);
            }
        }

        let mut store = GradStore::new();
        store.map.insert(self.id(), vec![E::one()]);
        for t in order.iter().rev() {
            let Some(g) = store.take(t.id()) else {
                continue;
            };
            let node = t.inner.node.as_ref().expect("order holds op tensors only");
            (node.backward)(&g, &node.parents, &mut store);
        }
        for leaf in &leaves {
            if let Some(g) = store.take(leaf.id()) {
                leaf.deposit_grad(g);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
