use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::ops::Op;
use super::TensorError;
use crate::scalar::Real;

pub(crate) struct Node<T: Real> {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: RefCell<Vec<T>>,
    pub(crate) grad: RefCell<Option<Vec<T>>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Option<Op<T>>,
}

/// Dense row-major tensor participating in a reverse-mode graph.
///
/// Cloning is cheap and yields a handle to the same node. Leaves created with
/// [`Tensor::parameter`] accumulate gradients across [`Tensor::backward`] calls
/// until [`Tensor::zero_grad`].
pub struct Tensor<T: Real>(pub(crate) Rc<Node<T>>);

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op.as_ref().map(Op::name))
            .finish()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<(), TensorError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(TensorError::DataLength {
            shape: shape.to_vec(),
            len,
        });
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    /// Constant (non-differentiable) tensor.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        check_len(shape, data.len())?;
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// Trainable leaf; gradients accumulate into it during backward.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        check_len(shape, data.len())?;
        Ok(Self::leaf(shape.to_vec(), data, true))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        let n = shape.iter().product();
        Self::new(shape, vec![T::zero(); n])
    }

    pub fn ones(shape: &[usize]) -> Result<Self, TensorError> {
        let n = shape.iter().product();
        Self::new(shape, vec![T::one(); n])
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(vec![1], vec![value], false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            op: None,
        }))
    }

    /// Result of an operation. The node only records `op` when some input
    /// requires a gradient, so inference builds no graph.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = op.inputs().iter().any(|t| t.requires_grad());
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            op: requires_grad.then_some(op),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn len(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    /// Mutable access to the values. Intended for optimizers and tests that
    /// perturb leaves; mutating a tensor after it fed a graph invalidates
    /// that graph's backward pass.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T, TensorError> {
        if self.len() != 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        Ok(self.0.data.borrow()[0])
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Detached copy of the values with no graph history.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.to_vec(), false)
    }

    pub fn ptr_eq(&self, other: &Self) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> *const Node<T> {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a scalar. Every reachable trainable leaf has
    /// the gradient added to whatever it already holds.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.len() != 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let index: HashMap<*const Node<T>, usize> =
            order.iter().enumerate().map(|(i, t)| (t.key(), i)).collect();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; order.len()];
        let root = order.len() - 1;
        grads[root] = Some(vec![T::one()]);

        for i in (0..order.len()).rev() {
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let node = &order[i];
            match &node.0.op {
                None => {
                    if node.requires_grad() {
                        let mut slot = node.0.grad.borrow_mut();
                        match slot.as_mut() {
                            Some(acc) => acc.iter_mut().zip(&upstream).for_each(|(a, g)| *a += *g),
                            None => *slot = Some(upstream),
                        }
                    }
                }
                Some(op) => {
                    let out = node.0.data.borrow();
                    for (input, g) in op.backward(&node.0.shape, &out, &upstream) {
                        if !input.requires_grad() {
                            continue;
                        }
                        let j = index[&input.key()];
                        match grads[j].as_mut() {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                            None => grads[j] = Some(g),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over nodes that require gradients; the root is last.
    fn topological_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = &t.0.op {
                for input in op.inputs().into_iter().rev() {
                    if input.requires_grad() && !visited.contains(&input.key()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}
