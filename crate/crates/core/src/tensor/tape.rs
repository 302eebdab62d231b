//! Define-by-run reverse-mode differentiation.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]. Operands are
//! always recorded before their consumers, so the node vector is already in
//! topological order and [`Tape::backward`] replays it in reverse.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::Range;
use std::rc::Rc;

use super::dense::MatmulPlan;
use super::params::{GradientMap, ParamId, ParamStore};
use super::Tensor;
use crate::error::{invalid, shape_err, Result};
use crate::Scalar;

#[derive(Clone, Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, T),
    AddScalar(usize),
    MatMul(usize, usize, MatmulPlan),
    Transpose(usize),
    Reshape(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Sqrt(usize),
    Square(usize),
    SumAll(usize),
    SumAxis(usize, usize),
    Concat(Vec<usize>, usize),
    Slice(usize, usize, Range<usize>),
    Softmax(usize, usize),
}

struct Node<T: Scalar> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recording of one forward pass.
pub struct Tape<T: Scalar = f64> {
    nodes: RefCell<Vec<Node<T>>>,
    param_nodes: RefCell<HashMap<ParamId, usize>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a recorded value.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar = f64> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), param_nodes: RefCell::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::Concat(ids, _) => ids.iter().any(|&i| nodes[i].needs_grad),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b, _) => {
                nodes[*a].needs_grad || nodes[*b].needs_grad
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::SumAll(a)
            | Op::SumAxis(a, _)
            | Op::Slice(a, _, _)
            | Op::Softmax(a, _) => nodes[*a].needs_grad,
        };
        nodes.push(Node { value: Rc::new(value), op, needs_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Records a value that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Constant)
    }

    /// Records a parameter. Trainable parameters receive a gradient entry;
    /// frozen ones behave as constants. Repeated calls return the same node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.param_nodes.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let value = store.get(id).clone();
        let var = if store.is_trainable(id) { self.push(value, Op::Param(id)) } else { self.constant(value) };
        self.param_nodes.borrow_mut().insert(id, var.id);
        var
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Concatenation along `axis`.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|v| v.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(Rc::as_ref).collect();
        let out = Tensor::concat(&refs, axis)?;
        Ok(self.push(out, Op::Concat(parts.iter().map(|v| v.id).collect(), axis)))
    }

    /// Stacks equally shaped values along a new leading axis.
    pub fn stack<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let lifted = parts
            .iter()
            .map(|v| {
                let mut shape = vec![1];
                shape.extend_from_slice(v.value().shape());
                v.reshape(shape)
            })
            .collect::<Result<Vec<_>>>()?;
        self.concat(&lifted, 0)
    }

    /// Reverse pass from a single-element loss.
    ///
    /// Every trainable parameter recorded on this tape gets exactly one entry,
    /// zero-filled when it did not influence the loss.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<GradientMap<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return invalid(format!("backward needs a scalar loss, got shape {:?}", root.value.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::ones(root.value.shape().to_vec()));

        fn acc<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
            match slot {
                Some(existing) => existing.add_assign_tensor(&g).expect("gradient shape matches value shape"),
                None => *slot = Some(g),
            }
        }

        let mut out = GradientMap::new();
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| -> &Tensor<T> { &nodes[i].value };
            let wants = |i: usize| nodes[i].needs_grad;
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => out.accumulate(*pid, g)?,
                Op::Add(a, b) => {
                    if wants(*a) {
                        acc(&mut grads[*a], g.sum_to(val(*a).shape())?);
                    }
                    if wants(*b) {
                        acc(&mut grads[*b], g.sum_to(val(*b).shape())?);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(*a) {
                        acc(&mut grads[*a], g.sum_to(val(*a).shape())?);
                    }
                    if wants(*b) {
                        acc(&mut grads[*b], g.map(|v| -v).sum_to(val(*b).shape())?);
                    }
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        acc(&mut grads[*a], g.mul(val(*b))?.sum_to(val(*a).shape())?);
                    }
                    if wants(*b) {
                        acc(&mut grads[*b], g.mul(val(*a))?.sum_to(val(*b).shape())?);
                    }
                }
                Op::Neg(a) => acc(&mut grads[*a], g.map(|v| -v)),
                Op::Scale(a, s) => {
                    let s = *s;
                    acc(&mut grads[*a], g.map(|v| v * s));
                }
                Op::AddScalar(a) => acc(&mut grads[*a], g),
                Op::MatMul(a, b, plan) => {
                    if wants(*a) {
                        let mut ga = Tensor::zeros(val(*a).shape().to_vec());
                        plan.grad_a(g.data(), val(*b).data(), ga.data_mut());
                        acc(&mut grads[*a], ga);
                    }
                    if wants(*b) {
                        let mut gb = Tensor::zeros(val(*b).shape().to_vec());
                        plan.grad_b(g.data(), val(*a).data(), gb.data_mut());
                        acc(&mut grads[*b], gb);
                    }
                }
                Op::Transpose(a) => acc(&mut grads[*a], g.transpose()?),
                Op::Reshape(a) => acc(&mut grads[*a], g.reshape(val(*a).shape().to_vec())?),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(&mut grads[*a], g.zip_with(y, |gv, yv| gv * yv * (T::one() - yv))?);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(&mut grads[*a], g.zip_with(y, |gv, yv| gv * (T::one() - yv * yv))?);
                }
                Op::Exp(a) => acc(&mut grads[*a], g.mul(&node.value)?),
                Op::Sqrt(a) => {
                    let two = T::lit(2.0);
                    acc(&mut grads[*a], g.zip_with(&node.value, |gv, yv| gv / (two * yv))?);
                }
                Op::Square(a) => {
                    let two = T::lit(2.0);
                    acc(&mut grads[*a], g.zip_with(val(*a), |gv, xv| two * gv * xv)?);
                }
                Op::SumAll(a) => {
                    let gv = g.item()?;
                    acc(&mut grads[*a], Tensor::full(val(*a).shape().to_vec(), gv));
                }
                Op::SumAxis(a, axis) => {
                    let mut kept = val(*a).shape().to_vec();
                    kept[*axis] = 1;
                    let expanded = g.reshape(kept)?.zip_with(val(*a), |gv, _| gv)?;
                    acc(&mut grads[*a], expanded);
                }
                Op::Concat(ids, axis) => {
                    let mut start = 0;
                    for &i in ids {
                        let w = val(i).shape()[*axis];
                        if wants(i) {
                            acc(&mut grads[i], g.slice_axis(*axis, start..start + w)?);
                        }
                        start += w;
                    }
                }
                Op::Slice(a, axis, range) => {
                    let src = val(*a);
                    let (outer, n, inner) = src.split_at_axis(*axis);
                    let mut ga = Tensor::zeros(src.shape().to_vec());
                    let w = range.len();
                    for o in 0..outer {
                        let dst = &mut ga.data_mut()[(o * n + range.start) * inner..(o * n + range.end) * inner];
                        dst.copy_from_slice(&g.data()[o * w * inner..(o + 1) * w * inner]);
                    }
                    acc(&mut grads[*a], ga);
                }
                Op::Softmax(a, axis) => {
                    let y = &node.value;
                    let (outer, n, inner) = y.split_at_axis(*axis);
                    let mut ga = Tensor::zeros(y.shape().to_vec());
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * n + k) * inner + i;
                            let dot: T = (0..n).map(|k| g.data()[at(k)] * y.data()[at(k)]).sum();
                            for k in 0..n {
                                ga.data_mut()[at(k)] = y.data()[at(k)] * (g.data()[at(k)] - dot);
                            }
                        }
                    }
                    acc(&mut grads[*a], ga);
                }
            }
        }
        // Trainable parameters that were recorded but did not reach the loss.
        for node in nodes.iter() {
            if let Op::Param(pid) = node.op {
                if out.get(pid).is_none() {
                    out.insert(pid, Tensor::zeros(node.value.shape().to_vec()));
                }
            }
        }
        Ok(out)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn same_tape(&self, other: &Self) {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "operands recorded on different tapes");
    }

    pub fn add(&self, other: Self) -> Result<Self> {
        self.same_tape(&other);
        let out = self.value().add(&other.value())?;
        Ok(self.tape.push(out, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Self) -> Result<Self> {
        self.same_tape(&other);
        let out = self.value().sub(&other.value())?;
        Ok(self.tape.push(out, Op::Sub(self.id, other.id)))
    }

    /// Hadamard product with broadcasting.
    pub fn mul(&self, other: Self) -> Result<Self> {
        self.same_tape(&other);
        let out = self.value().mul(&other.value())?;
        Ok(self.tape.push(out, Op::Mul(self.id, other.id)))
    }

    pub fn neg(&self) -> Self {
        let out = self.value().map(|v| -v);
        self.tape.push(out, Op::Neg(self.id))
    }

    pub fn scale(&self, s: T) -> Self {
        let out = self.value().scale(s);
        self.tape.push(out, Op::Scale(self.id, s))
    }

    pub fn add_scalar(&self, s: T) -> Self {
        let out = self.value().map(|v| v + s);
        self.tape.push(out, Op::AddScalar(self.id))
    }

    /// `1 - x`
    pub fn one_minus(&self) -> Self {
        self.neg().add_scalar(T::one())
    }

    pub fn matmul(&self, other: Self) -> Result<Self> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let plan = MatmulPlan::new(a.shape(), b.shape())?;
        let mut out = Tensor::zeros(plan.out_shape());
        plan.forward(a.data(), b.data(), out.data_mut());
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id, plan)))
    }

    pub fn transpose(&self) -> Result<Self> {
        let out = self.value().transpose()?;
        Ok(self.tape.push(out, Op::Transpose(self.id)))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let out = self.value().reshape(shape)?;
        Ok(self.tape.push(out, Op::Reshape(self.id)))
    }

    pub fn sigmoid(&self) -> Self {
        let out = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        self.tape.push(out, Op::Sigmoid(self.id))
    }

    pub fn tanh(&self) -> Self {
        let out = self.value().map(|v| v.tanh());
        self.tape.push(out, Op::Tanh(self.id))
    }

    pub fn exp(&self) -> Self {
        let out = self.value().map(|v| v.exp());
        self.tape.push(out, Op::Exp(self.id))
    }

    pub fn sqrt(&self) -> Self {
        let out = self.value().map(|v| v.sqrt());
        self.tape.push(out, Op::Sqrt(self.id))
    }

    pub fn square(&self) -> Self {
        let out = self.value().map(|v| v * v);
        self.tape.push(out, Op::Square(self.id))
    }

    /// Sum of all entries, as a rank-0 value.
    pub fn sum(&self) -> Self {
        let out = Tensor::scalar(self.value().sum());
        self.tape.push(out, Op::SumAll(self.id))
    }

    pub fn mean(&self) -> Self {
        let n = T::from_usize_lossy(self.value().len());
        self.sum().scale(T::one() / n)
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        let out = self.value().sum_axis(axis)?;
        Ok(self.tape.push(out, Op::SumAxis(self.id, axis)))
    }

    pub fn slice_axis(&self, axis: usize, range: Range<usize>) -> Result<Self> {
        let out = self.value().slice_axis(axis, range.clone())?;
        Ok(self.tape.push(out, Op::Slice(self.id, axis, range)))
    }

    /// Index along `axis`, removing it.
    pub fn select(&self, axis: usize, index: usize) -> Result<Self> {
        let mut shape = self.shape();
        if axis >= shape.len() {
            return shape_err(format!("select axis {axis} of {shape:?}"));
        }
        let sliced = self.slice_axis(axis, index..index + 1)?;
        shape.remove(axis);
        sliced.reshape(shape)
    }

    pub fn softmax(&self, axis: usize) -> Result<Self> {
        let out = self.value().softmax(axis)?;
        Ok(self.tape.push(out, Op::Softmax(self.id, axis)))
    }
}
