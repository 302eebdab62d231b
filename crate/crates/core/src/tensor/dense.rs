use std::fmt;
use std::ops::Range;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::error::{invalid, shape_err, Result};
use crate::Scalar;

/// Dense row-major n-dimensional array.
///
/// A rank-0 tensor (empty shape) holds exactly one value.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, &n) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= n;
    }
    strides
}

/// Trailing-axis aligned broadcast with size-1 expansion.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return shape_err(format!("shapes {a:?} and {b:?} are not broadcastable")),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out_shape`, with zero stride on broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = strides_of(shape);
    let offset = out_shape.len() - shape.len();
    (0..out_shape.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Walks every flat output index together with the matching flat offsets of
/// the two broadcast operands.
fn for_each_broadcast(out_shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel(out_shape);
    if n == 0 {
        return;
    }
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for flat in 0..n {
        f(flat, oa, ob);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            oa -= sa[ax] * idx[ax];
            ob -= sb[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(&shape),
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let data = vec![value; numel(&shape)];
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self { shape: vec![rows.len(), cols], data: rows.concat() }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(&mut f).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return shape_err(format!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch for shape {:?}", self.shape);
        let mut off = 0;
        for (&i, &n) in index.iter().zip(&self.shape) {
            assert!(i < n, "index {index:?} out of bounds for shape {:?}", self.shape);
            off = off * n + i;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        Ok(Self { shape, data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Pointwise binary operation under trailing-axis broadcasting.
    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Self { shape: self.shape.clone(), data });
        }
        let out_shape = broadcast_shapes(&self.shape, &other.shape)?;
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        let mut data = vec![T::zero(); numel(&out_shape)];
        for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
            data[o] = f(self.data[ia], other.data[ib]);
        });
        Ok(Self { shape: out_shape, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign_tensor(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(format!("accumulate {:?} into {:?}", other.shape, self.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Sums a broadcast result back down to `shape` (the reverse of broadcasting).
    pub fn sum_to(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let check = broadcast_shapes(shape, &self.shape)?;
        if check != self.shape {
            return shape_err(format!("cannot reduce {:?} to {shape:?}", self.shape));
        }
        let target = broadcast_strides(shape, &self.shape);
        let zero = vec![0; self.shape.len()];
        let mut out = Self::zeros(shape.to_vec());
        for_each_broadcast(&self.shape, &target, &zero, |o, it, _| {
            out.data[it] += self.data[o];
        });
        Ok(out)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize_lossy(self.data.len())
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return invalid(format!("axis {axis} out of range for shape {:?}", self.shape));
        }
        let (outer, n, inner) = self.split_at_axis(axis);
        let mut out_shape = self.shape.clone();
        out_shape.remove(axis);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &self.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, &s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Ok(Self { shape: out_shape, data })
    }

    pub(crate) fn split_at_axis(&self, axis: usize) -> (usize, usize, usize) {
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        (outer, self.shape[axis], inner)
    }

    /// Softmax along `axis`, stabilised by subtracting the per-lane maximum.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return invalid(format!("axis {axis} out of range for shape {:?}", self.shape));
        }
        let (outer, n, inner) = self.split_at_axis(axis);
        if n == 0 {
            return invalid("softmax over an empty axis");
        }
        let mut out = self.clone();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let mut mx = T::neg_infinity();
                for k in 0..n {
                    mx = mx.max(self.data[at(k)]);
                }
                let mut total = T::zero();
                for k in 0..n {
                    let e = (self.data[at(k)] - mx).exp();
                    out.data[at(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    out.data[at(k)] /= total;
                }
            }
        }
        Ok(out)
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Self> {
        if self.rank() != 2 {
            return shape_err(format!("transpose expects a matrix, got shape {:?}", self.shape));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self { shape: vec![c, r], data })
    }

    /// Matrix product. Either operand may carry one leading batch axis; when
    /// both do, batch sizes must agree.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let plan = MatmulPlan::new(&self.shape, &other.shape)?;
        let mut out = Self::zeros(plan.out_shape());
        plan.forward(&self.data, &other.data, &mut out.data);
        Ok(out)
    }

    /// Concatenates tensors along `axis`; all other axes must agree.
    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = match parts.first() {
            Some(p) => p,
            None => return invalid("concat of zero tensors"),
        };
        if axis >= first.rank() {
            return invalid(format!("axis {axis} out of range for shape {:?}", first.shape));
        }
        for p in parts {
            let same = p.rank() == first.rank()
                && p.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return shape_err(format!("concat along axis {axis}: {:?} vs {:?}", first.shape, p.shape));
            }
        }
        let outer = numel(&first.shape[..axis]);
        let inner = numel(&first.shape[axis + 1..]);
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut shape = first.shape.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let w = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * w..(o + 1) * w]);
            }
        }
        Ok(Self { shape, data })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[&Self]) -> Result<Self> {
        let first = match parts.first() {
            Some(p) => p,
            None => return invalid("stack of zero tensors"),
        };
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return shape_err(format!("stack: {:?} vs {:?}", first.shape, p.shape));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    /// Sub-range along `axis`, keeping the axis.
    pub fn slice_axis(&self, axis: usize, range: Range<usize>) -> Result<Self> {
        if axis >= self.rank() || range.end > self.shape[axis] || range.start > range.end {
            return shape_err(format!("slice {range:?} on axis {axis} of {:?}", self.shape));
        }
        let (outer, n, inner) = self.split_at_axis(axis);
        let w = range.len();
        let mut data = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            data.extend_from_slice(&self.data[(o * n + range.start) * inner..(o * n + range.end) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = w;
        Ok(Self { shape, data })
    }

    /// Index `index` along `axis`, removing the axis.
    pub fn select(&self, axis: usize, index: usize) -> Result<Self> {
        let mut t = self.slice_axis(axis, index..index + 1)?;
        t.shape.remove(axis);
        Ok(t)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return shape_err(format!("compare {:?} with {:?}", self.shape, other.shape));
        }
        Ok(self.data.iter().zip(&other.data).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Shape bookkeeping for the batched matrix product.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatmulPlan {
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    p: usize,
}

impl MatmulPlan {
    pub(crate) fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let split = |s: &[usize]| -> Option<(Option<usize>, usize, usize)> {
            match s.len() {
                2 => Some((None, s[0], s[1])),
                3 => Some((Some(s[0]), s[1], s[2])),
                _ => None,
            }
        };
        let (Some((ba, m, k)), Some((bb, k2, p))) = (split(a), split(b)) else {
            return shape_err(format!("matmul expects rank-2 or rank-3 operands, got {a:?} and {b:?}"));
        };
        if k != k2 {
            return shape_err(format!("matmul inner dimensions differ: {a:?} x {b:?}"));
        }
        let batch = match (ba, bb) {
            (Some(x), Some(y)) if x != y => {
                return shape_err(format!("matmul batch sizes differ: {a:?} x {b:?}"));
            }
            (Some(x), _) | (None, Some(x)) => x,
            (None, None) => 1,
        };
        Ok(Self { batch, a_batched: ba.is_some(), b_batched: bb.is_some(), m, k, p })
    }

    pub(crate) fn out_shape(&self) -> Vec<usize> {
        if self.a_batched || self.b_batched {
            vec![self.batch, self.m, self.p]
        } else {
            vec![self.m, self.p]
        }
    }

    pub(crate) fn forward<T: Scalar>(&self, a: &[T], b: &[T], out: &mut [T]) {
        let (m, k, p) = (self.m, self.k, self.p);
        if self.a_batched && !self.b_batched {
            // Fold the batch into the row axis: one large product.
            gemm_nn(a, b, out, self.batch * m, k, p);
            return;
        }
        for bi in 0..self.batch {
            let ai = if self.a_batched { &a[bi * m * k..(bi + 1) * m * k] } else { a };
            let bj = if self.b_batched { &b[bi * k * p..(bi + 1) * k * p] } else { b };
            gemm_nn(ai, bj, &mut out[bi * m * p..(bi + 1) * m * p], m, k, p);
        }
    }

    /// Accumulates dA = dC · Bᵀ (summed over the batch when A is unbatched).
    pub(crate) fn grad_a<T: Scalar>(&self, grad: &[T], b: &[T], ga: &mut [T]) {
        let (m, k, p) = (self.m, self.k, self.p);
        if self.a_batched && !self.b_batched {
            gemm_nt(grad, b, ga, self.batch * m, p, k);
            return;
        }
        for bi in 0..self.batch {
            let g = &grad[bi * m * p..(bi + 1) * m * p];
            let bj = if self.b_batched { &b[bi * k * p..(bi + 1) * k * p] } else { b };
            let dst = if self.a_batched { bi * m * k..(bi + 1) * m * k } else { 0..m * k };
            gemm_nt(g, bj, &mut ga[dst], m, p, k);
        }
    }

    /// Accumulates dB = Aᵀ · dC (summed over the batch when B is unbatched).
    pub(crate) fn grad_b<T: Scalar>(&self, grad: &[T], a: &[T], gb: &mut [T]) {
        let (m, k, p) = (self.m, self.k, self.p);
        if self.a_batched && !self.b_batched {
            gemm_tn(a, grad, gb, k, self.batch * m, p);
            return;
        }
        for bi in 0..self.batch {
            let g = &grad[bi * m * p..(bi + 1) * m * p];
            let ai = if self.a_batched { &a[bi * m * k..(bi + 1) * m * k] } else { a };
            let dst = if self.b_batched { bi * k * p..(bi + 1) * k * p } else { 0..k * p };
            gemm_tn(ai, g, &mut gb[dst], k, m, p);
        }
    }
}
