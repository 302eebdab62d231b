//! Singular value decomposition by one-sided (Hestenes) Jacobi rotations.

use crate::error::{invalid, Result};
use crate::tensor::Tensor;
use crate::Scalar;

const MAX_SWEEPS: usize = 80;

/// Thin decomposition `M ≈ U · diag(S) · Vᵀ`.
///
/// Singular values are descending and nonnegative; `U` and `V` have
/// orthonormal columns. Each column of `U` has its largest-magnitude entry
/// nonnegative.
#[derive(Clone, Debug)]
pub struct Svd<T: Scalar = f64> {
    pub u: Tensor<T>,
    pub s: Vec<T>,
    pub v: Tensor<T>,
}

impl<T: Scalar> Svd<T> {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U · diag(S) · Vᵀ`
    pub fn reconstruct(&self) -> Tensor<T> {
        let (r, k) = (self.u.shape()[0], self.s.len());
        let c = self.v.shape()[0];
        let mut us = self.u.clone();
        for i in 0..r {
            for j in 0..k {
                us.data_mut()[i * k + j] *= self.s[j];
            }
        }
        let mut out = Tensor::zeros(vec![r, c]);
        for i in 0..r {
            for j in 0..c {
                let mut acc = T::zero();
                for t in 0..k {
                    acc += us.data()[i * k + t] * self.v.data()[j * k + t];
                }
                out.data_mut()[i * c + j] = acc;
            }
        }
        out
    }
}

/// Full thin SVD: `rank = min(rows, cols)`.
pub fn svd<T: Scalar>(m: &Tensor<T>) -> Result<Svd<T>> {
    if m.rank() != 2 {
        return invalid(format!("svd expects a matrix, got shape {:?}", m.shape()));
    }
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    if rows == 0 || cols == 0 {
        return invalid(format!("svd of empty matrix {:?}", m.shape()));
    }
    if !m.all_finite() {
        return invalid("svd input contains non-finite values");
    }
    if rows >= cols {
        Ok(jacobi_tall(m))
    } else {
        let t = jacobi_tall(&m.transpose()?);
        let mut out = Svd { u: t.v, s: t.s, v: t.u };
        fix_signs(&mut out);
        Ok(out)
    }
}

/// Leading `rank` singular triplets.
pub fn truncated_svd<T: Scalar>(m: &Tensor<T>, rank: usize) -> Result<Svd<T>> {
    let min_dim = m.shape().iter().copied().min().unwrap_or(0);
    if m.rank() != 2 || rank > min_dim {
        return invalid(format!("rank {rank} exceeds the smaller dimension of {:?}", m.shape()));
    }
    if rank == 0 {
        return invalid("truncation rank must be positive");
    }
    let full = svd(m)?;
    Ok(truncate(&full, rank))
}

pub(crate) fn truncate<T: Scalar>(full: &Svd<T>, rank: usize) -> Svd<T> {
    let keep = |t: &Tensor<T>| {
        let (r, k) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(r * rank);
        for i in 0..r {
            data.extend_from_slice(&t.data()[i * k..i * k + rank]);
        }
        Tensor::new(vec![r, rank], data).expect("consistent truncation")
    };
    Svd { u: keep(&full.u), s: full.s[..rank].to_vec(), v: keep(&full.v) }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn jacobi_tall<T: Scalar>(m: &Tensor<T>) -> Svd<T> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    // Column-major working copies.
    let mut a: Vec<Vec<T>> = (0..cols).map(|j| (0..rows).map(|i| m.data()[i * cols + j]).collect()).collect();
    let mut v: Vec<Vec<T>> = (0..cols)
        .map(|j| (0..cols).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    let tol = T::epsilon() * T::from_usize_lossy(rows.max(4));

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<T> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));

    let largest = norms.iter().copied().fold(T::zero(), T::max);
    let null_tol = largest * T::epsilon() * T::from_usize_lossy(rows.max(cols));
    let mut u_cols: Vec<Vec<T>> = Vec::with_capacity(cols);
    let mut s = Vec::with_capacity(cols);
    let mut v_cols = Vec::with_capacity(cols);
    for &j in &order {
        let sigma = norms[j];
        if sigma > null_tol && sigma > T::zero() {
            u_cols.push(a[j].iter().map(|&x| x / sigma).collect());
            s.push(sigma);
        } else {
            u_cols.push(complete_basis(&u_cols, rows));
            s.push(T::zero());
        }
        v_cols.push(v[j].clone());
    }

    let to_tensor = |colsv: &[Vec<T>], r: usize| {
        let k = colsv.len();
        Tensor::from_fn(vec![r, k], |idx| colsv[idx % k][idx / k])
    };
    let mut out = Svd { u: to_tensor(&u_cols, rows), s, v: to_tensor(&v_cols, cols) };
    fix_signs(&mut out);
    out
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// A unit vector orthogonal to every column in `basis` (Gram-Schmidt over
/// the standard basis).
fn complete_basis<T: Scalar>(basis: &[Vec<T>], dim: usize) -> Vec<T> {
    let mut best: Option<(T, Vec<T>)> = None;
    for e in 0..dim {
        let mut cand = vec![T::zero(); dim];
        cand[e] = T::one();
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&cand, b);
                for (c, &bv) in cand.iter_mut().zip(b) {
                    *c -= proj * bv;
                }
            }
        }
        let norm = dot(&cand, &cand).sqrt();
        if best.as_ref().map_or(true, |(n, _)| norm > *n) {
            best = Some((norm, cand));
        }
        if norm > T::lit(0.5) {
            break;
        }
    }
    let (norm, mut v) = best.expect("dimension is positive");
    for x in v.iter_mut() {
        *x /= norm;
    }
    v
}

/// Makes the largest-magnitude entry of each left singular vector nonnegative.
fn fix_signs<T: Scalar>(svd: &mut Svd<T>) {
    let k = svd.s.len();
    let rows = svd.u.shape()[0];
    let vrows = svd.v.shape()[0];
    for j in 0..k {
        let mut best = 0;
        for i in 0..rows {
            if svd.u.data()[i * k + j].abs() > svd.u.data()[best * k + j].abs() {
                best = i;
            }
        }
        if svd.u.data()[best * k + j] < T::zero() {
            for i in 0..rows {
                svd.u.data_mut()[i * k + j] = -svd.u.data()[i * k + j];
            }
            for i in 0..vrows {
                svd.v.data_mut()[i * k + j] = -svd.v.data()[i * k + j];
            }
        }
    }
}
