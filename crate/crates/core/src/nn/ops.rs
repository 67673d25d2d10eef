use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::Real;
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Numerically guarded softmax: subtracts the maximum before exponentiating.
pub fn softmax<F: Real>(scores: &[F]) -> Result<Vec<F>> {
    if scores.is_empty() {
        return Err(Error::EmptySequence("softmax over zero scores"));
    }
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite softmax score {bad}")));
    }
    Ok(softmax_unchecked(scores))
}

pub(crate) fn softmax_unchecked<F: Real>(scores: &[F]) -> Vec<F> {
    let max = scores.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = scores.iter().map(|&z| (z - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Gradient of a loss with respect to softmax inputs, given the softmax
/// output `a` and the gradient `da` with respect to it.
pub fn softmax_backward<F: Real>(a: &[F], da: &[F]) -> Vec<F> {
    let inner: F = a.iter().zip(da).map(|(&ai, &gi)| ai * gi).sum();
    a.iter().zip(da).map(|(&ai, &gi)| ai * (gi - inner)).collect()
}

/// Row-wise log-softmax.
pub fn log_softmax_rows<F: Real>(x: ArrayView2<F>) -> Array2<F> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Eight-lane dot product; lane order is fixed so results are reproducible.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out += v · M` for row-major `M` with `v.len()` rows and `out.len()` columns.
#[inline]
pub fn vec_mat_acc<F: Real>(out: &mut [F], v: &[F], m: &[F]) {
    let cols = out.len();
    debug_assert_eq!(m.len(), v.len() * cols);
    for (i, &vi) in v.iter().enumerate() {
        let row = &m[i * cols..(i + 1) * cols];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += vi * w;
        }
    }
}

/// `out += M · v` for row-major `M` with `out.len()` rows and `v.len()` columns.
#[inline]
pub fn mat_vec_acc<F: Real>(out: &mut [F], m: &[F], v: &[F]) {
    let cols = v.len();
    debug_assert_eq!(m.len(), out.len() * cols);
    for (i, o) in out.iter_mut().enumerate() {
        *o += dot(&m[i * cols..(i + 1) * cols], v);
    }
}

/// `x · W + b` with `b` broadcast across rows.
pub fn affine<F: Real>(x: ArrayView2<F>, w: ArrayView2<F>, b: ArrayView1<F>) -> Array2<F> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

pub fn column_sums<F: Real>(x: ArrayView2<F>) -> Array1<F> {
    x.sum_axis(Axis(0))
}

pub(crate) fn check_shape(what: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Dimension(format!("{what}: expected {want:?}, got {got:?}")))
    }
}
