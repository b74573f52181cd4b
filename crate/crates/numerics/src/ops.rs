//! Value-level entry points for the differentiable primitives.
//!
//! These run on a throwaway [`Tape`] so they share one implementation with
//! the training path.

use crate::error::{shape_err, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Softmax along `axis`; every slice sums to one.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    x.softmax(axis)
}

/// Single-head `softmax(QKᵀ/√d_k + mask)·V`. `mask` is row-major
/// `queries × keys`, `true` meaning visible.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    if q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(shape_err("scaled_dot_attention", format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape())));
    }
    let tape = Tape::new();
    let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let out = tape.attention(qv, kv, vv, 1, mask)?;
    Ok(out.value().as_ref().clone())
}

/// `Σᵢ wᵢ · (−log softmax(logitsᵢ)[targetᵢ])`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], weights: &[f64]) -> Result<f64> {
    let tape = Tape::new();
    let l = tape.constant(logits.clone());
    Ok(l.cross_entropy(targets, weights)?.item())
}
