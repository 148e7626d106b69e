//! Dense tensors, vector geometry and gradient checking.

mod gradcheck;
pub mod itsr;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use tensor::{DType, ElementOp, Tensor};

use crate::error::{Error, Result};

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.is_empty() {
        return Err(Error::Shape(format!(
            "cosine needs two non-empty vectors of equal length, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return Err(Error::DegenerateEmbedding(format!(
            "vector norms {nu} and {nv}; both must be finite and nonzero"
        )));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}
