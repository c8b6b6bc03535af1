//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::finite_difference_check;
pub use graph::{one_hot, Attrs, Gradients, Graph, Var, NORM_EPS, OP_NAMES};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Cosine similarity `u·v / (‖u‖‖v‖)`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine_similarity", format!("{} vs {}", u.len(), v.len())));
    }
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateEmbedding("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests;
