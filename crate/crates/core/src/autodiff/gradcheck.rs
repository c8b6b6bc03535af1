//! Central finite-difference verification of backward rules.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Compares reverse-mode gradients of `f` at `point` against central
/// differences with step `epsilon`.
///
/// `f` receives a fresh graph and the trainable leaf holding the point and
/// must return a scalar node. The result is the maximum over elements of
/// `|g_ad − g_fd| / max(|g_ad|, |g_fd|, 1e-8)`. Any failure inside `f`
/// yields `f64::INFINITY`.
pub fn finite_difference_check<F>(f: F, point: &Tensor, epsilon: f64) -> f64
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    check(&f, point, epsilon).unwrap_or(f64::INFINITY)
}

fn eval<F>(f: &F, point: Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.constant(point);
    let out = f(&mut g, x)?;
    Ok(g.value(out).item())
}

fn check<F>(f: &F, point: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.param(point.clone());
    let out = f(&mut g, x)?;
    let grads = g.backward(out)?;
    let analytic = grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape()));

    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += epsilon;
        let mut minus = point.clone();
        minus.data_mut()[i] -= epsilon;
        let fd = (eval(f, plus)? - eval(f, minus)?) / (2.0 * epsilon);
        let ad = analytic.data()[i];
        let err = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-8);
        if !err.is_finite() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}
