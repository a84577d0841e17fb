//! Softmax, cross-entropy and KL divergence on probability vectors.
//!
//! Log arguments are clamped at [`LOG_EPS`]; every clamp increments a
//! process-wide counter readable through [`clamp_count`].

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{KdError, Result};
use crate::tensor::Tensor;

pub const LOG_EPS: f64 = 1e-12;

static CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of times a log argument has been clamped to `LOG_EPS`.
pub fn clamp_count() -> u64 {
    CLAMPS.load(Ordering::Relaxed)
}

#[inline]
pub(crate) fn clamped_ln(p: f64) -> f64 {
    if p < LOG_EPS {
        CLAMPS.fetch_add(1, Ordering::Relaxed);
        LOG_EPS.ln()
    } else {
        p.ln()
    }
}

pub(crate) fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(KdError::invalid(format!("{what}: empty probability vector")));
    }
    let mut sum = 0.0;
    for &v in p {
        if !v.is_finite() || v < 0.0 {
            return Err(KdError::invalid(format!("{what}: entry {v} is not a probability")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(KdError::invalid(format!("{what}: entries sum to {sum}")));
    }
    Ok(())
}

/// `softmax(logits / tau)`, computed from `logits - max` for stability.
pub fn softmax_temp(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(KdError::invalid(format!("temperature must be positive, got {tau}")));
    }
    if logits.is_empty() {
        return Err(KdError::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(KdError::NonFinite("softmax input"));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, tau, &mut out);
    Ok(out)
}

/// Unchecked softmax kernel; callers validate inputs.
#[inline]
pub(crate) fn softmax_into(logits: &[f64], tau: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = ((z - max) / tau).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Row-wise temperature softmax of a `[n, C]` logit matrix.
pub fn softmax_rows(logits: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(KdError::invalid(format!("temperature must be positive, got {tau}")));
    }
    logits.ensure_finite("softmax input")?;
    let mut out = Tensor::zeros(logits.shape());
    for i in 0..logits.rows() {
        softmax_into(logits.row(i), tau, out.row_mut(i));
    }
    Ok(out)
}

/// `-ln(probs[y])`.
pub fn cross_entropy(y: usize, probs: &[f64]) -> Result<f64> {
    check_simplex(probs, "cross_entropy")?;
    if y >= probs.len() {
        return Err(KdError::invalid(format!(
            "label {y} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(-clamped_ln(probs[y]))
}

/// Mean cross-entropy over the rows of a probability matrix.
pub fn batch_cross_entropy(labels: &[usize], probs: &Tensor) -> Result<f64> {
    if labels.len() != probs.rows() || labels.is_empty() {
        return Err(KdError::invalid("label count does not match probability rows"));
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        total += cross_entropy(y, probs.row(i))?;
    }
    Ok(total / labels.len() as f64)
}

/// `sum_i p_i ln(p_i / q_i)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(KdError::ShapeMismatch {
            expected: vec![p.len()],
            actual: vec![q.len()],
        });
    }
    check_simplex(p, "kl_divergence p")?;
    check_simplex(q, "kl_divergence q")?;
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - clamped_ln(qi)))
        .sum();
    // rounding can leave a tiny negative residue when p == q
    Ok(kl.max(0.0))
}

/// Mean softmax cross-entropy over a logit batch and its gradient with
/// respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let n = logits.rows();
    if labels.len() != n || n == 0 {
        return Err(KdError::invalid("label count does not match logit rows"));
    }
    let c = logits.row_len();
    let mut grad = softmax_rows(logits, 1.0)?;
    let mut total = 0.0;
    let inv = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(KdError::invalid(format!("label {y} out of range for {c} classes")));
        }
        let row = grad.row_mut(i);
        total -= clamped_ln(row[y]);
        row[y] -= 1.0;
        row.iter_mut().for_each(|g| *g *= inv);
    }
    Ok((total * inv, grad))
}
