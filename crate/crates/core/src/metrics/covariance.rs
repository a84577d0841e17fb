//! Batch covariance and correlation metrics over teacher probability rows.
//!
//! Each batch is an `N x C` probability matrix whose rows are treated as
//! variables and whose `C` class columns are the observations. The metrics
//! are the mean entry of the `N x N` sample covariance (ddof 1) or
//! correlation matrix. Both means reduce to a squared norm of a summed
//! (normalised) centred row, so a batch costs `O(N C)` instead of `O(N^2 C)`.

use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};
use crate::tensor::Tensor;

fn check_batch(p: &Tensor) -> Result<(usize, usize)> {
    let (n, c) = (p.rows(), p.row_len());
    if p.shape().len() != 2 {
        return Err(KdError::invalid("probability batch must be [N, C]"));
    }
    if n < 2 || c < 2 {
        return Err(KdError::NotEnoughData(format!(
            "covariance needs >= 2 rows and >= 2 observations, got {n}x{c}"
        )));
    }
    Ok((n, c))
}

fn centered(row: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let m = row.iter().sum::<f64>() / row.len() as f64;
    row.iter().map(move |v| v - m)
}

/// Mean entry of the row covariance matrix of one batch.
pub fn batch_covariance_mean(p: &Tensor) -> Result<f64> {
    let (n, c) = check_batch(p)?;
    let mut total = vec![0.0; c];
    for i in 0..n {
        total.iter_mut().zip(centered(p.row(i))).for_each(|(t, v)| *t += v);
    }
    let sq: f64 = total.iter().map(|v| v * v).sum();
    Ok(sq / ((n * n) as f64 * (c - 1) as f64))
}

/// Mean entry of the row correlation matrix of one batch, and how many
/// rows had zero variance (those rows contribute correlation 0 everywhere,
/// including their diagonal entry).
pub fn batch_correlation_mean(p: &Tensor) -> Result<(f64, usize)> {
    let (n, c) = check_batch(p)?;
    let mut total = vec![0.0; c];
    let mut zero_rows = 0;
    for i in 0..n {
        let cen: Vec<f64> = centered(p.row(i)).collect();
        let norm = cen.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-15 {
            zero_rows += 1;
            continue;
        }
        total.iter_mut().zip(&cen).for_each(|(t, v)| *t += v / norm);
    }
    let sq: f64 = total.iter().map(|v| v * v).sum();
    Ok((sq / (n * n) as f64, zero_rows))
}

/// Streaming averages of the per-batch covariance and correlation means.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovarianceStats {
    batches: usize,
    vsum: f64,
    rsum: f64,
    zero_variance_rows: usize,
}

impl CovarianceStats {
    pub fn add_batch(&mut self, p: &Tensor) -> Result<()> {
        let v = batch_covariance_mean(p)?;
        let (r, z) = batch_correlation_mean(p)?;
        self.batches += 1;
        self.vsum += v;
        self.rsum += r;
        self.zero_variance_rows += z;
        Ok(())
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    pub fn vbar(&self) -> Result<f64> {
        self.require()?;
        Ok(self.vsum / self.batches as f64)
    }

    pub fn rbar(&self) -> Result<f64> {
        self.require()?;
        Ok(self.rsum / self.batches as f64)
    }

    pub fn zero_variance_rows(&self) -> usize {
        self.zero_variance_rows
    }

    fn require(&self) -> Result<()> {
        if self.batches == 0 {
            return Err(KdError::NotEnoughData("no batches".into()));
        }
        Ok(())
    }
}

/// Mean over batches of the mean row-covariance entry.
pub fn covariance_metric_vbar(prob_batches: &[Tensor]) -> Result<f64> {
    let mut s = CovarianceStats::default();
    for b in prob_batches {
        s.add_batch(b)?;
    }
    s.vbar()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMetric {
    pub rbar: f64,
    pub zero_variance_rows: usize,
}

/// Mean over batches of the mean row-correlation entry.
pub fn correlation_metric_rbar(prob_batches: &[Tensor]) -> Result<CorrelationMetric> {
    let mut s = CovarianceStats::default();
    for b in prob_batches {
        s.add_batch(b)?;
    }
    Ok(CorrelationMetric {
        rbar: s.rbar()?,
        zero_variance_rows: s.zero_variance_rows(),
    })
}
