use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{KdError, Result};
use crate::nn::{loss::clamped_ln, softmax_rows, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestScore {
    pub loss: f64,
    pub accuracy: f64,
}

pub(crate) const EVAL_CHUNK: usize = 256;

/// Mean cross-entropy and top-1 accuracy of probability rows against labels.
pub fn score_probs(probs: &Tensor, labels: &[usize]) -> Result<TestScore> {
    let n = probs.rows();
    if n == 0 || n != labels.len() {
        return Err(KdError::invalid("probability rows and labels must be equal and nonempty"));
    }
    let mut loss = 0.0;
    let mut hits = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        let row = probs.row(i);
        loss -= clamped_ln(row[y]);
        let argmax = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (j, &p)| if p > b.1 { (j, p) } else { b })
            .0;
        hits += usize::from(argmax == y);
    }
    Ok(TestScore {
        loss: loss / n as f64,
        accuracy: hits as f64 / n as f64,
    })
}

/// Test loss (mean CE at temperature 1) and accuracy of `model`.
pub fn eval_test_loss(model: &Model, testset: &Dataset) -> Result<TestScore> {
    let logits = model.predict_chunked(testset.images(), EVAL_CHUNK)?;
    score_probs(&softmax_rows(&logits, 1.0)?, testset.labels())
}
