use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{KdError, Result};
use crate::metrics::eval::{score_probs, EVAL_CHUNK};
use crate::metrics::eval_test_loss;
use crate::nn::loss::{check_simplex, clamped_ln};
use crate::nn::{softmax_rows, Model};
use crate::tensor::Tensor;

/// Per-sample `q(x) = -p_teacher(x)^T log f(x)`.
pub fn distilled_losses(teacher_probs: &Tensor, student_probs: &Tensor) -> Result<Vec<f64>> {
    student_probs.ensure_shape(teacher_probs.shape())?;
    if teacher_probs.rows() == 0 {
        return Err(KdError::invalid("empty probability matrix"));
    }
    (0..teacher_probs.rows())
        .map(|i| {
            let (t, s) = (teacher_probs.row(i), student_probs.row(i));
            check_simplex(t, "teacher row")?;
            check_simplex(s, "student row")?;
            Ok(-t
                .iter()
                .zip(s)
                .filter(|(&ti, _)| ti > 0.0)
                .map(|(&ti, &si)| ti * clamped_ln(si))
                .sum::<f64>())
        })
        .collect()
}

/// Empirical distilled risk: the mean of [`distilled_losses`].
pub fn empirical_distilled_risk(teacher_probs: &Tensor, student_probs: &Tensor) -> Result<f64> {
    let q = distilled_losses(teacher_probs, student_probs)?;
    Ok(q.iter().sum::<f64>() / q.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub epoch: usize,
    /// Mean CE of the student on the clean training set.
    pub empirical_risk: f64,
    /// Empirical distilled risk on the clean training set.
    pub distilled_risk: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub q_values: Vec<f64>,
}

/// Evaluates `student` on the clean train and test sets. `teacher_train_probs`
/// are the frozen teacher's temperature-1 probabilities on `train`.
pub fn risk_report(
    epoch: usize,
    teacher_train_probs: &Tensor,
    student: &Model,
    train: &Dataset,
    test: &Dataset,
) -> Result<RiskReport> {
    let student_probs = softmax_rows(&student.predict_chunked(train.images(), EVAL_CHUNK)?, 1.0)?;
    let empirical = score_probs(&student_probs, train.labels())?;
    let q_values = distilled_losses(teacher_train_probs, &student_probs)?;
    let distilled_risk = q_values.iter().sum::<f64>() / q_values.len() as f64;
    let t = eval_test_loss(student, test)?;
    let report = RiskReport {
        epoch,
        empirical_risk: empirical.loss,
        distilled_risk,
        test_loss: t.loss,
        test_accuracy: t.accuracy,
        q_values,
    };
    if ![report.empirical_risk, report.distilled_risk, report.test_loss]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(KdError::NonFinite("risk report"));
    }
    Ok(report)
}
