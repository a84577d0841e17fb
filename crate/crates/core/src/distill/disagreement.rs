//! How often the teacher disagrees with the label a mixing scheme would have
//! assigned to an augmented sample.

use crate::augment::{ComposedBatch, LossMode};
use crate::error::{KdError, Result};
use crate::nn::Model;
use crate::tensor::Tensor;

/// Anything that maps a batch of images to class predictions.
pub trait Classifier {
    fn classify(&self, images: &Tensor) -> Result<Vec<usize>>;
}

impl Classifier for Model {
    fn classify(&self, images: &Tensor) -> Result<Vec<usize>> {
        let logits = self.predict(images)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }
}

fn argmax(v: &[f64]) -> usize {
    // first maximum wins
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Argmax of the area-weighted label mix. At an exact half split the
/// primary label wins.
pub fn mix_label(primary: usize, partner: usize, effective_ratio: f64) -> usize {
    if effective_ratio >= 0.5 {
        primary
    } else {
        partner
    }
}

/// Fraction of mixed augmented samples whose teacher prediction differs from
/// [`mix_label`]. Augmented samples without mix parameters are skipped.
pub fn label_disagreement_rate(teacher: &dyn Classifier, batches: &[ComposedBatch]) -> Result<f64> {
    let (mut disagree, mut total) = (0usize, 0usize);
    for batch in batches {
        let idx: Vec<usize> = (0..batch.len())
            .filter(|&i| batch.loss_mode[i] == LossMode::KlOnly && batch.mix[i].is_some())
            .collect();
        if idx.is_empty() {
            continue;
        }
        let preds = teacher.classify(&batch.images.select_rows(&idx))?;
        for (&i, &pred) in idx.iter().zip(&preds) {
            let m = batch.mix[i].as_ref().expect("filtered above");
            if pred != mix_label(batch.labels[i], m.partner_label, m.effective_ratio) {
                disagree += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(KdError::NotEnoughData("no mixed augmented samples".into()));
    }
    Ok(disagree as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_goes_to_primary() {
        assert_eq!(mix_label(3, 7, 0.5), 3);
        assert_eq!(mix_label(3, 7, 0.49), 7);
    }

    #[test]
    fn argmax_first_max() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
