//! Entropy-based picking of augmented samples.

use serde::{Deserialize, Serialize};

use crate::augment::{ComposedBatch, LossMode};
use crate::error::{KdError, Result};
use crate::metrics::shannon_entropy;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PickScorer {
    /// Entropy of the frozen teacher's output.
    TeacherEntropy,
    /// Entropy of the student being trained, evaluated at the current step.
    StudentEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PickOrder {
    Highest,
    Lowest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PickConfig {
    pub ratio_r: f64,
    pub scorer: PickScorer,
    pub order: PickOrder,
}

impl Default for PickConfig {
    fn default() -> Self {
        Self {
            ratio_r: 0.5,
            scorer: PickScorer::TeacherEntropy,
            order: PickOrder::Highest,
        }
    }
}

impl PickConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_r > 0.0 && self.ratio_r <= 1.0) {
            return Err(KdError::invalid(format!(
                "pick ratio {} outside (0, 1]",
                self.ratio_r
            )));
        }
        Ok(())
    }
}

/// Number of samples kept: `ceil(r * b)`, at least 1 and at most `b`.
pub fn pick_count(b: usize, r: f64) -> usize {
    // ratios written as decimals or fractions of `b` only approximate the
    // intended rational, so products within a relative 1e-12 of an integer
    // count as that integer
    let product = r * b as f64;
    let k = (product - product * PICK_SNAP).ceil().max(1.0);
    (k as usize).min(b)
}

const PICK_SNAP: f64 = 1e-12;

/// Scores each row by Shannon entropy and keeps `ceil(r * B)` of them
/// (highest or lowest entropy first, ties to the lower index). Returns the
/// kept row indices in ascending order.
pub fn cutmix_pick(scorer_probs: &Tensor, ratio_r: f64, order: PickOrder) -> Result<Vec<usize>> {
    let b = scorer_probs.rows();
    if b == 0 {
        return Err(KdError::invalid("nothing to pick from"));
    }
    if !(ratio_r > 0.0 && ratio_r <= 1.0) {
        return Err(KdError::invalid(format!("pick ratio {ratio_r} outside (0, 1]")));
    }
    let entropy: Vec<f64> = (0..b).map(|i| shannon_entropy(scorer_probs.row(i))).collect();
    let mut idx: Vec<usize> = (0..b).collect();
    idx.sort_by(|&i, &j| {
        let by_entropy = match order {
            PickOrder::Highest => entropy[j].total_cmp(&entropy[i]),
            PickOrder::Lowest => entropy[i].total_cmp(&entropy[j]),
        };
        by_entropy.then(i.cmp(&j))
    });
    idx.truncate(pick_count(b, ratio_r));
    idx.sort_unstable();
    Ok(idx)
}

/// Positions within `batch` that survive picking: every original, then the
/// picked augmented samples in batch order. `aug_probs` holds the scorer's
/// probabilities for the augmented samples in batch order.
pub fn pick_positions(batch: &ComposedBatch, aug_probs: &Tensor, pick: &PickConfig) -> Result<Vec<usize>> {
    let aug = batch.augmented_indices();
    if aug.len() != aug_probs.rows() {
        return Err(KdError::invalid("scorer rows do not match augmented samples"));
    }
    let chosen = cutmix_pick(aug_probs, pick.ratio_r, pick.order)?;
    Ok((0..batch.len())
        .filter(|&i| batch.loss_mode[i] == LossMode::CePlusKl)
        .chain(chosen.into_iter().map(|k| aug[k]))
        .collect())
}

/// Keeps every original of `batch` plus the picked augmented samples.
pub fn apply_pick(batch: &ComposedBatch, aug_probs: &Tensor, pick: &PickConfig) -> Result<ComposedBatch> {
    Ok(batch.retain(&pick_positions(batch, aug_probs, pick)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-class rows with a prescribed entropy ordering.
    fn rows_with_entropy_rank(ps: &[f64]) -> Tensor {
        Tensor::new(
            vec![ps.len(), 2],
            ps.iter().flat_map(|&p| [p, 1.0 - p]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ratio_one_keeps_all() {
        let p = rows_with_entropy_rank(&[0.1, 0.2, 0.3]);
        assert_eq!(cutmix_pick(&p, 1.0, PickOrder::Highest).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn highest_entropy_with_index_tie_break() {
        // entropies ordered like [0.1, 0.9, 0.5, 0.9]
        let p = rows_with_entropy_rank(&[0.02, 0.4, 0.15, 0.4]);
        assert_eq!(cutmix_pick(&p, 0.5, PickOrder::Highest).unwrap(), vec![1, 3]);
        assert_eq!(cutmix_pick(&p, 0.5, PickOrder::Lowest).unwrap(), vec![0, 2]);
    }

    #[test]
    fn all_equal_entropies_pick_lowest_indices() {
        let p = Tensor::from_fn(&[4, 3], |_| 1.0 / 3.0);
        assert_eq!(cutmix_pick(&p, 0.5, PickOrder::Highest).unwrap(), vec![0, 1]);
        assert_eq!(cutmix_pick(&p, 0.5, PickOrder::Lowest).unwrap(), vec![0, 1]);
    }

    #[test]
    fn pick_count_is_exact_ceiling() {
        assert_eq!(pick_count(10, 0.3), 3);
        assert_eq!(pick_count(4, 0.5), 2);
        assert_eq!(pick_count(5, 0.5), 3);
        assert_eq!(pick_count(7, 1.0), 7);
        assert_eq!(pick_count(64, 1e-9), 1);
        assert_eq!(pick_count(25, 7.0 / 25.0), 7);
        assert_eq!(pick_count(10, 0.1), 1);
        assert_eq!(pick_count(10, 0.31), 4);
    }

    #[test]
    fn errors() {
        let p = Tensor::from_fn(&[2, 2], |_| 0.5);
        assert!(cutmix_pick(&p, 0.0, PickOrder::Highest).is_err());
        assert!(cutmix_pick(&p, 1.5, PickOrder::Highest).is_err());
        assert!(cutmix_pick(&Tensor::zeros(&[0, 2]), 0.5, PickOrder::Highest).is_err());
    }
}
