//! The composed training stream, shared by the trainer and the metrics so
//! both see the same batches.

use crate::augment::{compose_batch, standard_augment, ComposedBatch, DAScheme, LabeledBatch};
use crate::data::{batches, Dataset};
use crate::error::{KdError, Result};
use crate::metrics::{CovarianceStats, TStddev, WindowStats};
use crate::nn::{softmax_rows, Model};
use crate::rng::{rng_from, tag};
use crate::tensor::Tensor;

use super::pick::{pick_positions, PickConfig, PickScorer};

/// Deterministic source of composed batches: for `(seed, epoch, batch)` the
/// shuffle, standard augmentation and scheme draws are always the same.
#[derive(Debug, Clone)]
pub struct ComposedStream<'a> {
    pub dataset: &'a Dataset,
    pub scheme: DAScheme,
    pub batch_size: usize,
    pub seed: u64,
}

impl<'a> ComposedStream<'a> {
    pub fn new(dataset: &'a Dataset, scheme: DAScheme, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(KdError::invalid("batch_size must be at least 1"));
        }
        let [_, h, w] = dataset.image_shape();
        scheme.validate(h.min(w))?;
        Ok(Self {
            dataset,
            scheme,
            batch_size,
            seed,
        })
    }

    pub fn epoch_batches(&self, epoch: usize) -> Result<Vec<Vec<usize>>> {
        batches(self.dataset.len(), self.batch_size, self.seed, epoch)
    }

    pub fn compose(&self, epoch: usize, batch: usize, indices: &[usize]) -> Result<ComposedBatch> {
        let (images, labels) = self.dataset.gather(indices);
        let mut rng = rng_from(self.seed, &[tag("compose"), epoch as u64, batch as u64]);
        let standard = standard_augment(&LabeledBatch { images, labels }, self.scheme.crop_pad, &mut rng)?;
        compose_batch(&standard, &self.scheme, &mut rng)
    }
}

/// Receives every composed batch together with the teacher's logits on it.
pub trait TeacherObserver {
    fn observe(&mut self, epoch: usize, batch: &ComposedBatch, teacher_logits: &Tensor) -> Result<()>;
}

/// Collects the teacher's temperature-1 probabilities over the first
/// `epochs` epochs into window and covariance statistics.
#[derive(Debug, Clone)]
pub struct MetricCollector {
    pub epochs: usize,
    pub windows: WindowStats,
    pub covariance: CovarianceStats,
}

impl MetricCollector {
    pub fn new(window_size: usize, classes: usize, epochs: usize) -> Result<Self> {
        Ok(Self {
            epochs,
            windows: WindowStats::new(window_size, classes)?,
            covariance: CovarianceStats::default(),
        })
    }

    pub fn tstddev(&self) -> Result<TStddev> {
        self.windows.finish()
    }
}

impl TeacherObserver for MetricCollector {
    fn observe(&mut self, epoch: usize, _batch: &ComposedBatch, teacher_logits: &Tensor) -> Result<()> {
        if epoch >= self.epochs {
            return Ok(());
        }
        let probs = softmax_rows(teacher_logits, 1.0)?;
        self.windows.push_rows(&probs)?;
        if probs.rows() >= 2 {
            self.covariance.add_batch(&probs)?;
        }
        Ok(())
    }
}

/// Applies optional picking given the teacher logits on the full composed
/// batch. Student-entropy scoring needs the live student.
pub(crate) fn pick_batch(
    composed: ComposedBatch,
    teacher_logits: Tensor,
    pick: Option<&PickConfig>,
    student: Option<&Model>,
) -> Result<(ComposedBatch, Tensor)> {
    let Some(pick) = pick else {
        return Ok((composed, teacher_logits));
    };
    let aug = composed.augmented_indices();
    let scorer_logits = match pick.scorer {
        PickScorer::TeacherEntropy => teacher_logits.select_rows(&aug),
        PickScorer::StudentEntropy => {
            let student = student.ok_or_else(|| {
                KdError::invalid("student-entropy picking needs a student model")
            })?;
            student.predict(&composed.images.select_rows(&aug))?
        }
    };
    let keep = pick_positions(&composed, &softmax_rows(&scorer_logits, 1.0)?, pick)?;
    Ok((composed.retain(&keep), teacher_logits.select_rows(&keep)))
}

/// T. stddev of `teacher` over `epochs` passes of the composed stream, with
/// optional teacher-entropy picking. Also returns the batch covariance
/// statistics gathered from the same teacher outputs.
pub fn t_stddev(
    teacher: &Model,
    stream: &ComposedStream<'_>,
    pick: Option<&PickConfig>,
    window_size: usize,
    epochs: usize,
) -> Result<(TStddev, CovarianceStats)> {
    if pick.is_some_and(|p| p.scorer == PickScorer::StudentEntropy) {
        return Err(KdError::invalid(
            "student-entropy picking depends on training; collect its metric during distillation",
        ));
    }
    let mut collector = MetricCollector::new(window_size, teacher.num_classes(), epochs)?;
    for epoch in 0..epochs {
        for (b, idx) in stream.epoch_batches(epoch)?.iter().enumerate() {
            let composed = stream.compose(epoch, b, idx)?;
            let logits = teacher.predict(&composed.images)?;
            let (batch, logits) = pick_batch(composed, logits, pick, None)?;
            collector.observe(epoch, &batch, &logits)?;
        }
    }
    Ok((collector.tstddev()?, collector.covariance))
}
