//! Teacher pre-training and the KD training loop over composed batches.

use serde::{Deserialize, Serialize};

use crate::augment::{standard_augment, DAScheme, LabeledBatch, SchemeKind};
use crate::data::{batches, Dataset};
use crate::error::{KdError, Result};
use crate::metrics::eval::EVAL_CHUNK;
use crate::nn::{lr_at, softmax_cross_entropy, softmax_rows, Model, ScheduleConfig, Sgd};
use crate::rng::{rng_from, tag};

use super::loss::composed_kd_loss;
use super::pick::PickConfig;
use super::risk::{risk_report, RiskReport};
use super::stream::{pick_batch, ComposedStream, TeacherObserver};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub tau: f64,
    pub alpha: f64,
    pub scheme: DAScheme,
    pub pick: Option<PickConfig>,
    pub schedule: ScheduleConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Sgd,
    /// Overrides the schedule length, keeping decay points at the same
    /// relative positions.
    pub epochs: Option<usize>,
    /// Keep per-sample `q` values in every epoch's report.
    pub record_q_values: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            tau: 4.0,
            alpha: 0.9,
            scheme: DAScheme::new(SchemeKind::Identity),
            pick: None,
            schedule: ScheduleConfig::default(),
            batch_size: 64,
            seed: 0,
            optimizer: Sgd::default(),
            epochs: None,
            record_q_values: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(KdError::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(KdError::invalid(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(KdError::invalid("batch_size must be at least 1"));
        }
        if let Some(p) = &self.pick {
            p.validate()?;
        }
        self.schedule.validate()
    }

    /// The schedule actually followed, after any `epochs` override.
    pub fn effective_schedule(&self) -> ScheduleConfig {
        match self.epochs {
            Some(e) => self.schedule.compressed_to(e),
            None => self.schedule.clone(),
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.effective_schedule().scaled_total()
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl TeacherObserver for NoObserver {
    fn observe(&mut self, _: usize, _: &crate::augment::ComposedBatch, _: &crate::Tensor) -> Result<()> {
        Ok(())
    }
}

/// Trains `student` against the frozen `teacher` on composed batches and
/// reports train/test risks after every epoch.
///
/// Each step: shuffle, standard flip+crop, compose with the configured
/// scheme, optionally pick among the augmented half, then one SGD step on the
/// composed KD loss. `observer` sees every retained batch with the teacher's
/// logits on it. The teacher is only borrowed immutably, so it cannot change.
pub fn train_student(
    teacher: &Model,
    mut student: Model,
    train: &Dataset,
    test: &Dataset,
    config: &DistillConfig,
    observer: &mut dyn TeacherObserver,
) -> Result<(Model, Vec<RiskReport>)> {
    config.validate()?;
    if teacher.num_classes() != student.num_classes() {
        return Err(KdError::ClassCountMismatch {
            teacher: teacher.num_classes(),
            student: student.num_classes(),
        });
    }
    if train.class_count() != teacher.num_classes() {
        return Err(KdError::invalid(format!(
            "dataset has {} classes, models have {}",
            train.class_count(),
            teacher.num_classes()
        )));
    }
    let schedule = config.effective_schedule();
    let total = schedule.scaled_total();
    let stream = ComposedStream::new(train, config.scheme.clone(), config.batch_size, config.seed)?;
    let teacher_train_probs = if total > 0 {
        softmax_rows(&teacher.predict_chunked(train.images(), EVAL_CHUNK)?, 1.0)?
    } else {
        crate::Tensor::zeros(&[0])
    };
    let mut history = Vec::with_capacity(total);
    for epoch in 0..total {
        let lr = lr_at(epoch, &schedule)?;
        for (b, idx) in stream.epoch_batches(epoch)?.iter().enumerate() {
            let composed = stream.compose(epoch, b, idx)?;
            let t_logits = teacher.predict(&composed.images)?;
            let (batch, t_logits) = pick_batch(composed, t_logits, config.pick.as_ref(), Some(&student))?;
            observer.observe(epoch, &batch, &t_logits)?;
            student.zero_grad();
            let s_logits = student.forward(&batch.images)?;
            let (_, grad) = composed_kd_loss(
                &s_logits,
                &t_logits,
                &batch.labels,
                &batch.loss_mode,
                config.alpha,
                config.tau,
            )?;
            student.backward(&grad)?;
            config.optimizer.step(&mut student, lr)?;
        }
        let mut report = risk_report(epoch, &teacher_train_probs, &student, train, test)?;
        if !config.record_q_values && epoch + 1 < total {
            report.q_values.clear();
        }
        history.push(report);
    }
    Ok((student, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub schedule: ScheduleConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub crop_pad: usize,
    pub optimizer: Sgd,
    pub epochs: Option<usize>,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            batch_size: 64,
            seed: 0,
            crop_pad: 4,
            optimizer: Sgd::default(),
            epochs: None,
        }
    }
}

/// Trains `model` with plain cross-entropy on flip+crop batches. Returns the
/// model and the mean training loss of each epoch.
pub fn train_teacher(mut model: Model, train: &Dataset, config: &TeacherConfig) -> Result<(Model, Vec<f64>)> {
    config.schedule.validate()?;
    if config.batch_size == 0 {
        return Err(KdError::invalid("batch_size must be at least 1"));
    }
    if model.num_classes() != train.class_count() {
        return Err(KdError::invalid("model and dataset class counts differ"));
    }
    let schedule = match config.epochs {
        Some(e) => config.schedule.compressed_to(e),
        None => config.schedule.clone(),
    };
    let mut losses = Vec::new();
    for epoch in 0..schedule.scaled_total() {
        let lr = lr_at(epoch, &schedule)?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for (b, idx) in batches(train.len(), config.batch_size, config.seed, epoch)?.iter().enumerate() {
            let (images, labels) = train.gather(idx);
            let mut rng = rng_from(config.seed, &[tag("teacher"), epoch as u64, b as u64]);
            let batch = standard_augment(&LabeledBatch { images, labels }, config.crop_pad, &mut rng)?;
            model.zero_grad();
            let logits = model.forward(&batch.images)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &batch.labels)?;
            model.backward(&grad)?;
            config.optimizer.step(&mut model, lr)?;
            sum += loss * idx.len() as f64;
            count += idx.len();
        }
        losses.push(sum / count as f64);
    }
    Ok((model, losses))
}
