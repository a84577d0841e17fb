//! The JSON experiment configuration shared by every pipeline command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{DAScheme, SchemeKind};
use crate::data::{gen_synthetic, load_cifar_binary, CifarVariant, Dataset, Split};
use crate::distill::{DistillConfig, PickConfig, TeacherConfig};
use crate::error::{KdError, Result};
use crate::nn::{CnnSpec, ScheduleConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic {
        classes: usize,
        per_class: usize,
        side: usize,
        seed: u64,
    },
    Cifar {
        variant: CifarVariant,
        train_path: PathBuf,
        test_path: PathBuf,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Synthetic {
                classes,
                per_class,
                side,
                seed,
            } => gen_synthetic(*classes, *per_class, *side, *seed),
            DatasetSpec::Cifar {
                variant,
                train_path,
                test_path,
            } => Ok((
                load_cifar_binary(train_path, *variant, Split::Train)?,
                load_cifar_binary(test_path, *variant, Split::Test)?,
            )),
        }
    }
}

/// Convolutional widths of a [`CnnSpec`]; input channels and class count
/// come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub channels: Vec<usize>,
}

impl ArchSpec {
    pub fn cnn(&self, data: &Dataset) -> CnnSpec {
        CnnSpec {
            in_channels: data.image_shape()[0],
            channels: self.channels.clone(),
            classes: data.class_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherSection {
    pub arch: ArchSpec,
    pub training: TeacherConfig,
    /// Checkpoint location; defaults to `<out_dir>/teacher.dgkd`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for TeacherSection {
    fn default() -> Self {
        Self {
            arch: ArchSpec {
                channels: vec![16, 32],
            },
            training: TeacherConfig {
                crop_pad: 2,
                epochs: Some(30),
                ..TeacherConfig::default()
            },
            checkpoint: None,
        }
    }
}

/// One augmentation setting in a ranking run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeEntry {
    pub name: String,
    pub scheme: DAScheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pick: Option<PickConfig>,
}

/// How `prop-check` obtains its exact columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactMethod {
    /// Enumerate when within the guard, closed form otherwise.
    Auto,
    Enumerate,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropConfig {
    pub support: usize,
    pub classes: usize,
    pub world_seed: u64,
    pub n: usize,
    pub rhos: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
    pub exact_method: ExactMethod,
}

impl Default for PropConfig {
    fn default() -> Self {
        Self {
            support: 8,
            classes: 4,
            world_seed: 0,
            n: 16,
            rhos: vec![0.0, 0.3, 0.6, 0.9],
            repetitions: 20_000,
            seed: 0,
            exact_method: ExactMethod::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelateConfig {
    /// Ranking CSV to read; defaults to `<out_dir>/rank_da.csv`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    pub x: String,
    pub y: String,
}

impl Default for CorrelateConfig {
    fn default() -> Self {
        Self {
            input: None,
            x: "t_stddev".into(),
            y: "student_test_loss".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub teacher: TeacherSection,
    pub student: ArchSpec,
    /// Base distillation settings; ranking runs replace `scheme`, `pick`
    /// and `seed` per cell.
    pub distill: DistillConfig,
    pub schemes: Vec<SchemeEntry>,
    pub seeds: Vec<u64>,
    /// Samples per T. stddev window.
    pub window_size: usize,
    /// Leading epochs of the composed stream the metrics are collected over.
    pub metric_epochs: usize,
    pub prop: PropConfig,
    pub correlate: CorrelateConfig,
    pub out_dir: PathBuf,
}

/// The seven desk-scale settings: identity, flip, flip+crop, cutout, mixup,
/// cutmix and cutmix with teacher-entropy picking.
pub fn desk_schemes(side: usize) -> Vec<SchemeEntry> {
    let base = DAScheme {
        crop_pad: (side / 8).max(1),
        cutout_length: (side / 4).max(1),
        ..DAScheme::default()
    };
    let entry = |name: &str, kind, pick| SchemeEntry {
        name: name.into(),
        scheme: DAScheme {
            kind,
            ..base.clone()
        },
        pick,
    };
    vec![
        entry("identity", SchemeKind::Identity, None),
        entry("flip", SchemeKind::Flip, None),
        entry("flip_crop", SchemeKind::FlipCrop, None),
        entry("cutout", SchemeKind::Cutout, None),
        entry("mixup", SchemeKind::Mixup, None),
        entry("cutmix", SchemeKind::Cutmix, None),
        entry("cutmix_pick", SchemeKind::Cutmix, Some(PickConfig::default())),
    ]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let side = 16;
        let schemes = desk_schemes(side);
        Self {
            dataset: DatasetSpec::Synthetic {
                classes: 10,
                per_class: 200,
                side,
                seed: 0,
            },
            teacher: TeacherSection::default(),
            student: ArchSpec {
                channels: vec![8, 16],
            },
            distill: DistillConfig {
                scheme: schemes[5].scheme.clone(),
                schedule: ScheduleConfig {
                    base_lr: 0.02,
                    ..ScheduleConfig::default()
                },
                epochs: Some(30),
                ..DistillConfig::default()
            },
            schemes,
            seeds: vec![0, 1, 2],
            window_size: 384,
            metric_epochs: 30,
            prop: PropConfig::default(),
            correlate: CorrelateConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KdError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(KdError::invalid("at least one seed is required"));
        }
        if self.window_size == 0 {
            return Err(KdError::invalid("window_size must be positive"));
        }
        for s in &self.schemes {
            if s.name.is_empty() || s.name.contains([',', '\n', '"']) {
                return Err(KdError::invalid(format!("scheme name {:?} is not CSV-safe", s.name)));
            }
            if let Some(p) = &s.pick {
                p.validate()?;
            }
        }
        self.distill.validate()
    }

    pub fn teacher_checkpoint(&self) -> PathBuf {
        self.teacher
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("teacher.dgkd"))
    }

    /// Applies a `--seed` override: a single ranking seed, and the same seed
    /// for distillation and the Monte Carlo lab.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self.distill.seed = seed;
        self.prop.seed = seed;
        self
    }
}
