//! Distillation: the KD loss on composed batches, CutMix picking, the
//! training loops and the distilled-risk report.

pub mod disagreement;
pub mod loss;
pub mod pick;
pub mod risk;
pub mod stream;
pub mod train;

pub use disagreement::{label_disagreement_rate, mix_label, Classifier};
pub use loss::{composed_kd_loss, kd_loss, kl_only_loss};
pub use pick::{apply_pick, cutmix_pick, pick_count, pick_positions, PickConfig, PickOrder, PickScorer};
pub use risk::{distilled_losses, empirical_distilled_risk, risk_report, RiskReport};
pub use stream::{t_stddev, ComposedStream, MetricCollector, TeacherObserver};
pub use train::{train_student, train_teacher, DistillConfig, NoObserver, TeacherConfig};
