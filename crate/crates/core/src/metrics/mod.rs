//! Augmentation-quality and student metrics.

pub mod covariance;
pub mod entropy;
pub mod eval;
pub mod pearson;
pub mod tstddev;

pub use covariance::{
    batch_correlation_mean, batch_covariance_mean, correlation_metric_rbar,
    covariance_metric_vbar, CorrelationMetric, CovarianceStats,
};
pub use entropy::shannon_entropy;
pub use eval::{eval_test_loss, score_probs, TestScore};
pub use pearson::{pearson, regularized_incomplete_beta, student_t_two_sided_p, CorrelationReport};
pub use tstddev::{tstddev_from_window_means, TStddev, WindowStats};
