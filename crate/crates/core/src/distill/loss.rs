//! KD losses on logits. Softmaxes are evaluated through log-sum-exp, so no
//! clamping is needed here.

use crate::augment::LossMode;
use crate::error::{KdError, Result};
use crate::tensor::Tensor;

fn check(alpha: f64, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(KdError::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(KdError::invalid(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

fn check_logits(s: &[f64], t: &[f64]) -> Result<()> {
    if s.len() != t.len() || s.is_empty() {
        return Err(KdError::ShapeMismatch {
            expected: vec![t.len()],
            actual: vec![s.len()],
        });
    }
    if s.iter().chain(t).any(|v| !v.is_finite()) {
        return Err(KdError::NonFinite("logits"));
    }
    Ok(())
}

/// `log softmax(z / tau)` into `out`.
fn log_softmax_into(z: &[f64], tau: f64, out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max) / tau;
        sum += o.exp();
    }
    let lse = sum.ln();
    out.iter_mut().for_each(|o| *o -= lse);
}

/// `KL(softmax(t / tau) || softmax(s / tau))` and the gradient of that KL
/// with respect to `s`, written into `grad` (which is overwritten).
fn kl_temp(s: &[f64], t: &[f64], tau: f64, grad: &mut [f64], scratch: &mut [f64]) -> f64 {
    log_softmax_into(t, tau, scratch);
    log_softmax_into(s, tau, grad);
    let mut kl = 0.0;
    for (g, &lt) in grad.iter_mut().zip(scratch.iter()) {
        let pt = lt.exp();
        let ls = *g;
        if pt > 0.0 {
            kl += pt * (lt - ls);
        }
        *g = (ls.exp() - pt) / tau;
    }
    kl.max(0.0)
}

/// `-log softmax(s)[y]` and its gradient `softmax(s) - onehot(y)`.
fn ce(s: &[f64], y: usize, grad: &mut [f64]) -> f64 {
    log_softmax_into(s, 1.0, grad);
    let loss = -grad[y];
    grad.iter_mut().for_each(|g| *g = g.exp());
    grad[y] -= 1.0;
    loss
}

/// `(1 - alpha) CE(y, softmax(s)) + alpha tau^2 KL(softmax(t/tau) || softmax(s/tau))`.
/// Teacher logits are constants.
pub fn kd_loss(y: usize, logits_s: &[f64], logits_t: &[f64], alpha: f64, tau: f64) -> Result<f64> {
    check(alpha, tau)?;
    check_logits(logits_s, logits_t)?;
    if y >= logits_s.len() {
        return Err(KdError::invalid(format!("label {y} out of range")));
    }
    let c = logits_s.len();
    let (mut g, mut s) = (vec![0.0; c], vec![0.0; c]);
    let kl = kl_temp(logits_s, logits_t, tau, &mut g, &mut s);
    let ce = ce(logits_s, y, &mut g);
    Ok((1.0 - alpha) * ce + alpha * tau * tau * kl)
}

/// The `alpha tau^2 KL` term of [`kd_loss`] alone, used for augmented samples.
pub fn kl_only_loss(logits_s: &[f64], logits_t: &[f64], alpha: f64, tau: f64) -> Result<f64> {
    check(alpha, tau)?;
    check_logits(logits_s, logits_t)?;
    let c = logits_s.len();
    let (mut g, mut s) = (vec![0.0; c], vec![0.0; c]);
    Ok(alpha * tau * tau * kl_temp(logits_s, logits_t, tau, &mut g, &mut s))
}

/// Loss of a composed batch and its gradient with respect to the student
/// logits.
///
/// The cross-entropy part is averaged over the `CePlusKl` samples and the
/// KL part over all samples. With an identity composition (every original
/// duplicated as a `KlOnly` copy) this equals plain KD on the original batch,
/// which also equals `kd_loss` averaged over the batch with duplicated halves.
pub fn composed_kd_loss(
    student_logits: &Tensor,
    teacher_logits: &Tensor,
    labels: &[usize],
    modes: &[LossMode],
    alpha: f64,
    tau: f64,
) -> Result<(f64, Tensor)> {
    check(alpha, tau)?;
    student_logits.ensure_shape(teacher_logits.shape())?;
    let n = student_logits.rows();
    if n == 0 || labels.len() != n || modes.len() != n {
        return Err(KdError::invalid("composed batch parts disagree in length"));
    }
    student_logits.ensure_finite("student logits")?;
    teacher_logits.ensure_finite("teacher logits")?;
    let c = student_logits.row_len();
    let n_ce = modes.iter().filter(|&&m| m == LossMode::CePlusKl).count();
    let kl_w = alpha * tau * tau / n as f64;
    let ce_w = if n_ce > 0 { (1.0 - alpha) / n_ce as f64 } else { 0.0 };
    let mut grad = Tensor::zeros(student_logits.shape());
    let (mut g, mut scratch) = (vec![0.0; c], vec![0.0; c]);
    let mut loss = 0.0;
    for i in 0..n {
        let (s, t) = (student_logits.row(i), teacher_logits.row(i));
        let kl = kl_temp(s, t, tau, &mut g, &mut scratch);
        loss += kl_w * kl;
        let out = grad.row_mut(i);
        out.iter_mut().zip(&g).for_each(|(o, v)| *o = kl_w * v);
        if modes[i] == LossMode::CePlusKl {
            let y = labels[i];
            if y >= c {
                return Err(KdError::invalid(format!("label {y} out of range")));
            }
            loss += ce_w * ce(s, y, &mut g);
            out.iter_mut().zip(&g).for_each(|(o, v)| *o += ce_w * v);
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{cross_entropy, kl_divergence, softmax_temp};

    #[test]
    fn matching_logits_leave_only_ce() {
        let s = [0.3, -1.2, 2.0];
        let want = 0.1 * cross_entropy(2, &softmax_temp(&s, 1.0).unwrap()).unwrap();
        assert!((kd_loss(2, &s, &s, 0.9, 4.0).unwrap() - want).abs() < 1e-15);
        assert_eq!(kl_only_loss(&s, &s, 0.9, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn alpha_zero_is_pure_ce() {
        let s = [0.3, -1.2, 2.0];
        let t = [1.0, 0.0, -3.0];
        let want = cross_entropy(0, &softmax_temp(&s, 1.0).unwrap()).unwrap();
        assert!((kd_loss(0, &s, &t, 0.0, 4.0).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn closed_form_two_class_case() {
        let t = [4.0 * 2f64.ln(), 0.0];
        let kl = (2.0 / 3.0) * (4.0f64 / 3.0).ln() + (1.0 / 3.0) * (2.0f64 / 3.0).ln();
        let want = 0.1 * 2f64.ln() + 0.9 * 16.0 * kl;
        let got = kd_loss(0, &[0.0, 0.0], &t, 0.9, 4.0).unwrap();
        assert!((got - want).abs() < 1e-14);
        assert!((got - 0.8848).abs() < 1e-4);
        let kl_only = kl_only_loss(&[0.0, 0.0], &t, 0.9, 4.0).unwrap();
        assert!((kl_only - 0.9 * 16.0 * kl).abs() < 1e-14);
        assert!((kl_only - 0.8155).abs() < 1e-4);
    }

    #[test]
    fn unit_alpha_and_tau_is_plain_kl() {
        let s = [0.5, -0.5, 1.5];
        let t = [-1.0, 2.0, 0.0];
        let want = kl_divergence(&softmax_temp(&t, 1.0).unwrap(), &softmax_temp(&s, 1.0).unwrap()).unwrap();
        assert!((kl_only_loss(&s, &t, 1.0, 1.0).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(kd_loss(0, &[0.0, 0.0], &[0.0, 0.0], 1.5, 4.0).is_err());
        assert!(kd_loss(0, &[0.0, 0.0], &[0.0, 0.0], 0.5, 0.0).is_err());
        assert!(kl_only_loss(&[0.0], &[0.0, 0.0], 0.5, 1.0).is_err());
    }

    #[test]
    fn continuous_in_alpha_and_tau() {
        let s = [0.2, 1.1, -0.4];
        let t = [1.5, -0.3, 0.2];
        let mut prev = kd_loss(1, &s, &t, 0.0, 1.0).unwrap();
        for i in 1..=1000 {
            let a = i as f64 / 1000.0;
            let v = kd_loss(1, &s, &t, a, 1.0).unwrap();
            assert!((v - prev).abs() < 5e-3);
            prev = v;
        }
        let mut prev = kd_loss(1, &s, &t, 0.9, 0.5).unwrap();
        for i in 1..=1000 {
            let tau = 0.5 + i as f64 * 0.01;
            let v = kd_loss(1, &s, &t, 0.9, tau).unwrap();
            assert!((v - prev).abs() < 1e-2, "jump at tau={tau}");
            prev = v;
        }
    }

    #[test]
    fn composed_loss_matches_per_sample_definitions() {
        let s = Tensor::new(vec![3, 2], vec![0.1, 0.4, -0.2, 0.9, 1.0, 0.0]).unwrap();
        let t = Tensor::new(vec![3, 2], vec![1.0, -1.0, 0.3, 0.3, -0.5, 0.5]).unwrap();
        let labels = [0, 1, 1];
        let modes = [LossMode::CePlusKl, LossMode::CePlusKl, LossMode::KlOnly];
        let (loss, _) = composed_kd_loss(&s, &t, &labels, &modes, 0.9, 4.0).unwrap();
        let mut want = 0.0;
        for i in 0..3 {
            let kl = kl_only_loss(s.row(i), t.row(i), 0.9, 4.0).unwrap();
            want += kl / 3.0;
            if modes[i] == LossMode::CePlusKl {
                want += (kd_loss(labels[i], s.row(i), t.row(i), 0.9, 4.0).unwrap() - kl) / 2.0;
            }
        }
        assert!((loss - want).abs() < 1e-14);
    }
}
