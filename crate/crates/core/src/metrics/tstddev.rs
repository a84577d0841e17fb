//! Stddev of the teacher's mean probability over fixed-size windows.
//!
//! Teacher probability rows are consumed in stream order. Every `K`
//! consecutive rows form one window whose mean vector `u` is recorded; a
//! trailing partial window is dropped. `m` is the per-class population
//! variance of the window means and `m_bar` the class-average of `sqrt(m)`.
//! Lower `m_bar` means the augmented stream is less correlated.

use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TStddev {
    pub m: Vec<f64>,
    pub m_bar: f64,
    pub windows: usize,
}

/// Streaming window accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats {
    window_size: usize,
    classes: usize,
    current: Vec<f64>,
    filled: usize,
    window_means: Vec<Vec<f64>>,
    // Welford state over completed windows
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl WindowStats {
    pub fn new(window_size: usize, classes: usize) -> Result<Self> {
        if window_size == 0 || classes == 0 {
            return Err(KdError::invalid("window size and class count must be positive"));
        }
        Ok(Self {
            window_size,
            classes,
            current: vec![0.0; classes],
            filled: 0,
            window_means: Vec::new(),
            mean: vec![0.0; classes],
            m2: vec![0.0; classes],
        })
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn window_means(&self) -> &[Vec<f64>] {
        &self.window_means
    }

    pub fn windows(&self) -> usize {
        self.window_means.len()
    }

    pub fn push(&mut self, probs: &[f64]) -> Result<()> {
        if probs.len() != self.classes {
            return Err(KdError::ShapeMismatch {
                expected: vec![self.classes],
                actual: vec![probs.len()],
            });
        }
        self.current.iter_mut().zip(probs).for_each(|(s, p)| *s += p);
        self.filled += 1;
        if self.filled == self.window_size {
            let k = self.window_size as f64;
            let u: Vec<f64> = self.current.iter().map(|s| s / k).collect();
            let n = (self.window_means.len() + 1) as f64;
            for ((mean, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(&u) {
                let d = x - *mean;
                *mean += d / n;
                *m2 += d * (x - *mean);
            }
            self.window_means.push(u);
            self.current.fill(0.0);
            self.filled = 0;
        }
        Ok(())
    }

    pub fn push_rows(&mut self, probs: &Tensor) -> Result<()> {
        for i in 0..probs.rows() {
            self.push(probs.row(i))?;
        }
        Ok(())
    }

    /// `m` and `m_bar` from the streaming (Welford) state.
    pub fn finish(&self) -> Result<TStddev> {
        let n = self.windows();
        if n < 2 {
            return Err(KdError::NotEnoughData(format!(
                "T. stddev needs at least 2 windows, got {n}"
            )));
        }
        let m: Vec<f64> = self.m2.iter().map(|v| (v / n as f64).max(0.0)).collect();
        let m_bar = m.iter().map(|v| v.sqrt()).sum::<f64>() / m.len() as f64;
        Ok(TStddev { m, m_bar, windows: n })
    }
}

/// `m` and `m_bar` from an explicit matrix of window means (two-pass).
pub fn tstddev_from_window_means(window_means: &[Vec<f64>]) -> Result<TStddev> {
    let n = window_means.len();
    if n < 2 {
        return Err(KdError::NotEnoughData(format!(
            "T. stddev needs at least 2 windows, got {n}"
        )));
    }
    let c = window_means[0].len();
    let mut mean = vec![0.0; c];
    for u in window_means {
        if u.len() != c {
            return Err(KdError::invalid("ragged window-mean matrix"));
        }
        mean.iter_mut().zip(u).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut m = vec![0.0; c];
    for u in window_means {
        m.iter_mut()
            .zip(u.iter().zip(&mean))
            .for_each(|(acc, (x, mu))| *acc += (x - mu) * (x - mu));
    }
    m.iter_mut().for_each(|v| *v /= n as f64);
    let m_bar = m.iter().map(|v| v.sqrt()).sum::<f64>() / c as f64;
    Ok(TStddev { m, m_bar, windows: n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stream_is_zero() {
        let mut w = WindowStats::new(4, 3).unwrap();
        for _ in 0..40 {
            w.push(&[0.2, 0.3, 0.5]).unwrap();
        }
        let t = w.finish().unwrap();
        assert_eq!(t.windows, 10);
        assert!(t.m.iter().all(|&v| v == 0.0));
        assert_eq!(t.m_bar, 0.0);
    }

    #[test]
    fn alternating_one_hots_have_identical_window_means() {
        let mut w = WindowStats::new(6, 2).unwrap();
        for i in 0..60 {
            let p = if i % 2 == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
            w.push(&p).unwrap();
        }
        assert!(w.window_means().iter().all(|u| u == &vec![0.5, 0.5]));
        assert_eq!(w.finish().unwrap().m_bar, 0.0);
    }

    #[test]
    fn trailing_partial_window_dropped() {
        let mut w = WindowStats::new(3, 2).unwrap();
        for _ in 0..8 {
            w.push(&[0.5, 0.5]).unwrap();
        }
        assert_eq!(w.windows(), 2);
    }

    #[test]
    fn fewer_than_two_windows_errors() {
        let mut w = WindowStats::new(5, 2).unwrap();
        for _ in 0..9 {
            w.push(&[0.5, 0.5]).unwrap();
        }
        assert!(matches!(w.finish(), Err(KdError::NotEnoughData(_))));
    }

    #[test]
    fn hand_computed_two_windows() {
        // windows [1,0] and [0,1] -> u's differ by 1 per class, var 0.25
        let mut w = WindowStats::new(1, 2).unwrap();
        w.push(&[1.0, 0.0]).unwrap();
        w.push(&[0.0, 1.0]).unwrap();
        let t = w.finish().unwrap();
        assert_eq!(t.m, vec![0.25, 0.25]);
        assert_eq!(t.m_bar, 0.5);
    }
}
