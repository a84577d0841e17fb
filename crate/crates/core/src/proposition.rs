//! A finite world for checking how correlation between training samples
//! inflates the spread of the empirical distilled risk around the true one.
//!
//! Inputs take values in `0..support`. A fixed predictor is scored against a
//! fixed teacher through `q(x) = -teacher(x)^T log predictor(x)` (with the
//! log clamped, so the loss is bounded). Sequences are drawn from a copy
//! chain: the first element comes from the marginal, every later element
//! repeats its predecessor with probability `rho` and is otherwise a fresh
//! marginal draw. Every position therefore has the same marginal while
//! neighbouring positions are correlated, with
//! `Cov[q(x_j), q(x_k)] = rho^(k-j) Var[q]`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};
use crate::nn::loss::{check_simplex, clamped_ln};
use crate::rng::{rng_from, Rng};
use crate::tensor::Tensor;

/// Largest number of sequences [`exact_gap_moments`] will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    marginal: Vec<f64>,
    teacher: Tensor,
    predictor: Tensor,
    q: Vec<f64>,
}

impl SyntheticWorld {
    /// `teacher` and `predictor` are `[support, classes]` row-stochastic
    /// tables; `marginal` is a distribution over `0..support`.
    pub fn new(marginal: Vec<f64>, teacher: Tensor, predictor: Tensor) -> Result<Self> {
        check_simplex(&marginal, "marginal")?;
        if teacher.shape().len() != 2 || teacher.rows() != marginal.len() {
            return Err(KdError::ShapeMismatch {
                expected: vec![marginal.len(), teacher.row_len()],
                actual: teacher.shape().to_vec(),
            });
        }
        predictor.ensure_shape(teacher.shape())?;
        let q = (0..marginal.len())
            .map(|x| {
                let (t, f) = (teacher.row(x), predictor.row(x));
                check_simplex(t, "teacher row")?;
                check_simplex(f, "predictor row")?;
                Ok(-t
                    .iter()
                    .zip(f)
                    .filter(|(&ti, _)| ti > 0.0)
                    .map(|(&ti, &fi)| ti * clamped_ln(fi))
                    .sum::<f64>())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self {
            marginal,
            teacher,
            predictor,
            q,
        })
    }

    /// A world with random positive tables and marginal, fixed by `seed`.
    pub fn random(support: usize, classes: usize, seed: u64) -> Result<Self> {
        if support == 0 || classes == 0 {
            return Err(KdError::invalid("support and classes must be positive"));
        }
        let mut rng = rng_from(seed, &[crate::rng::tag("world")]);
        let mut simplex = |n: usize| {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let marginal = simplex(support);
        let teacher: Vec<f64> = (0..support).flat_map(|_| simplex(classes)).collect();
        let predictor: Vec<f64> = (0..support).flat_map(|_| simplex(classes)).collect();
        Self::new(
            marginal,
            Tensor::new(vec![support, classes], teacher)?,
            Tensor::new(vec![support, classes], predictor)?,
        )
    }

    pub fn support(&self) -> usize {
        self.marginal.len()
    }

    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }

    pub fn teacher(&self) -> &Tensor {
        &self.teacher
    }

    pub fn predictor(&self) -> &Tensor {
        &self.predictor
    }

    /// `q(x)` for every input.
    pub fn q_values(&self) -> &[f64] {
        &self.q
    }

    /// `Var_x[q(x)]` under the marginal.
    pub fn q_variance(&self) -> f64 {
        let mu = true_distilled_risk(self);
        self.marginal
            .iter()
            .zip(&self.q)
            .map(|(p, q)| p * (q - mu) * (q - mu))
            .sum()
    }
}

/// `sum_x marginal(x) q(x)`.
pub fn true_distilled_risk(world: &SyntheticWorld) -> f64 {
    world.marginal.iter().zip(&world.q).map(|(p, q)| p * q).sum()
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(KdError::invalid(format!("rho {rho} outside [0, 1)")));
    }
    Ok(())
}

/// Draws a length-`n` copy-chain sequence.
pub fn sample_sequence(world: &SyntheticWorld, n: usize, rho: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(KdError::invalid("sequence length must be at least 1"));
    }
    check_rho(rho)?;
    let dist = WeightedIndex::new(&world.marginal).map_err(|e| KdError::invalid(e.to_string()))?;
    let mut seq = Vec::with_capacity(n);
    seq.push(dist.sample(rng));
    for i in 1..n {
        let next = if rng.random_bool(rho) { seq[i - 1] } else { dist.sample(rng) };
        seq.push(next);
    }
    Ok(seq)
}

/// Monte Carlo moments of the gap `Δ = R̂_S - R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub mean_delta: f64,
    pub se_delta: f64,
    pub mean_delta_sq: f64,
    pub se_delta_sq: f64,
    pub repetitions: usize,
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Estimates `E[Δ]` and `E[Δ²]` from `repetitions` sequences of length `n`.
/// Repetition `i` uses its own generator derived from `(seed, i)`, so the
/// result does not depend on evaluation order.
pub fn estimate_gap_moments(
    world: &SyntheticWorld,
    n: usize,
    rho: f64,
    repetitions: usize,
    seed: u64,
) -> Result<GapEstimate> {
    if repetitions < 100 {
        return Err(KdError::invalid("at least 100 repetitions are required"));
    }
    let risk = true_distilled_risk(world);
    let mut deltas = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        let mut rng = rng_from(seed, &[crate::rng::tag("gap"), rep as u64]);
        let seq = sample_sequence(world, n, rho, &mut rng)?;
        let r_hat = seq.iter().map(|&x| world.q[x]).sum::<f64>() / n as f64;
        deltas.push(r_hat - risk);
    }
    let squares: Vec<f64> = deltas.iter().map(|d| d * d).collect();
    let (mean_delta, se_delta) = mean_and_se(&deltas);
    let (mean_delta_sq, se_delta_sq) = mean_and_se(&squares);
    Ok(GapEstimate {
        mean_delta,
        se_delta,
        mean_delta_sq,
        se_delta_sq,
        repetitions,
    })
}

/// Exact moments of the gap together with the two pieces of the variance
/// decomposition `Var[R̂_S] = Var_x[q] / N + (2 / N²) Σ_{j<k} Cov[q(x_j), q(x_k)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactGapMoments {
    pub mean_delta: f64,
    pub mean_delta_sq: f64,
    /// `Var[R̂_S]` computed directly from the enumerated distribution.
    pub variance: f64,
    /// `Var_x[q] / N`.
    pub variance_term: f64,
    /// `(2 / N²) Σ_{j<k} Cov[q(x_j), q(x_k)]` from exact pairwise joints.
    pub covariance_term: f64,
    pub sequences: u128,
}

/// Visits every sequence of the chain with its probability and its mean `q`.
fn enumerate(world: &SyntheticWorld, n: usize, rho: f64, visit: &mut dyn FnMut(f64, f64)) {
    fn go(
        w: &SyntheticWorld,
        n: usize,
        rho: f64,
        last: usize,
        depth: usize,
        prob: f64,
        sum: f64,
        visit: &mut dyn FnMut(f64, f64),
    ) {
        if depth == n {
            visit(prob, sum / n as f64);
            return;
        }
        for x in 0..w.support() {
            let step = (1.0 - rho) * w.marginal[x] + if x == last { rho } else { 0.0 };
            if step > 0.0 {
                go(w, n, rho, x, depth + 1, prob * step, sum + w.q[x], visit);
            }
        }
    }
    for x in 0..world.support() {
        if world.marginal[x] > 0.0 {
            go(world, n, rho, x, 1, world.marginal[x], world.q[x], visit);
        }
    }
}

/// `P(x_j = a, x_k = b)` for positions `d = k - j` apart.
fn pair_joint(world: &SyntheticWorld, rho: f64, d: usize, a: usize, b: usize) -> f64 {
    let keep = rho.powi(d as i32);
    world.marginal[a] * ((1.0 - keep) * world.marginal[b] + if a == b { keep } else { 0.0 })
}

/// Exact gap moments by enumerating all `support^n` sequences.
pub fn exact_gap_moments(world: &SyntheticWorld, n: usize, rho: f64) -> Result<ExactGapMoments> {
    if n == 0 {
        return Err(KdError::invalid("sequence length must be at least 1"));
    }
    check_rho(rho)?;
    let sequences = (world.support() as u128)
        .checked_pow(n as u32)
        .filter(|&s| s <= ENUMERATION_LIMIT)
        .ok_or(KdError::EnumerationGuard {
            sequences: (world.support() as u128).saturating_pow(n as u32),
            limit: ENUMERATION_LIMIT,
        })?;
    let risk = true_distilled_risk(world);
    let mut mean_r = 0.0;
    enumerate(world, n, rho, &mut |p, r| mean_r += p * r);
    let (mut variance, mut mean_delta, mut mean_delta_sq) = (0.0, 0.0, 0.0);
    enumerate(world, n, rho, &mut |p, r| {
        variance += p * (r - mean_r) * (r - mean_r);
        mean_delta += p * (r - risk);
        mean_delta_sq += p * (r - risk) * (r - risk);
    });

    let mu = risk;
    let s = world.support();
    let mut cov_sum = 0.0;
    for d in 1..n {
        let mut cov = 0.0;
        for a in 0..s {
            for b in 0..s {
                cov += pair_joint(world, rho, d, a, b) * (world.q[a] - mu) * (world.q[b] - mu);
            }
        }
        // (n - d) pairs sit d apart
        cov_sum += (n - d) as f64 * cov;
    }
    let nf = n as f64;
    Ok(ExactGapMoments {
        mean_delta,
        mean_delta_sq,
        variance,
        variance_term: world.q_variance() / nf,
        covariance_term: 2.0 * cov_sum / (nf * nf),
        sequences,
    })
}

/// `E[Δ²]` from the closed-form copy-chain covariance `rho^d Var[q]`
/// (`E[Δ] = 0` because every position has the true marginal).
pub fn closed_form_gap_sq(world: &SyntheticWorld, n: usize, rho: f64) -> Result<f64> {
    if n == 0 {
        return Err(KdError::invalid("sequence length must be at least 1"));
    }
    check_rho(rho)?;
    let var = world.q_variance();
    let nf = n as f64;
    let pairs: f64 = (1..n).map(|d| (n - d) as f64 * rho.powi(d as i32)).sum();
    Ok(var / nf + 2.0 * var * pairs / (nf * nf))
}
