//! Independent oracles used by several test targets.

use kdaug::distill::{cutmix_pick, pick_count, PickOrder};
use kdaug::metrics::{pearson, WindowStats};
use kdaug::rng::{rng_from, Rng};
use kdaug::Tensor;
use rand::Rng as _;

/// Ratio of window-mean variance between a stream whose windows repeat one
/// row and an i.i.d. stream; the theory gives `K`.
pub fn separation_ratio(k: usize, windows: usize, seed: u64) -> f64 {
    let c = 4;
    let mut rng = rng_from(seed, &[]);
    let mut draw = || {
        let mut row = vec![0.0; c];
        row[rng.random_range(0..c)] = 1.0;
        row
    };
    let mut iid = WindowStats::new(k, c).unwrap();
    let mut rep = WindowStats::new(k, c).unwrap();
    for _ in 0..windows {
        let r = draw();
        for _ in 0..k {
            iid.push(&draw()).unwrap();
            rep.push(&r).unwrap();
        }
    }
    let total = |w: &WindowStats| w.finish().unwrap().m.iter().sum::<f64>();
    total(&rep) / total(&iid)
}


/// Two-sided Student-t tail by direct quadrature: with `t = sqrt(v) tan θ`
/// the density of θ is proportional to `cos^(v-1) θ` on (-π/2, π/2).
pub fn t_tail_by_quadrature(t: f64, dof: f64) -> f64 {
    let f = |th: f64| th.cos().powf(dof - 1.0);
    let simpson = |a: f64, b: f64| {
        let n = 20_000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let half = std::f64::consts::FRAC_PI_2;
    let theta = (t.abs() / dof.sqrt()).atan();
    simpson(theta, half) / simpson(0.0, half)
}

fn oracle_r(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn pearson_cases() -> Vec<(Vec<f64>, Vec<f64>)> {
    vec![
        (vec![1., 2., 3., 4., 5.], vec![2., 1., 4., 3., 5.]),
        (vec![1., 2., 3., 4., 5., 6., 7.], vec![7., 5., 6., 3., 4., 1., 2.]),
        (vec![0.1, 0.4, 0.2, 0.9], vec![1.0, 1.1, 0.7, 1.6]),
        (vec![3., 1., 4., 1., 5., 9., 2., 6., 5., 3.], vec![2., 7., 1., 8., 2., 8., 1., 8., 2., 8.]),
        (vec![1., 2., 3., 4., 5., 6.], vec![1.2, 1.9, 3.2, 3.8, 5.1, 6.3]),
    ]
}

/// Largest |p - oracle p| over the derived cases.
pub fn pearson_worst_error() -> f64 {
    pearson_cases()
        .iter()
        .map(|(xs, ys)| {
            let rep = pearson(xs, ys).unwrap();
            let r = oracle_r(xs, ys);
            assert!((rep.r - r).abs() < 1e-12);
            let dof = (xs.len() - 2) as f64;
            let t = r * (dof / (1.0 - r * r)).sqrt();
            (rep.p_value - t_tail_by_quadrature(t, dof)).abs()
        })
        .fold(0.0, f64::max)
}


/// `ceil(r * b)` in exact integer arithmetic on the bits of `r`.
pub fn exact_ceil(r: f64, b: usize) -> usize {
    assert!(r > 0.0 && r <= 1.0);
    let bits = r.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let (mant, e) = if exp == 0 {
        (bits & ((1 << 52) - 1), -1074)
    } else {
        ((bits & ((1 << 52) - 1)) | (1 << 52), exp - 1075)
    };
    // r = mant * 2^e with e < 0 for r <= 1
    let shift = (-e) as u32;
    let num = mant as u128 * b as u128;
    if shift >= 128 {
        return usize::from(num > 0);
    }
    let den = 1u128 << shift;
    num.div_ceil(den) as usize
}

pub fn random_probs(rng: &mut Rng, b: usize, c: usize) -> Tensor {
    let mut t = Tensor::from_fn(&[b, c], |_| rng.random_range(0.001..1.0));
    for i in 0..b {
        let s: f64 = t.row(i).iter().sum();
        t.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    t
}

/// Number of randomized cases whose selected count differs from the exact
/// ceiling (or which break the output contract).
pub fn count_violations(cases: usize, seed: u64) -> usize {
    let mut rng = rng_from(seed, &[]);
    let mut bad = 0;
    for case in 0..cases {
        let b = rng.random_range(1..=200);
        // rational ratios are checked against integer arithmetic on the
        // intended fraction; arbitrary floats against the bit-exact product
        let (r, want) = match case % 4 {
            0 => {
                let r = rng.random_range(f64::MIN_POSITIVE..=1.0);
                (r, exact_ceil(r, b))
            }
            1 => {
                let j = rng.random_range(1..=b);
                (j as f64 / b as f64, j)
            }
            2 => (1.0, b),
            _ => {
                let den = [10, 100, 1000][case / 4 % 3];
                let j = rng.random_range(1..=den);
                (j as f64 / den as f64, (j * b).div_ceil(den))
            }
        };
        let p = random_probs(&mut rng, b, 5);
        let order = if case % 2 == 0 { PickOrder::Highest } else { PickOrder::Lowest };
        let got = cutmix_pick(&p, r, order).unwrap();
        let sorted = got.windows(2).all(|w| w[0] < w[1]);
        if got.len() != want || pick_count(b, r) != want || !sorted || got.iter().any(|&i| i >= b) {
            bad += 1;
        }
    }
    bad
}


/// Three CIFAR-100 records with distinct coarse/fine labels and pixels.
pub fn three_records() -> Vec<u8> {
    let mut bytes = Vec::new();
    for r in 0..3u8 {
        bytes.push(10 + r); // coarse
        bytes.push(40 + r); // fine
        bytes.extend((0..3072u32).map(|i| ((i * 7 + r as u32 * 31) % 256) as u8));
    }
    bytes
}


fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
