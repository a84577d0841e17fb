use kdaug::proposition::{
    closed_form_gap_sq, estimate_gap_moments, exact_gap_moments, sample_sequence, SyntheticWorld,
};
use kdaug::rng::rng_from;

#[test]
fn exact_moments_follow_the_proposition() {
    let w = SyntheticWorld::random(4, 3, 42).unwrap();
    let rows: Vec<_> = [0.0, 0.25, 0.5, 0.75]
        .iter()
        .map(|&rho| exact_gap_moments(&w, 3, rho).unwrap())
        .collect();
    for r in &rows {
        assert!((r.mean_delta - rows[0].mean_delta).abs() < 1e-12);
        assert!((r.variance - r.variance_term - r.covariance_term).abs() < 1e-12);
    }
    assert!(rows.windows(2).all(|p| p[1].mean_delta_sq > p[0].mean_delta_sq));
}

#[test]
fn monte_carlo_agrees_with_enumeration() {
    let w = SyntheticWorld::random(3, 4, 7).unwrap();
    for (i, rho) in [0.0, 0.4, 0.8].into_iter().enumerate() {
        let e = exact_gap_moments(&w, 5, rho).unwrap();
        let m = estimate_gap_moments(&w, 5, rho, 20_000, i as u64).unwrap();
        assert!((m.mean_delta - e.mean_delta).abs() <= 3.0 * m.se_delta);
        assert!((m.mean_delta_sq - e.mean_delta_sq).abs() <= 3.0 * m.se_delta_sq);
    }
}

#[test]
fn single_draw_variance_is_q_variance() {
    let w = SyntheticWorld::random(5, 3, 1).unwrap();
    let e = exact_gap_moments(&w, 1, 0.0).unwrap();
    assert!((e.mean_delta_sq - w.q_variance()).abs() < 1e-14);
    assert!((closed_form_gap_sq(&w, 1, 0.6).unwrap() - w.q_variance()).abs() < 1e-14);
}

#[test]
fn every_position_keeps_the_marginal() {
    // chi-square critical value for 3 degrees of freedom at 0.01 / 9
    // (Bonferroni over three rhos times three positions)
    const CRIT: f64 = 16.043;
    let w = SyntheticWorld::random(4, 2, 3).unwrap();
    let trials = 100_000;
    for rho in [0.0, 0.5, 0.9] {
        let mut rng = rng_from(9, &[(rho * 10.0) as u64]);
        let mut counts = [[0usize; 4]; 3];
        for _ in 0..trials {
            let s = sample_sequence(&w, 3, rho, &mut rng).unwrap();
            for (pos, &x) in s.iter().enumerate() {
                counts[pos][x] += 1;
            }
        }
        for c in &counts {
            let chi: f64 = c
                .iter()
                .zip(w.marginal())
                .map(|(&o, &p)| {
                    let e = p * trials as f64;
                    (o as f64 - e).powi(2) / e
                })
                .sum();
            assert!(chi < CRIT, "rho {rho}: chi-square {chi}");
        }
    }
}

#[test]
fn iid_copy_rate_matches_collision_probability() {
    let w = SyntheticWorld::random(3, 2, 5).unwrap();
    let mut rng = rng_from(2, &[]);
    let s = sample_sequence(&w, 100_001, 0.0, &mut rng).unwrap();
    let rate = s.windows(2).filter(|p| p[0] == p[1]).count() as f64 / 100_000.0;
    let want: f64 = w.marginal().iter().map(|p| p * p).sum();
    assert!((rate - want).abs() < 0.01, "{rate} vs {want}");
}
