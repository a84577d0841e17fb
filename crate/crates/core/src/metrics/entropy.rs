/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum();
    h.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert!((shannon_entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(shannon_entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((shannon_entropy(&[0.5, 0.25, 0.25]) - 1.5 * 2f64.ln()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn bounded_and_schur_concave(
            raw in prop::collection::vec(1e-6f64..1.0, 2..10),
            t in 0.0f64..=1.0,
        ) {
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let c = p.len() as f64;
            let h = shannon_entropy(&p);
            prop_assert!(h >= 0.0 && h <= c.ln() + 1e-12);
            let mixed: Vec<f64> = p.iter().map(|x| (1.0 - t) * x + t / c).collect();
            prop_assert!(shannon_entropy(&mixed) >= h - 1e-12);
        }
    }
}
