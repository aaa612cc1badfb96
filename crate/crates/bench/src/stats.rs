use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson statistic of `observed` against a uniform expectation.
pub fn chi_square_uniform(observed: &[u64]) -> f64 {
    let total: u64 = observed.iter().sum();
    if total == 0 || observed.is_empty() {
        return 0.0;
    }
    let expected = total as f64 / observed.len() as f64;
    observed
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum()
}

/// Upper-tail p-value of `stat` with `df` degrees of freedom.
pub fn chi_square_p(stat: f64, df: u64) -> f64 {
    if df == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_counts_have_zero_statistic() {
        assert_eq!(chi_square_uniform(&[10, 10, 10, 10]), 0.0);
        assert!((chi_square_p(0.0, 3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn known_critical_value() {
        // 11.345 is the 1% critical value for 3 degrees of freedom.
        assert!((chi_square_p(11.345, 3) - 0.01).abs() < 1e-4);
        assert!(chi_square_p(30.0, 3) < 1e-5);
        assert_eq!(chi_square_uniform(&[20, 0]), 20.0);
    }
}
