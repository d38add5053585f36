//! Scalar statistics helpers shared by metrics, theory, and postproc.

use std::f64::consts::SQRT_2;

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

pub fn mean(xs: &[f64]) -> f64 {
    debug_assert!(!xs.is_empty());
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_std(xs: &[f64]) -> f64 {
    debug_assert!(xs.len() >= 2);
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cdf_reference_values() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(normal_cdf(1.0), 0.8413447460685429, epsilon = 1e-12);
        assert_relative_eq!(normal_cdf(-2.0), 0.022750131948179212, epsilon = 1e-12);
    }

    #[test]
    fn std_matches_two_point_case() {
        assert_relative_eq!(sample_std(&[1.0, 3.0]), SQRT_2, epsilon = 1e-15);
    }
}
