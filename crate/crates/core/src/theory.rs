//! Sufficient conditions for distinguishability and attributability of
//! watermarked linear models.
//!
//! For a key phi that is data-compliant (phi . x < 0 on the dataset) write
//! d_max / d_min for the extreme absolute projections, sigma(phi)^2 for the
//! projected noise variance phi' Sigma phi, and mu for the noise mean. Then:
//!
//! * shifting by `(1 + d_max) * phi` makes every shifted sample classify
//!   positive (exact, no probability involved);
//! * a watermark shift of `gamma >= d_max + sigma(phi) * sqrt(log(1/delta^2))
//!   - phi . mu` guarantees distinguishability D >= 1 - delta/2;
//! * two keys phi, phi' with that gamma rule stay mutually attributable when
//!   `phi . phi' <= a(phi, phi')` with
//!   `a = -1 + (d_max' + d_min' - 2 phi'.mu) / (sigma' sqrt(log(1/delta^2)) + d_max' - phi'.mu)`
//!   (primes: statistics of phi'), and N such models have joint
//!   attributability at least `1 - N * delta`.

use serde::Serialize;

use crate::dataset::DatasetHandle;
use crate::error::{Error, Result};
use crate::key::Key;
use crate::keygen::vector_stats;
use crate::linalg::dot;
use crate::noise::NoiseModel;

pub(crate) fn check_delta(delta: f64) -> Result<f64> {
    if !(delta.is_finite() && delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    Ok((1.0 / (delta * delta)).ln().sqrt())
}

/// Smallest shift that flips every dataset sample to the positive side of
/// the key's hyperplane: `(1 + d_max) * phi`. Errors with `NotCompliant`
/// unless every sample projects strictly negative.
pub fn distinguishing_perturbation(key: &Key, dataset: &DatasetHandle) -> Result<Vec<f64>> {
    let stats = vector_stats(key.vector(), dataset)?;
    if stats.compliance_fraction < 1.0 {
        return Err(Error::NotCompliant { fraction: stats.compliance_fraction });
    }
    let scale = 1.0 + stats.d_max;
    Ok(key.vector().iter().map(|p| scale * p).collect())
}

/// Smallest watermark magnitude with guaranteed distinguishability
/// `>= 1 - delta/2`: `d_max + sigma(phi) * sqrt(log(1/delta^2)) - phi . mu`.
/// `d_max` is recomputed from `dataset`; the key is assumed compliant.
pub fn min_gamma(
    key: &Key,
    dataset: &DatasetHandle,
    noise: &NoiseModel,
    delta: f64,
) -> Result<f64> {
    let lambda = check_delta(delta)?;
    let stats = vector_stats(key.vector(), dataset)?;
    let sigma = noise.projected_std(key.vector())?;
    let mu_dot = key.score(noise.mean())?;
    Ok(stats.d_max + sigma * lambda - mu_dot)
}

/// Largest admissible inner product `a(phi, phi')` between `key` and `other`
/// such that samples of `key`'s watermarked model still classify negative
/// under `other`. All statistics are taken on `other` (and its noise model),
/// matching the gamma rule of `min_gamma`.
pub fn pairwise_bound(
    key: &Key,
    other: &Key,
    dataset: &DatasetHandle,
    noise_other: &NoiseModel,
    delta: f64,
) -> Result<f64> {
    if key.dim() != other.dim() {
        return Err(Error::DimensionMismatch { expected: other.dim(), got: key.dim() });
    }
    let lambda = check_delta(delta)?;
    let stats = vector_stats(other.vector(), dataset)?;
    let sigma = noise_other.projected_std(other.vector())?;
    let mu_dot = other.score(noise_other.mean())?;
    let denom = sigma * lambda + stats.d_max - mu_dot;
    if denom <= 0.0 {
        return Err(Error::ZeroDenominator(denom));
    }
    Ok(-1.0 + (stats.d_max + stats.d_min - 2.0 * mu_dot) / denom)
}

/// One ordered pair's condition: is `phi_i . phi_j` within the admissible
/// bound `a(phi_i, phi_j)`?
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SufficiencyReport {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PairEntry {
    pub i: usize,
    pub j: usize,
    pub report: SufficiencyReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairwiseOutcome {
    /// All ordered pairs (i, j), i != j, in row-major order.
    pub pairs: Vec<PairEntry>,
    /// Per key i: min over j != i of a(phi_i, phi_j). Infinity for a single
    /// key (nothing to compare against).
    pub min_rhs_per_key: Vec<f64>,
}

impl PairwiseOutcome {
    pub fn all_satisfied(&self) -> bool {
        self.pairs.iter().all(|p| p.report.satisfied)
    }
}

/// Evaluates the admissibility condition for every ordered key pair.
/// `noises[k]` is the noise model of key k's generator.
pub fn check_pairwise(
    keys: &[Key],
    noises: &[NoiseModel],
    dataset: &DatasetHandle,
    delta: f64,
) -> Result<PairwiseOutcome> {
    check_delta(delta)?;
    if keys.len() != noises.len() {
        return Err(Error::DimensionMismatch { expected: keys.len(), got: noises.len() });
    }
    let n = keys.len();
    let mut pairs = Vec::with_capacity(n.saturating_mul(n.saturating_sub(1)));
    let mut min_rhs = vec![f64::INFINITY; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let lhs = dot(keys[i].vector(), keys[j].vector());
            let rhs = pairwise_bound(&keys[i], &keys[j], dataset, &noises[j], delta)?;
            min_rhs[i] = min_rhs[i].min(rhs);
            pairs.push(PairEntry {
                i,
                j,
                report: SufficiencyReport { lhs, rhs, satisfied: lhs <= rhs, delta },
            });
        }
    }
    Ok(PairwiseOutcome { pairs, min_rhs_per_key: min_rhs })
}

/// Worst-case attributability of `n_models` models whose pairwise conditions
/// hold: `max(0, 1 - n * delta)`.
pub fn attributability_lower_bound(n_models: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok((1.0 - n_models as f64 * delta).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keygen::attach_stats;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::RngExt;
    use rand_distr::StandardNormal;

    fn dataset_with_projections(projs: &[f64]) -> (Key, DatasetHandle) {
        // 2-d rows (p, anything): key (1, 0) projects to exactly p.
        let key = Key::new(1, vec![1.0, 0.0], 0.0, 0.0, 0.0).unwrap();
        let rows: Vec<Vec<f64>> = projs.iter().map(|p| vec![*p, 0.3]).collect();
        (key, DatasetHandle::from_rows("projs", &rows, None).unwrap())
    }

    #[test]
    fn perturbation_flips_every_sample() {
        let (key, ds) = dataset_with_projections(&[-2.0, -0.5, -1.25]);
        let delta = distinguishing_perturbation(&key, &ds).unwrap();
        assert_eq!(delta, vec![3.0, 0.0]); // (1 + d_max) * phi with d_max = 2
        for row in ds.rows() {
            let shifted: Vec<f64> = row.iter().zip(&delta).map(|(x, d)| x + d).collect();
            assert!(key.score(&shifted).unwrap() > 0.0);
        }
    }

    #[test]
    fn perturbation_requires_compliance() {
        let (key, ds) = dataset_with_projections(&[-2.0, 0.5]);
        assert!(matches!(
            distinguishing_perturbation(&key, &ds),
            Err(Error::NotCompliant { .. })
        ));
    }

    #[test]
    fn min_gamma_reference_value() {
        // d_max = 2, isotropic sigma = 0.1, mu = 0, delta = 0.01:
        // gamma = 2 + 0.1 * sqrt(ln(1e4)) = 2.3034854258770293
        let (key, ds) = dataset_with_projections(&[-2.0, -0.5]);
        let noise = NoiseModel::isotropic(2, 0.1).unwrap();
        let g = min_gamma(&key, &ds, &noise, 0.01).unwrap();
        let oracle = 2.0 + 0.1 * (1.0f64 / 1e-4).ln().sqrt();
        assert_relative_eq!(g, oracle, epsilon = 1e-14);
        assert_relative_eq!(g, 2.30349, epsilon = 5e-6);
    }

    #[test]
    fn min_gamma_shifts_with_noise_mean() {
        // Same but mu = 0.05 * phi: gamma drops by exactly 0.05.
        let (key, ds) = dataset_with_projections(&[-2.0, -0.5]);
        let noise =
            NoiseModel::diagonal(vec![0.05, 0.0], vec![0.01, 0.01]).unwrap();
        let g = min_gamma(&key, &ds, &noise, 0.01).unwrap();
        let oracle = 2.0 + 0.1 * (1.0f64 / 1e-4).ln().sqrt() - 0.05;
        assert_relative_eq!(g, oracle, epsilon = 1e-14);
    }

    #[test]
    fn min_gamma_zero_noise_equals_d_max() {
        let (key, ds) = dataset_with_projections(&[-2.0, -0.5]);
        let g = min_gamma(&key, &ds, &NoiseModel::zero(2), 1.0).unwrap();
        assert_relative_eq!(g, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn delta_is_validated() {
        let (key, ds) = dataset_with_projections(&[-2.0]);
        let noise = NoiseModel::zero(2);
        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                min_gamma(&key, &ds, &noise, bad),
                Err(Error::InvalidDelta(_))
            ));
        }
    }

    #[test]
    fn pairwise_bound_reference_value() {
        // d_max = 2, d_min = 0.5, sigma = 0.1, mu = 0, delta = 0.01:
        // a = -1 + 2.5 / (0.1 * sqrt(ln 1e4) + 2) = 0.0853085...
        let (other, ds) = dataset_with_projections(&[-2.0, -0.5]);
        let key = Key::new(2, vec![0.0, 1.0], 0.0, 0.0, 0.0).unwrap();
        let noise = NoiseModel::isotropic(2, 0.1).unwrap();
        let a = pairwise_bound(&key, &other, &ds, &noise, 0.01).unwrap();
        let oracle = -1.0 + 2.5 / (0.1 * (1.0f64 / 1e-4).ln().sqrt() + 2.0);
        assert_relative_eq!(a, oracle, epsilon = 1e-14);
        assert_relative_eq!(a, 0.08531, epsilon = 5e-6);
    }

    #[test]
    fn pairwise_bound_zero_noise_is_ratio() {
        // sigma -> 0, mu -> 0 reduces to d_min / d_max = 0.25.
        let (other, ds) = dataset_with_projections(&[-2.0, -0.5]);
        let key = Key::new(2, vec![0.0, 1.0], 0.0, 0.0, 0.0).unwrap();
        let a = pairwise_bound(&key, &other, &ds, &NoiseModel::zero(2), 0.01).unwrap();
        assert_relative_eq!(a, 0.25, epsilon = 1e-9);
    }

    #[test]
    fn check_pairwise_single_key_is_empty() {
        let (key, ds) = dataset_with_projections(&[-2.0, -0.5]);
        let out = check_pairwise(
            std::slice::from_ref(&key),
            std::slice::from_ref(&NoiseModel::zero(2)),
            &ds,
            0.01,
        )
        .unwrap();
        assert!(out.pairs.is_empty());
        assert_eq!(out.min_rhs_per_key, vec![f64::INFINITY]);
        assert!(out.all_satisfied());
    }

    #[test]
    fn check_pairwise_flags_aligned_keys() {
        let (k1, ds) = dataset_with_projections(&[-2.0, -0.5]);
        let k2 = attach_stats(
            &crate::keygen::make_rotated_key(
                &Key::new(2, vec![0.0, 1.0], 0.0, 0.0, 0.0).unwrap(),
                &k1,
                10.0,
            )
            .unwrap(),
            &ds,
        )
        .unwrap();
        let noises = vec![NoiseModel::zero(2), NoiseModel::zero(2)];
        let out = check_pairwise(&[k1, k2], &noises, &ds, 0.01).unwrap();
        // cos(10 deg) = 0.985 is far above d_min / d_max.
        assert!(!out.all_satisfied());
        assert_eq!(out.pairs.len(), 2);
    }

    #[test]
    fn attributability_bound_values() {
        assert_relative_eq!(attributability_lower_bound(10, 0.01).unwrap(), 0.9);
        assert_eq!(attributability_lower_bound(200, 0.01).unwrap(), 0.0);
        assert!(attributability_lower_bound(1, 0.0).is_err());
    }

    #[test]
    fn gaussian_tail_bound_holds_empirically() {
        // P(eps <= sigma * y) >= 1 - exp(-y^2 / 2) for eps ~ N(0, sigma^2).
        // Checked by simulation with a 3-standard-error allowance.
        let sigma = 0.7;
        let n = 1_000_000usize;
        let mut rng = stream_rng(2024, 0);
        let draws: Vec<f64> = (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        for y in [0.5, 1.0, 2.0, 3.0] {
            let freq = draws.iter().filter(|x| **x <= sigma * y).count() as f64 / n as f64;
            let bound = 1.0 - (-y * y / 2.0f64).exp();
            let slack = 3.0 * (bound * (1.0 - bound) / n as f64).sqrt();
            assert!(
                freq >= bound - slack,
                "y={y}: empirical {freq} below tail bound {bound}"
            );
        }
    }

    #[test]
    fn union_bound_holds_on_random_joint_distributions() {
        // P(A and B) >= 1 - P(not A) - P(not B) on sampled correlated pairs.
        let mut rng = stream_rng(2025, 0);
        for _ in 0..1000 {
            // Random joint pmf over {0,1}^2.
            let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.0f64..1.0)).collect();
            let z: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / z).collect();
            let n = 2000;
            let mut counts = [0usize; 4];
            for _ in 0..n {
                let u: f64 = rng.random_range(0.0..1.0);
                let mut acc = 0.0;
                let mut cell = 3;
                for (k, pk) in p.iter().enumerate() {
                    acc += pk;
                    if u < acc {
                        cell = k;
                        break;
                    }
                }
                counts[cell] += 1;
            }
            // cells: 0 = (0,0), 1 = (0,1), 2 = (1,0), 3 = (1,1)
            let p11 = counts[3] as f64 / n as f64;
            let p_not_a = (counts[0] + counts[1]) as f64 / n as f64;
            let p_not_b = (counts[0] + counts[2]) as f64 / n as f64;
            assert!(p11 >= 1.0 - p_not_a - p_not_b - 1e-12);
        }
    }

    proptest! {
        // min_gamma grows as delta shrinks and as sigma grows.
        #[test]
        fn min_gamma_monotone(
            sigma1 in 0.0f64..1.0,
            bump in 0.01f64..1.0,
            delta in 0.001f64..0.5,
        ) {
            let (key, ds) = dataset_with_projections(&[-2.0, -0.5]);
            let n1 = NoiseModel::isotropic(2, sigma1).unwrap();
            let n2 = NoiseModel::isotropic(2, sigma1 + bump).unwrap();
            let g_sig1 = min_gamma(&key, &ds, &n1, delta).unwrap();
            let g_sig2 = min_gamma(&key, &ds, &n2, delta).unwrap();
            prop_assert!(g_sig2 >= g_sig1);
            let g_tight = min_gamma(&key, &ds, &n1, delta / 2.0).unwrap();
            prop_assert!(g_tight >= g_sig1);
        }
    }
}
