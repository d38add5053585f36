//! Evaluation metrics for watermarked models.
//!
//! Distinguishability of a model under key phi is
//!
//! ```text
//! D = 1/2 * (Pr[phi' x > 0, x ~ model] + Pr[phi' x <= 0, x ~ data])
//! ```
//!
//! estimated here by Monte Carlo with `n` draws on each side, or computed in
//! closed form for unclamped models. Attributability is the probability that
//! a sample from a uniformly chosen model is attributed to exactly that
//! model by the one-positive-score rule that the registry also applies.

use rand::RngExt;

use crate::dataset::DatasetHandle;
use crate::error::{Error, Result};
use crate::key::Key;
use crate::report::MetricsReport;
use crate::rng::{derive_seed, stream_rng};
use crate::stats::normal_cdf;
use crate::watermark::{sample, sample_paired, WatermarkModel};

/// Fraction of samples scoring strictly positive under the key.
pub(crate) fn positive_rate(key: &Key, samples: &[Vec<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { min: 1, got: 0 });
    }
    let mut hits = 0usize;
    for x in samples {
        if key.score(x)? > 0.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Fraction of `n` dataset draws (with replacement, one RNG stream per draw)
/// scoring non-positive under the key.
pub(crate) fn dataset_negative_rate(
    key: &Key,
    dataset: &DatasetHandle,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::TooFewSamples { min: 1, got: 0 });
    }
    if key.dim() != dataset.dim() {
        return Err(Error::DimensionMismatch { expected: dataset.dim(), got: key.dim() });
    }
    let mut hits = 0usize;
    for i in 0..n {
        let mut rng = stream_rng(seed, i as u64);
        let row = dataset.sample(rng.random_range(0..dataset.n()));
        if key.score(row)? <= 0.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Monte-Carlo distinguishability estimate with `n` draws per side. The
/// model side uses the derived stream `(seed, 0)`, the dataset side
/// `(seed, 1)`, so estimates are reproducible and the two sides never share
/// randomness.
pub fn distinguishability(
    model: &WatermarkModel,
    dataset: &DatasetHandle,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let outputs = sample(model, n, derive_seed(seed, 0))?;
    let pos = positive_rate(model.key(), &outputs)?;
    let neg = dataset_negative_rate(model.key(), dataset, n, derive_seed(seed, 1))?;
    Ok(0.5 * (pos + neg))
}

/// Closed-form distinguishability for unclamped models. Conditioned on base
/// point x0, the model score is Gaussian with mean `phi' x0 + gamma +
/// phi' mu` and the noise's projected standard deviation, so the positive
/// rate is an average of normal CDFs over the dataset; the negative rate is
/// the dataset's exact non-positive fraction. Clamped models have no such
/// form and are rejected with `ClampUnsupported`.
pub fn distinguishability_analytic(
    model: &WatermarkModel,
    dataset: &DatasetHandle,
) -> Result<f64> {
    if model.clamp() {
        return Err(Error::ClampUnsupported);
    }
    let key = model.key();
    if key.dim() != dataset.dim() {
        return Err(Error::DimensionMismatch { expected: dataset.dim(), got: key.dim() });
    }
    let phi = key.vector();
    let sigma = model.noise().projected_std(phi)?;
    let noise_mean: f64 = phi.iter().zip(model.noise().mean()).map(|(p, m)| p * m).sum();
    let mut pos = 0.0;
    let mut neg = 0usize;
    for row in dataset.rows() {
        let proj: f64 = phi.iter().zip(row).map(|(p, x)| p * x).sum();
        let loc = proj + model.gamma() + noise_mean;
        pos += if sigma > 0.0 {
            normal_cdf(loc / sigma)
        } else if loc > 0.0 {
            1.0
        } else {
            0.0
        };
        if proj <= 0.0 {
            neg += 1;
        }
    }
    let n = dataset.n() as f64;
    Ok(0.5 * (pos / n + neg as f64 / n))
}

/// True when exactly one score is positive, and that one is at `target`.
/// This is the same decision rule the registry's attribution endpoint uses.
pub(crate) fn attributed_to(scores: &[f64], target: usize) -> bool {
    let mut positive = None;
    for (j, s) in scores.iter().enumerate() {
        if *s > 0.0 {
            if positive.is_some() {
                return false;
            }
            positive = Some(j);
        }
    }
    positive == Some(target)
}

/// Per-model attribution success rates: for each model, the fraction of `n`
/// of its samples that score positive under its own key and non-positive
/// under every other key in `keys`. `models[i]` must carry `keys[i]`.
pub fn attributability_per_model(
    models: &[WatermarkModel],
    keys: &[Key],
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if models.is_empty() || models.len() != keys.len() {
        return Err(Error::InvalidParameter(format!(
            "need matching non-empty model and key lists, got {} and {}",
            models.len(),
            keys.len()
        )));
    }
    for (i, (m, k)) in models.iter().zip(keys).enumerate() {
        if m.key().vector() != k.vector() {
            return Err(Error::InvalidParameter(format!(
                "model {i} does not carry key {i}; attribution rates would be meaningless"
            )));
        }
    }
    if n == 0 {
        return Err(Error::TooFewSamples { min: 1, got: 0 });
    }
    let mut rates = Vec::with_capacity(models.len());
    for (i, model) in models.iter().enumerate() {
        let outputs = sample(model, n, derive_seed(seed, i as u64))?;
        let mut hits = 0usize;
        let mut scores = vec![0.0; keys.len()];
        for x in &outputs {
            for (s, k) in scores.iter_mut().zip(keys) {
                *s = k.score(x)?;
            }
            if attributed_to(&scores, i) {
                hits += 1;
            }
        }
        rates.push(hits as f64 / n as f64);
    }
    Ok(rates)
}

/// Attributability across the key set: the mean of the per-model rates,
/// i.e. attribution accuracy when the sampled model is uniform.
pub fn attributability(
    models: &[WatermarkModel],
    keys: &[Key],
    n: usize,
    seed: u64,
) -> Result<f64> {
    let rates = attributability_per_model(models, keys, n, seed)?;
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Norm of the mean output perturbation, estimated from `n` paired draws.
/// With zero noise this is exactly gamma.
pub fn perturbation_norm(model: &WatermarkModel, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::TooFewSamples { min: 1, got: 0 });
    }
    let (bases, outs) = sample_paired(model, n, seed)?;
    let d = model.base().dim();
    let mut acc = vec![0.0; d];
    for (b, o) in bases.iter().zip(&outs) {
        for ((a, ov), bv) in acc.iter_mut().zip(o).zip(b) {
            *a += ov - bv;
        }
    }
    let nf = n as f64;
    Ok(acc.iter().map(|a| (a / nf) * (a / nf)).sum::<f64>().sqrt())
}

/// Bundles the standard evaluation of one model against its dataset and key
/// set into a report. Attributability is filled in only when `keys` is
/// provided (it needs the full key set, not just this model's).
pub fn evaluate(
    model: &WatermarkModel,
    dataset: &DatasetHandle,
    keys: Option<(&[WatermarkModel], &[Key], usize)>,
    n: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let d = distinguishability(model, dataset, n, derive_seed(seed, 0))?;
    let pnorm = perturbation_norm(model, n, derive_seed(seed, 1))?;
    let attr = match keys {
        Some((models, keys, idx)) => {
            let rates = attributability_per_model(models, keys, n, derive_seed(seed, 2))?;
            Some(rates[idx])
        }
        None => None,
    };
    Ok(MetricsReport {
        distinguishability: d,
        attributability: attr,
        perturbation_norm: pnorm,
        samples_used: n,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseModel;
    use crate::rng::stream_rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    fn cloud(n: usize, center: &[f64], sigma: f64, seed: u64) -> Arc<DatasetHandle> {
        let d = center.len();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            let mut rng = stream_rng(seed, i as u64);
            for c in center {
                data.push(c + sigma * rng.sample::<f64, _>(StandardNormal));
            }
        }
        Arc::new(DatasetHandle::new("cloud", data, d, None).unwrap())
    }

    fn model(
        ds: &Arc<DatasetHandle>,
        dir: Vec<f64>,
        gamma: f64,
        sigma: f64,
    ) -> (WatermarkModel, Key) {
        let key = Key::from_direction(1, dir).unwrap();
        let noise = Arc::new(if sigma > 0.0 {
            NoiseModel::isotropic(ds.dim(), sigma).unwrap()
        } else {
            NoiseModel::zero(ds.dim())
        });
        (WatermarkModel::new(ds.clone(), key.clone(), gamma, noise, false).unwrap(), key)
    }

    #[test]
    fn unwatermarked_model_scores_half_analytically() {
        // gamma = 0 and zero noise make the model identical to the data, so
        // the two error rates cancel to exactly one half.
        let ds = cloud(200, &[-1.0, 0.5], 0.8, 1);
        let (m, _) = model(&ds, vec![1.0, 0.0], 0.0, 0.0);
        assert_eq!(distinguishability_analytic(&m, &ds).unwrap(), 0.5);
    }

    #[test]
    fn estimate_matches_analytic_value() {
        let ds = cloud(300, &[-1.5, -0.5], 0.4, 2);
        let (m, _) = model(&ds, vec![0.8, 0.6], 2.0, 0.6);
        let exact = distinguishability_analytic(&m, &ds).unwrap();
        let est = distinguishability(&m, &ds, 20_000, 7).unwrap();
        assert!((est - exact).abs() < 0.01, "est {est} vs exact {exact}");
    }

    #[test]
    fn distinguishability_is_seeded() {
        let ds = cloud(100, &[-1.0], 0.3, 3);
        let (m, _) = model(&ds, vec![1.0], 1.0, 0.5);
        let a = distinguishability(&m, &ds, 500, 11).unwrap();
        assert_eq!(a, distinguishability(&m, &ds, 500, 11).unwrap());
        // The estimate is a coarse fraction, so two seeds can collide; over
        // several seeds at least one must differ.
        assert!((12..24).any(|s| distinguishability(&m, &ds, 500, s).unwrap() != a));
    }

    #[test]
    fn analytic_rejects_clamped_models() {
        let ds = Arc::new(
            DatasetHandle::new("b", vec![-0.5, -0.6, -0.4, -0.5], 2, Some((-1.0, 1.0))).unwrap(),
        );
        let key = Key::from_direction(1, vec![1.0, 0.0]).unwrap();
        let m = WatermarkModel::new(
            ds.clone(),
            key,
            0.5,
            Arc::new(NoiseModel::zero(2)),
            true,
        )
        .unwrap();
        assert!(matches!(distinguishability_analytic(&m, &ds), Err(Error::ClampUnsupported)));
    }

    #[test]
    fn attribution_rule_requires_unique_positive() {
        assert!(attributed_to(&[1.0, -0.2, -0.1], 0));
        assert!(!attributed_to(&[1.0, 0.2, -0.1], 0));
        assert!(!attributed_to(&[-1.0, -0.2, -0.1], 0));
        assert!(!attributed_to(&[1.0, -0.2, -0.1], 1));
        assert!(!attributed_to(&[0.0, -0.2, -0.1], 0));
    }

    #[test]
    fn single_model_attributability_is_its_positive_rate() {
        let ds = cloud(200, &[-1.0, -1.0], 0.3, 4);
        let (m, k) = model(&ds, vec![1.0, 0.0], 1.2, 0.4);
        let n = 4000;
        let a = attributability(&[m.clone()], &[k.clone()], n, 5).unwrap();
        let outs = sample(&m, n, derive_seed(5, 0)).unwrap();
        assert_eq!(a, positive_rate(&k, &outs).unwrap());
    }

    #[test]
    fn orthogonal_keys_attribute_cleanly() {
        let ds = cloud(300, &[-2.0, -2.0], 0.2, 6);
        let (m1, k1) = model(&ds, vec![1.0, 0.0], 4.0, 0.1);
        let (m2, k2) = model(&ds, vec![0.0, 1.0], 4.0, 0.1);
        let a = attributability(
            &[m1, m2],
            &[k1, k2],
            2000,
            8,
        )
        .unwrap();
        assert!(a > 0.99, "attributability {a}");
    }

    #[test]
    fn mismatched_model_and_key_order_is_rejected() {
        let ds = cloud(50, &[-1.0, -1.0], 0.2, 7);
        let (m1, k1) = model(&ds, vec![1.0, 0.0], 1.0, 0.1);
        let (m2, k2) = model(&ds, vec![0.0, 1.0], 1.0, 0.1);
        assert!(attributability(&[m1, m2], &[k2, k1], 100, 1).is_err());
    }

    #[test]
    fn perturbation_norm_equals_gamma_without_noise() {
        let ds = cloud(100, &[-1.0, -2.0, 1.0], 0.5, 8);
        let (m, _) = model(&ds, vec![0.6, 0.0, 0.8], 1.75, 0.0);
        let p = perturbation_norm(&m, 200, 9).unwrap();
        approx::assert_relative_eq!(p, 1.75, epsilon = 1e-12);
    }

    #[test]
    fn perturbation_norm_concentrates_with_noise() {
        // Zero-mean noise averages out of the mean perturbation.
        let ds = cloud(100, &[-1.0, -2.0], 0.5, 10);
        let (m, _) = model(&ds, vec![1.0, 0.0], 2.0, 0.5);
        let p = perturbation_norm(&m, 20_000, 11).unwrap();
        assert!((p - 2.0).abs() < 0.02, "norm {p}");
    }

    #[test]
    fn evaluate_populates_report() {
        let ds = cloud(150, &[-1.0, -1.5], 0.3, 12);
        let (m, k) = model(&ds, vec![1.0, 0.0], 1.5, 0.2);
        let models = [m.clone()];
        let keys = [k];
        let r = evaluate(&m, &ds, Some((&models, &keys, 0)), 1000, 13).unwrap();
        assert!(r.distinguishability > 0.9);
        assert!(r.attributability.is_some());
        assert_eq!(r.samples_used, 1000);
        assert_eq!(r.seed, 13);
        let bare = evaluate(&m, &ds, None, 1000, 13).unwrap();
        assert_eq!(bare.attributability, None);
        assert_eq!(bare.distinguishability, r.distinguishability);
    }
}
