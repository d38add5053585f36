//! Watermarked generator simulator and the shift-magnitude search.
//!
//! A watermarked model is `x = x0 + gamma * phi + eps` with `x0` drawn from
//! the base dataset (standing in for the unwatermarked generator's output
//! distribution), `phi` the user's key, and `eps` from a noise model that
//! captures how an actual retrained generator deviates from this ideal.
//! Optionally the result is clamped to the dataset's value bounds, the way a
//! generator with a saturating output layer would be.

use std::sync::Arc;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetHandle;
use crate::error::{Error, Result};
use crate::key::Key;
use crate::keygen::vector_stats;
use crate::metrics;
use crate::noise::NoiseModel;
use crate::postproc::{apply_batch, PostProcessSpec};
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone)]
pub struct WatermarkModel {
    base: Arc<DatasetHandle>,
    key: Key,
    gamma: f64,
    noise: Arc<NoiseModel>,
    clamp: bool,
}

impl WatermarkModel {
    /// `clamp` requires the base dataset to declare clamp bounds. A zero
    /// gamma is allowed (it gives the unwatermarked baseline); negative
    /// gammas are not.
    pub fn new(
        base: Arc<DatasetHandle>,
        key: Key,
        gamma: f64,
        noise: Arc<NoiseModel>,
        clamp: bool,
    ) -> Result<Self> {
        if key.dim() != base.dim() {
            return Err(Error::DimensionMismatch { expected: base.dim(), got: key.dim() });
        }
        if noise.dim() != base.dim() {
            return Err(Error::DimensionMismatch { expected: base.dim(), got: noise.dim() });
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!("gamma {gamma} must be finite and >= 0")));
        }
        if clamp && base.clamp().is_none() {
            return Err(Error::InvalidParameter(
                "clamping requested but the base dataset has no bounds".into(),
            ));
        }
        Ok(Self { base, key, gamma, noise, clamp })
    }

    pub fn base(&self) -> &Arc<DatasetHandle> {
        &self.base
    }

    pub fn key(&self) -> &Key {
        &self.key
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn noise(&self) -> &Arc<NoiseModel> {
        &self.noise
    }

    pub fn clamp(&self) -> bool {
        self.clamp
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.base.clone(), self.key.clone(), gamma, self.noise.clone(), self.clamp)
    }
}

/// Draws `n` outputs. Sample `i` uses its own RNG stream under `seed`, so
/// results are bit-stable regardless of batching.
pub fn sample(model: &WatermarkModel, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    Ok(sample_paired(model, n, seed)?.1)
}

/// Draws `n` (base, output) pairs; the outputs are exactly what `sample`
/// returns for the same seed.
#[allow(clippy::type_complexity)]
pub fn sample_paired(
    model: &WatermarkModel,
    n: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let d = model.base.dim();
    let prepared = model.noise.prepared()?;
    let phi = model.key.vector();
    let bounds = if model.clamp { model.base.clamp() } else { None };
    let mut bases = Vec::with_capacity(n);
    let mut outs = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream_rng(seed, i as u64);
        let row = model.base.sample(rng.random_range(0..model.base.n()));
        let mut x: Vec<f64> = Vec::with_capacity(d);
        x.extend_from_slice(row);
        for (xi, p) in x.iter_mut().zip(phi) {
            *xi += model.gamma * p;
        }
        prepared.add_draw(&mut rng, &mut x);
        if let Some((lo, hi)) = bounds {
            for xi in &mut x {
                *xi = xi.clamp(lo, hi);
            }
        }
        bases.push(row.to_vec());
        outs.push(x);
    }
    Ok((bases, outs))
}

/// Fits a diagonal Gaussian to residual vectors: componentwise mean and
/// sample variance (n - 1). Use `NoiseModel::empirical` instead to keep the
/// raw residuals.
pub fn fit_noise(residuals: &[Vec<f64>]) -> Result<NoiseModel> {
    if residuals.len() < 2 {
        return Err(Error::TooFewSamples { min: 2, got: residuals.len() });
    }
    let d = residuals[0].len();
    let m = residuals.len() as f64;
    let mut mean = vec![0.0; d];
    for r in residuals {
        if r.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: r.len() });
        }
        for (acc, x) in mean.iter_mut().zip(r) {
            *acc += x;
        }
    }
    for acc in &mut mean {
        *acc /= m;
    }
    let mut vars = vec![0.0; d];
    for r in residuals {
        for ((acc, x), mu) in vars.iter_mut().zip(r).zip(&mean) {
            *acc += (x - mu) * (x - mu);
        }
    }
    for acc in &mut vars {
        *acc /= m - 1.0;
    }
    NoiseModel::diagonal(mean, vars)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaSearchConfig {
    /// Target failure budget: the search stops once estimated
    /// distinguishability reaches 1 - delta.
    pub delta: f64,
    /// Geometric growth factor applied to gamma after a failed round.
    pub alpha: f64,
    /// Monte-Carlo draws per round.
    pub mc_samples: usize,
    pub max_rounds: u32,
    pub seed: u64,
}

impl Default for GammaSearchConfig {
    fn default() -> Self {
        Self { delta: 0.01, alpha: 1.1, mc_samples: 5000, max_rounds: 64, seed: 0 }
    }
}

impl GammaSearchConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidDelta(self.delta));
        }
        if !(self.alpha.is_finite() && self.alpha > 1.0) {
            return Err(Error::InvalidParameter(format!("alpha {} must be > 1", self.alpha)));
        }
        if self.mc_samples == 0 || self.max_rounds == 0 {
            return Err(Error::InvalidParameter(
                "mc_samples and max_rounds must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GammaSearchOutcome {
    pub gamma: f64,
    pub model: WatermarkModel,
    /// Number of rounds executed (1 means the starting gamma passed).
    pub rounds: u32,
    /// Distinguishability estimate of the accepted round (the attacked
    /// estimate for the robust search).
    pub distinguishability: f64,
}

/// Geometric search for the smallest shift magnitude that reaches empirical
/// distinguishability 1 - delta. Starts at gamma = d_max and multiplies by
/// alpha after each failed round; every round re-estimates D with fresh,
/// round-seeded draws. Models clamp exactly when the dataset declares
/// bounds. Errors with `Diverged` when `max_rounds` is exhausted.
pub fn gamma_search(
    key: &Key,
    base: &Arc<DatasetHandle>,
    noise: &Arc<NoiseModel>,
    cfg: &GammaSearchConfig,
) -> Result<GammaSearchOutcome> {
    search_impl(key, base, noise, None, cfg)
}

/// Like `gamma_search`, but each round measures distinguishability on
/// attacked samples and additionally requires the clean estimate to pass,
/// so the returned gamma is never below the plain search's for the same
/// seed. With the identity attack the result is bit-identical to
/// `gamma_search`. The base dataset must carry an image layout.
pub fn robust_gamma_search(
    key: &Key,
    base: &Arc<DatasetHandle>,
    noise: &Arc<NoiseModel>,
    attack: &PostProcessSpec,
    cfg: &GammaSearchConfig,
) -> Result<GammaSearchOutcome> {
    search_impl(key, base, noise, Some(attack), cfg)
}

fn search_impl(
    key: &Key,
    base: &Arc<DatasetHandle>,
    noise: &Arc<NoiseModel>,
    attack: Option<&PostProcessSpec>,
    cfg: &GammaSearchConfig,
) -> Result<GammaSearchOutcome> {
    cfg.validate()?;
    let layout = match attack {
        Some(_) => Some(base.layout().ok_or_else(|| {
            Error::InvalidParameter("robust search needs an image layout on the dataset".into())
        })?),
        None => None,
    };
    let stats = vector_stats(key.vector(), base)?;
    if stats.d_max <= 0.0 {
        return Err(Error::InvalidParameter(
            "dataset projects to zero along the key; no search scale".into(),
        ));
    }
    let clamp = base.clamp().is_some();
    let threshold = 1.0 - cfg.delta;
    let mut gamma = stats.d_max;
    let mut last_d = 0.0;
    for round in 0..cfg.max_rounds {
        let model = WatermarkModel::new(base.clone(), key.clone(), gamma, noise.clone(), clamp)?;
        let round_seed = derive_seed(cfg.seed, round as u64);
        let outputs = sample(&model, cfg.mc_samples, derive_seed(round_seed, 0))?;
        let neg = metrics::dataset_negative_rate(key, base, cfg.mc_samples, derive_seed(round_seed, 1))?;
        let d_clean = 0.5 * (metrics::positive_rate(key, &outputs)? + neg);
        let d_round = match attack {
            None => d_clean,
            Some(spec) => {
                let layout = layout.as_ref().expect("layout checked above");
                let attacked =
                    apply_batch(&spec.with_seed(derive_seed(spec.seed(), round as u64)), &outputs, layout)?;
                let d_attacked = 0.5 * (metrics::positive_rate(key, &attacked)? + neg);
                if d_clean < threshold {
                    d_clean.min(d_attacked)
                } else {
                    d_attacked
                }
            }
        };
        last_d = d_round;
        if d_round >= threshold {
            return Ok(GammaSearchOutcome {
                gamma,
                model,
                rounds: round + 1,
                distinguishability: d_round,
            });
        }
        gamma *= cfg.alpha;
    }
    Err(Error::Diverged { max_rounds: cfg.max_rounds, last_gamma: gamma / cfg.alpha, last_d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::ImageLayout;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;
    use rand_distr::StandardNormal;

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

    fn unit_key(v: Vec<f64>) -> Key {
        Key::from_direction(1, v).unwrap()
    }

    #[test]
    fn zero_noise_sampling_shifts_exactly() {
        let ds = cloud(50, &[-2.0, -1.0], 0.2, 3);
        let key = unit_key(vec![1.0, 0.0]);
        let model =
            WatermarkModel::new(ds.clone(), key.clone(), 1.5, Arc::new(NoiseModel::zero(2)), false)
                .unwrap();
        let (bases, outs) = sample_paired(&model, 100, 9).unwrap();
        for (b, o) in bases.iter().zip(&outs) {
            assert_relative_eq!(o[0] - b[0], 1.5, epsilon = 1e-12);
            assert_relative_eq!(o[1], b[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let ds = cloud(50, &[-2.0, -1.0], 0.2, 4);
        let key = unit_key(vec![1.0, 0.0]);
        let noise = Arc::new(NoiseModel::isotropic(2, 0.1).unwrap());
        let model = WatermarkModel::new(ds, key, 1.0, noise, false).unwrap();
        let a = sample(&model, 64, 1).unwrap();
        let b = sample(&model, 64, 1).unwrap();
        let c = sample(&model, 64, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // Prefix stability: the first k draws do not depend on n.
        let shorter = sample(&model, 8, 1).unwrap();
        assert_eq!(&a[..8], &shorter[..]);
    }

    #[test]
    fn clamped_outputs_stay_in_bounds() {
        let data: Vec<f64> = vec![-0.9, -0.8, -0.95, -0.7, -0.85, -0.9];
        let ds = Arc::new(DatasetHandle::new("b", data, 2, Some((-1.0, 1.0))).unwrap());
        let key = unit_key(vec![std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2]);
        let noise = Arc::new(NoiseModel::isotropic(2, 0.5).unwrap());
        let model = WatermarkModel::new(ds, key, 3.0, noise, true).unwrap();
        for x in sample(&model, 500, 11).unwrap() {
            assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn clamp_requires_bounds() {
        let ds = cloud(10, &[-1.0], 0.1, 5);
        let key = unit_key(vec![1.0]);
        assert!(
            WatermarkModel::new(ds, key, 1.0, Arc::new(NoiseModel::zero(1)), true).is_err()
        );
    }

    #[test]
    fn guaranteed_gamma_reaches_target_positive_rate() {
        // One base point projecting to -2, isotropic sigma 0.1, delta 0.01:
        // at the certified minimal gamma the positive rate clears 0.995.
        let ds = Arc::new(DatasetHandle::new("pt", vec![-2.0, 0.0], 2, None).unwrap());
        let key = unit_key(vec![1.0, 0.0]);
        let noise = Arc::new(NoiseModel::isotropic(2, 0.1).unwrap());
        let gamma = crate::theory::min_gamma(&key, &ds, &noise, 0.01).unwrap();
        let model = WatermarkModel::new(ds, key.clone(), gamma, noise, false).unwrap();
        let outs = sample(&model, 10_000, 21).unwrap();
        let pos = metrics::positive_rate(&key, &outs).unwrap();
        assert!(pos >= 0.995, "positive rate {pos}");
    }

    #[test]
    fn fit_noise_recovers_moments() {
        let d = 3;
        let true_mean = [0.2, -0.1, 0.05];
        let true_std = [0.3, 0.1, 0.2];
        let m = 4000;
        let mut residuals = Vec::with_capacity(m);
        for i in 0..m {
            let mut rng = stream_rng(31, i as u64);
            residuals.push(
                (0..d)
                    .map(|j| true_mean[j] + true_std[j] * rng.sample::<f64, _>(StandardNormal))
                    .collect::<Vec<f64>>(),
            );
        }
        let nm = fit_noise(&residuals).unwrap();
        for j in 0..d {
            let tol = 3.0 * true_std[j] / (m as f64).sqrt();
            assert!((nm.mean()[j] - true_mean[j]).abs() < tol, "component {j} mean off");
        }
        let phi = [1.0, 0.0, 0.0];
        assert!((nm.projected_std(&phi).unwrap() - 0.3).abs() < 0.02);
        assert!(matches!(fit_noise(&residuals[..1]), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn search_terminates_immediately_with_tiny_noise() {
        let ds = cloud(400, &[-2.0, -3.0], 0.05, 6);
        let key = unit_key(vec![0.5547001962252291, 0.8320502943378437]);
        let noise = Arc::new(NoiseModel::isotropic(2, 1e-4).unwrap());
        let out = gamma_search(&key, &ds, &noise, &GammaSearchConfig::default()).unwrap();
        // Tight cluster: d_min is close to d_max, so gamma = d_max flips
        // nearly every draw on the first round.
        assert!(out.rounds <= 2, "took {} rounds", out.rounds);
        let stats = crate::keygen::compliance_stats(&key, &ds).unwrap();
        let expect = stats.d_max * 1.1f64.powi(out.rounds as i32 - 1);
        assert_relative_eq!(out.gamma, expect, epsilon = 1e-12);
    }

    #[test]
    fn search_gamma_follows_geometric_schedule() {
        let ds = cloud(400, &[-1.2, -0.8, -1.0], 0.1, 7);
        let key = unit_key(vec![0.6, 0.48, 0.64]);
        let noise = Arc::new(NoiseModel::isotropic(3, 0.8).unwrap());
        let out = gamma_search(&key, &ds, &noise, &GammaSearchConfig::default()).unwrap();
        let stats = crate::keygen::compliance_stats(&key, &ds).unwrap();
        assert!(out.rounds > 1, "want a multi-round search for this test");
        assert_relative_eq!(
            out.gamma,
            stats.d_max * 1.1f64.powi(out.rounds as i32 - 1),
            epsilon = 1e-12
        );
    }

    #[test]
    fn search_diverges_when_capped() {
        let ds = cloud(300, &[-1.5, -1.5], 0.1, 8);
        let key = unit_key(vec![std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2]);
        let noise = Arc::new(NoiseModel::isotropic(2, 5.0).unwrap());
        let cfg = GammaSearchConfig { max_rounds: 2, ..Default::default() };
        assert!(matches!(
            gamma_search(&key, &ds, &noise, &cfg),
            Err(Error::Diverged { max_rounds: 2, .. })
        ));
    }

    #[test]
    fn identity_attack_matches_plain_search() {
        let ds = cloud(256, &[-1.0, -1.4, -0.7, -1.1], 0.15, 9);
        let layout = ImageLayout::new(2, 2, 1, (-10.0, 10.0)).unwrap();
        let ds = Arc::new(ds.as_ref().clone().with_layout(layout).unwrap());
        let key = unit_key(vec![0.5, 0.5, 0.5, 0.5]);
        let noise = Arc::new(NoiseModel::isotropic(4, 0.3).unwrap());
        let cfg = GammaSearchConfig::default().with_seed(5);
        let plain = gamma_search(&key, &ds, &noise, &cfg).unwrap();
        let ident = PostProcessSpec::identity();
        let robust = robust_gamma_search(&key, &ds, &noise, &ident, &cfg).unwrap();
        assert_eq!(plain.gamma.to_bits(), robust.gamma.to_bits());
        assert_eq!(plain.rounds, robust.rounds);
        assert_eq!(
            plain.distinguishability.to_bits(),
            robust.distinguishability.to_bits()
        );
    }
}
