//! Model error distributions. A watermarked generator is modeled as
//! `base sample + gamma * phi + eps` where `eps` follows one of these noise
//! models: parametric Gaussian (diagonal or full covariance) or an empirical
//! bag of residuals drawn with replacement.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, dot, mean_rows};
use crate::stats::sample_std;

/// Full covariance models above this dimension are rejected; the factor alone
/// would be d*d floats.
pub const MAX_FULL_COV_DIM: usize = 4096;

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Covariance {
    /// Per-component variances.
    Diagonal(Vec<f64>),
    /// Row-major d x d matrix.
    Full(Vec<f64>),
    /// Row-major m x d residual samples, drawn with replacement.
    Empirical(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseModel {
    mean: Vec<f64>,
    cov: Covariance,
}

impl NoiseModel {
    /// Zero noise: eps = 0 always.
    pub fn zero(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], cov: Covariance::Diagonal(vec![0.0; dim]) }
    }

    /// Zero-mean isotropic Gaussian with standard deviation `std`.
    pub fn isotropic(dim: usize, std: f64) -> Result<Self> {
        if !(std.is_finite() && std >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise std must be >= 0, got {std}")));
        }
        Self::diagonal(vec![0.0; dim], vec![std * std; dim])
    }

    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: variances.len() });
        }
        if mean.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if mean.iter().any(|x| !x.is_finite())
            || variances.iter().any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::NonFinite);
        }
        Ok(Self { mean, cov: Covariance::Diagonal(variances) })
    }

    /// Full-covariance Gaussian. The matrix must be symmetric positive
    /// semidefinite; that is checked here by attempting a Cholesky
    /// factorization, so construction is O(d^3).
    pub fn full(mean: Vec<f64>, cov_row_major: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if d > MAX_FULL_COV_DIM {
            return Err(Error::InvalidParameter(format!(
                "full covariance limited to dim <= {MAX_FULL_COV_DIM}, got {d}"
            )));
        }
        if cov_row_major.len() != d * d {
            return Err(Error::DimensionMismatch { expected: d * d, got: cov_row_major.len() });
        }
        if mean.iter().chain(&cov_row_major).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let scale = cov_row_major.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
        for i in 0..d {
            for j in (i + 1)..d {
                if (cov_row_major[i * d + j] - cov_row_major[j * d + i]).abs() > 1e-9 * scale {
                    return Err(Error::NotPositiveSemidefinite);
                }
            }
        }
        cholesky_lower(&cov_row_major, d)?;
        Ok(Self { mean, cov: Covariance::Full(cov_row_major) })
    }

    /// Stores residual samples directly; the mean field becomes the sample
    /// mean and draws return rows with replacement.
    pub fn empirical(residuals: &[Vec<f64>]) -> Result<Self> {
        if residuals.len() < 2 {
            return Err(Error::TooFewSamples { min: 2, got: residuals.len() });
        }
        let d = residuals[0].len();
        if d == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        let mut flat = Vec::with_capacity(residuals.len() * d);
        for r in residuals {
            if r.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: r.len() });
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite);
            }
            flat.extend_from_slice(r);
        }
        let mean = mean_rows(&flat, d);
        Ok(Self { mean, cov: Covariance::Empirical(flat) })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn is_empirical(&self) -> bool {
        matches!(self.cov, Covariance::Empirical(_))
    }

    /// Variance of the projection phi . eps. For empirical storage this is
    /// the sample variance of {phi . (eps_i - mean)} with n-1 denominator.
    pub fn projected_variance(&self, phi: &[f64]) -> Result<f64> {
        if phi.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: phi.len() });
        }
        let d = self.dim();
        Ok(match &self.cov {
            Covariance::Diagonal(vars) => {
                phi.iter().zip(vars).map(|(p, v)| p * p * v).sum::<f64>()
            }
            Covariance::Full(cov) => {
                let mut acc = 0.0;
                for (i, pi) in phi.iter().enumerate() {
                    acc += pi * dot(&cov[i * d..(i + 1) * d], phi);
                }
                acc.max(0.0)
            }
            Covariance::Empirical(flat) => {
                let projs: Vec<f64> = flat.chunks_exact(d).map(|r| dot(r, phi)).collect();
                let s = sample_std(&projs);
                s * s
            }
        })
    }

    pub fn projected_std(&self, phi: &[f64]) -> Result<f64> {
        Ok(self.projected_variance(phi)?.sqrt())
    }

    pub(crate) fn prepared(&self) -> Result<PreparedNoise<'_>> {
        let d = self.dim();
        Ok(match &self.cov {
            Covariance::Diagonal(vars) => {
                let stds: Vec<f64> = vars.iter().map(|v| v.sqrt()).collect();
                if stds.iter().all(|s| *s == 0.0) && self.mean.iter().all(|m| *m == 0.0) {
                    PreparedNoise::None
                } else {
                    PreparedNoise::Diagonal { mean: &self.mean, stds }
                }
            }
            Covariance::Full(cov) => {
                PreparedNoise::Full { mean: &self.mean, chol: cholesky_lower(cov, d)?, d }
            }
            Covariance::Empirical(flat) => PreparedNoise::Empirical { flat, d },
        })
    }
}

/// Sampler state derived once per batch of draws.
pub(crate) enum PreparedNoise<'a> {
    None,
    Diagonal { mean: &'a [f64], stds: Vec<f64> },
    Full { mean: &'a [f64], chol: Vec<f64>, d: usize },
    Empirical { flat: &'a [f64], d: usize },
}

impl PreparedNoise<'_> {
    /// Adds one noise draw to `out`.
    pub(crate) fn add_draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            PreparedNoise::None => {}
            PreparedNoise::Diagonal { mean, stds } => {
                for ((o, m), s) in out.iter_mut().zip(*mean).zip(stds) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o += m + s * z;
                }
            }
            PreparedNoise::Full { mean, chol, d } => {
                let z: Vec<f64> = (0..*d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                for i in 0..*d {
                    let li = &chol[i * d..i * d + i + 1];
                    out[i] += mean[i] + dot(li, &z[..=i]);
                }
            }
            PreparedNoise::Empirical { flat, d } => {
                let m = flat.len() / d;
                let row = rng.random_range(0..m);
                for (o, e) in out.iter_mut().zip(&flat[row * d..(row + 1) * d]) {
                    *o += e;
                }
            }
        }
    }
}
