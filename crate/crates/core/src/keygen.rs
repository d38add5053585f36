//! Key generation by projected subgradient descent.
//!
//! A new key minimizes
//!
//! ```text
//!   E_x[ max(1 + phi . x, 0) ]  +  w * sum_j max(phi_j . phi, 0)
//! ```
//!
//! over unit-norm phi, where x ranges over the dataset and phi_j over the
//! already-registered keys. The hinge drives every dataset projection below
//! zero (data compliance, with margin), the penalty keeps new keys from
//! leaning towards existing ones. Each step renormalizes back onto the unit
//! sphere; the best iterate under the full objective is returned.

use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetHandle;
use crate::error::{Error, Result};
use crate::key::Key;
use crate::linalg::{axpy, dot, normalize_mut};
use crate::rng::stream_rng;

/// Where the optimizer starts on the sphere.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyInit {
    /// Against the dataset mean. Compliant from the first iterate when the
    /// data sits in one half-space, but a saddle when an existing key points
    /// exactly the same way (the penalty gradient is then radial and a
    /// projected step cannot leave it). Falls back to `Random` for a zero
    /// mean.
    #[default]
    NegativeMean,
    /// Seeded isotropic random unit vector; breaks the saddle above.
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeygenConfig {
    pub max_iters: u32,
    pub batch_size: usize,
    /// Initial step size; decays geometrically by `step_decay` per iteration.
    pub step_size: f64,
    pub step_decay: f64,
    /// Stop when the relative change of the full objective between checks
    /// falls below this.
    pub tol: f64,
    /// Required fraction of dataset samples with phi . x < 0.
    pub compliance_threshold: f64,
    pub orthogonality_weight: f64,
    #[serde(default)]
    pub init: KeyInit,
    pub seed: u64,
}

impl Default for KeygenConfig {
    fn default() -> Self {
        Self {
            max_iters: 600,
            batch_size: 64,
            step_size: 0.1,
            step_decay: 0.995,
            tol: 1e-7,
            compliance_threshold: 1.0,
            orthogonality_weight: 1.0,
            init: KeyInit::default(),
            seed: 0,
        }
    }
}

impl KeygenConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("max_iters and batch_size must be positive".into()));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidParameter(format!("step_size {} must be > 0", self.step_size)));
        }
        if !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "step_decay {} must lie in (0, 1]",
                self.step_decay
            )));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("tol {} must be >= 0", self.tol)));
        }
        if !(self.compliance_threshold > 0.0 && self.compliance_threshold <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "compliance_threshold {} must lie in (0, 1]",
                self.compliance_threshold
            )));
        }
        if !(self.orthogonality_weight.is_finite() && self.orthogonality_weight >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "orthogonality_weight {} must be >= 0",
                self.orthogonality_weight
            )));
        }
        Ok(())
    }
}

/// Dataset projection statistics of a key direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplianceStats {
    /// max |phi . x|
    pub d_max: f64,
    /// min |phi . x|
    pub d_min: f64,
    /// fraction of samples with phi . x < 0
    pub compliance_fraction: f64,
}

pub fn compliance_stats(key: &Key, dataset: &DatasetHandle) -> Result<ComplianceStats> {
    vector_stats(key.vector(), dataset)
}

pub(crate) fn vector_stats(phi: &[f64], dataset: &DatasetHandle) -> Result<ComplianceStats> {
    if phi.len() != dataset.dim() {
        return Err(Error::DimensionMismatch { expected: dataset.dim(), got: phi.len() });
    }
    let mut d_max = 0.0f64;
    let mut d_min = f64::INFINITY;
    let mut compliant = 0usize;
    for row in dataset.rows() {
        let p = dot(row, phi);
        let a = p.abs();
        d_max = d_max.max(a);
        d_min = d_min.min(a);
        if p < 0.0 {
            compliant += 1;
        }
    }
    Ok(ComplianceStats {
        d_max,
        d_min,
        compliance_fraction: compliant as f64 / dataset.n() as f64,
    })
}

/// Returns the key with `d_max`, `d_min`, and `compliance_fraction`
/// recomputed against `dataset`.
pub fn attach_stats(key: &Key, dataset: &DatasetHandle) -> Result<Key> {
    let s = vector_stats(key.vector(), dataset)?;
    Ok(key.clone().with_stats(s.d_max, s.d_min, s.compliance_fraction))
}

/// True when every dataset sample satisfies the hinge with margin:
/// phi . x <= -1 for all x. Stricter than compliance (phi . x < 0).
pub fn hinge_satisfied(key: &Key, dataset: &DatasetHandle) -> Result<bool> {
    let projs = dataset.projections(key.vector())?;
    Ok(projs.iter().all(|p| *p <= -1.0))
}

/// Full objective: mean hinge over the dataset plus the weighted
/// one-sided alignment penalty against `existing` keys.
pub fn objective(
    phi: &[f64],
    dataset: &DatasetHandle,
    existing: &[Key],
    orthogonality_weight: f64,
) -> Result<f64> {
    if phi.len() != dataset.dim() {
        return Err(Error::DimensionMismatch { expected: dataset.dim(), got: phi.len() });
    }
    let mut hinge = 0.0;
    for row in dataset.rows() {
        hinge += (1.0 + dot(row, phi)).max(0.0);
    }
    hinge /= dataset.n() as f64;
    let mut penalty = 0.0;
    for k in existing {
        if k.dim() != phi.len() {
            return Err(Error::DimensionMismatch { expected: phi.len(), got: k.dim() });
        }
        penalty += dot(k.vector(), phi).max(0.0);
    }
    Ok(hinge + orthogonality_weight * penalty)
}

fn random_unit(d: usize, seed: u64) -> Result<Vec<f64>> {
    // Stream u64::MAX cannot collide with the per-iteration batch streams.
    let mut rng = stream_rng(seed, u64::MAX);
    let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    normalize_mut(&mut v).map_err(|_| Error::DegenerateNorm)?;
    Ok(v)
}

const OBJECTIVE_CHECK_EVERY: u32 = 10;

/// Generates one key compliant with `dataset` and softly orthogonal to
/// `existing`. Deterministic in `cfg.seed`. Fails with `NonCompliant` if the
/// optimizer cannot reach `compliance_threshold`.
pub fn generate_key(
    dataset: &DatasetHandle,
    existing: &[Key],
    cfg: &KeygenConfig,
) -> Result<Key> {
    cfg.validate()?;
    let d = dataset.dim();
    for k in existing {
        if k.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: k.dim() });
        }
    }

    let mut phi = match cfg.init {
        KeyInit::NegativeMean => {
            let mut m = dataset.mean();
            for x in &mut m {
                *x = -*x;
            }
            normalize_mut(&mut m).is_ok().then_some(m)
        }
        KeyInit::Random => None,
    }
    .map_or_else(|| random_unit(d, cfg.seed), Ok)?;
    if !existing.is_empty() {
        // The start may coincide with an existing key (typical: that key was
        // itself optimized from the negative mean), which is an unstable
        // stall point: the penalty gradient is then exactly radial and a
        // projected step cannot leave it. A tiny seeded rotation restores
        // the tangential component; the flow away from the stall grows it
        // geometrically.
        let mut rng = stream_rng(cfg.seed, u64::MAX - 1);
        for x in &mut phi {
            *x += 1e-3 * rng.sample::<f64, _>(StandardNormal);
        }
        normalize_mut(&mut phi).map_err(|_| Error::DegenerateNorm)?;
    }

    let mut best = phi.clone();
    let mut best_obj = objective(&phi, dataset, existing, cfg.orthogonality_weight)?;
    let mut last_checked = best_obj;

    let mut grad = vec![0.0; d];
    let mut step = cfg.step_size;
    for t in 0..cfg.max_iters {
        let mut rng = stream_rng(cfg.seed, t as u64);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let inv_b = 1.0 / cfg.batch_size as f64;
        for _ in 0..cfg.batch_size {
            let row = dataset.sample(rng.random_range(0..dataset.n()));
            if 1.0 + dot(row, &phi) > 0.0 {
                axpy(inv_b, row, &mut grad);
            }
        }
        for k in existing {
            if dot(k.vector(), &phi) > 0.0 {
                axpy(cfg.orthogonality_weight, k.vector(), &mut grad);
            }
        }
        axpy(-step, &grad.clone(), &mut phi);
        if normalize_mut(&mut phi).is_err() {
            // The step collapsed the iterate; restart from the best seen.
            phi = best.clone();
        }
        step *= cfg.step_decay;

        if (t + 1) % OBJECTIVE_CHECK_EVERY == 0 || t + 1 == cfg.max_iters {
            let obj = objective(&phi, dataset, existing, cfg.orthogonality_weight)?;
            if obj < best_obj {
                best_obj = obj;
                best.copy_from_slice(&phi);
            }
            let rel = (obj - last_checked).abs() / last_checked.abs().max(1e-12);
            if rel < cfg.tol {
                break;
            }
            last_checked = obj;
        }
    }

    let stats = vector_stats(&best, dataset)?;
    if stats.compliance_fraction < cfg.compliance_threshold {
        return Err(Error::NonCompliant {
            achieved: stats.compliance_fraction,
            threshold: cfg.compliance_threshold,
        });
    }
    Key::new(
        existing.len() as u32 + 1,
        best,
        stats.d_max,
        stats.d_min,
        stats.compliance_fraction,
    )
}

/// Pairwise inner products phi_i . phi_j of a key set.
pub fn gram_matrix(keys: &[Key]) -> Result<Vec<Vec<f64>>> {
    if let Some(first) = keys.first() {
        let d = first.dim();
        for k in keys {
            if k.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: k.dim() });
            }
        }
    }
    Ok(keys
        .iter()
        .map(|a| keys.iter().map(|b| dot(a.vector(), b.vector())).collect())
        .collect())
}

/// Largest off-diagonal entry of the Gram matrix (0 for fewer than 2 keys).
pub fn max_offdiagonal(gram: &[Vec<f64>]) -> f64 {
    let mut m = 0.0f64;
    for (i, row) in gram.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                m = m.max(*v);
            }
        }
    }
    m
}

/// Unit vector at exactly `angle_deg` degrees from `reference`, inside the
/// plane spanned by `reference` and `base`. Dataset statistics are zeroed;
/// re-attach them with `attach_stats`.
pub fn make_rotated_key(base: &Key, reference: &Key, angle_deg: f64) -> Result<Key> {
    if base.dim() != reference.dim() {
        return Err(Error::DimensionMismatch { expected: reference.dim(), got: base.dim() });
    }
    if !(angle_deg > 0.0 && angle_deg < 180.0) {
        return Err(Error::InvalidParameter(format!(
            "rotation angle {angle_deg} must lie in (0, 180) degrees"
        )));
    }
    let u = reference.vector();
    let along = dot(base.vector(), u);
    let mut w: Vec<f64> = base
        .vector()
        .iter()
        .zip(u)
        .map(|(b, ui)| b - along * ui)
        .collect();
    if normalize_mut(&mut w).is_err() {
        return Err(Error::DegenerateSpan);
    }
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let mut v: Vec<f64> = u.iter().zip(&w).map(|(ui, wi)| cos * ui + sin * wi).collect();
    normalize_mut(&mut v)?;
    Key::new(base.id(), v, 0.0, 0.0, 0.0)
}
