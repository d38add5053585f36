//! Attribution keys and the linear classifier they induce.
//!
//! A key is a unit-norm vector phi. The classifier it defines is
//! `f(x) = sign(phi . x)`: strictly positive projections are labeled as
//! generated by the key's model, everything else (including exact zeros) as
//! authentic data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, normalize_mut};

/// Tolerance on | ||phi|| - 1 | for stored keys.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Classifier output. `Generated` corresponds to +1, `Authentic` to -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Generated,
    Authentic,
}

impl Label {
    pub fn sign(self) -> i32 {
        match self {
            Label::Generated => 1,
            Label::Authentic => -1,
        }
    }
}

/// A user's attribution key together with the dataset statistics that the
/// margin bounds are computed from: `d_max` / `d_min` are the largest and
/// smallest absolute projections of the dataset onto the key, and
/// `compliance_fraction` is the share of dataset samples with a strictly
/// negative projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Key {
    id: u32,
    vector: Vec<f64>,
    d_max: f64,
    d_min: f64,
    compliance_fraction: f64,
    created_at: u64,
}

impl Key {
    pub fn new(
        id: u32,
        vector: Vec<f64>,
        d_max: f64,
        d_min: f64,
        compliance_fraction: f64,
    ) -> Result<Self> {
        let key = Self { id, vector, d_max, d_min, compliance_fraction, created_at: 0 };
        key.validate()?;
        Ok(key)
    }

    /// Builds a key from an arbitrary direction by normalizing it. Dataset
    /// statistics are zeroed; attach them with `keygen::attach_stats`.
    pub fn from_direction(id: u32, mut raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        normalize_mut(&mut raw)?;
        Self::new(id, raw, 0.0, 0.0, 0.0)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.vector.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if self.vector.iter().any(|x| !x.is_finite())
            || !self.d_max.is_finite()
            || !self.d_min.is_finite()
        {
            return Err(Error::NonFinite);
        }
        if (norm(&self.vector) - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::DegenerateNorm);
        }
        if self.d_max < 0.0 || self.d_min < 0.0 || self.d_min > self.d_max {
            return Err(Error::InvalidParameter(format!(
                "projection stats out of order: d_min {} d_max {}",
                self.d_min, self.d_max
            )));
        }
        if !(0.0..=1.0).contains(&self.compliance_fraction) {
            return Err(Error::InvalidParameter(format!(
                "compliance fraction {} outside [0, 1]",
                self.compliance_fraction
            )));
        }
        Ok(())
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn compliance_fraction(&self) -> f64 {
        self.compliance_fraction
    }

    pub fn created_at(&self) -> u64 {
        self.created_at
    }

    /// Returns the key stamped with a creation time (unix seconds). The
    /// default of 0 means "unset"; library code never reads the clock, so
    /// outputs stay reproducible unless a caller opts in.
    pub fn with_created_at(mut self, created_at: u64) -> Self {
        self.created_at = created_at;
        self
    }

    pub(crate) fn with_id(mut self, id: u32) -> Self {
        self.id = id;
        self
    }

    pub(crate) fn with_stats(mut self, d_max: f64, d_min: f64, compliance_fraction: f64) -> Self {
        self.d_max = d_max;
        self.d_min = d_min;
        self.compliance_fraction = compliance_fraction;
        self
    }

    /// Projection phi . x.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(dot(&self.vector, x))
    }

    /// sign(phi . x), with zero projections labeled authentic.
    pub fn classify(&self, x: &[f64]) -> Result<Label> {
        Ok(if self.score(x)? > 0.0 { Label::Generated } else { Label::Authentic })
    }
}
