//! In-memory datasets. Samples are stored row-major as one flat `f64` buffer;
//! the fingerprint is a content hash that registries use to pin which data a
//! key set was trained against.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layout::ImageLayout;
use crate::linalg::{dot, mean_rows};

#[derive(Debug, Clone)]
pub struct DatasetHandle {
    name: String,
    data: Vec<f64>,
    n: usize,
    d: usize,
    clamp: Option<(f64, f64)>,
    layout: Option<ImageLayout>,
    fingerprint: u64,
}

impl DatasetHandle {
    /// Takes ownership of a flat row-major n x d buffer. If clamp bounds are
    /// given, every sample must already lie inside them.
    pub fn new(
        name: impl Into<String>,
        data: Vec<f64>,
        d: usize,
        clamp: Option<(f64, f64)>,
    ) -> Result<Self> {
        if d == 0 || data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !data.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch { expected: d, got: data.len() % d });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        if let Some((lo, hi)) = clamp {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::BadClampBounds { lo, hi });
            }
            for (i, row) in data.chunks_exact(d).enumerate() {
                if row.iter().any(|x| *x < lo || *x > hi) {
                    return Err(Error::OutOfBounds { index: i });
                }
            }
        }
        let n = data.len() / d;
        let fingerprint = fingerprint_of(&data, d);
        Ok(Self { name: name.into(), data, n, d, clamp, layout: None, fingerprint })
    }

    pub fn from_rows(
        name: impl Into<String>,
        rows: &[Vec<f64>],
        clamp: Option<(f64, f64)>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(name, data, d, clamp)
    }

    /// Attaches an image layout; its size must match the sample dimension.
    pub fn with_layout(mut self, layout: ImageLayout) -> Result<Self> {
        if layout.len() != self.d {
            return Err(Error::LayoutMismatch { expected: layout.len(), got: self.d });
        }
        self.layout = Some(layout);
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Same data without clamp bounds. The fingerprint is a content hash, so
    /// it does not change.
    pub fn without_clamp(&self) -> Self {
        let mut ds = self.clone();
        ds.clamp = None;
        ds
    }

    pub fn with_clamp(&self, lo: f64, hi: f64) -> Result<Self> {
        let mut ds = self.clone();
        ds.clamp = None;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::BadClampBounds { lo, hi });
        }
        for (i, row) in ds.data.chunks_exact(ds.d).enumerate() {
            if row.iter().any(|x| *x < lo || *x > hi) {
                return Err(Error::OutOfBounds { index: i });
            }
        }
        ds.clamp = Some((lo, hi));
        Ok(ds)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn clamp(&self) -> Option<(f64, f64)> {
        self.clamp
    }

    pub fn layout(&self) -> Option<ImageLayout> {
        self.layout
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn mean(&self) -> Vec<f64> {
        mean_rows(&self.data, self.d)
    }

    /// phi . x for every sample, in row order.
    pub fn projections(&self, phi: &[f64]) -> Result<Vec<f64>> {
        if phi.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: phi.len() });
        }
        Ok(self.rows().map(|r| dot(r, phi)).collect())
    }
}

/// Content hash: SHA-256 over the dimension, count, and little-endian sample
/// bytes, truncated to 64 bits. Stable across platforms and load paths.
fn fingerprint_of(data: &[f64], d: usize) -> u64 {
    let mut h = Sha256::new();
    h.update((d as u64).to_le_bytes());
    h.update(((data.len() / d) as u64).to_le_bytes());
    for x in data {
        h.update(x.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}
