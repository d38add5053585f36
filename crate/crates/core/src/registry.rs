//! Persistent key registry and the attribution decision rule.
//!
//! A registry pins the key set to one dataset (by content fingerprint) and
//! one failure budget delta. Attribution of a query x computes every key's
//! projection and applies the one-hot rule: exactly one positive projection
//! names the generating model, none means authentic data, several is
//! ambiguous. The registry is append-only; revocation leaves a tombstone so
//! ids stay dense.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::DatasetHandle;
use crate::error::{Error, Result};
use crate::key::Key;
use crate::theory::check_delta;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    key: Key,
    gamma: Option<f64>,
    noise_sigma: Option<f64>,
    revoked: bool,
}

impl RegistryEntry {
    pub fn key(&self) -> &Key {
        &self.key
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn noise_sigma(&self) -> Option<f64> {
        self.noise_sigma
    }

    pub fn revoked(&self) -> bool {
        self.revoked
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Model(u32),
    Authentic,
    Ambiguous,
}

/// Attribution outcome for one query. `scores` lists every entry's
/// projection in id order, revoked entries included (their scores are
/// reported but never decide the verdict).
#[derive(Debug, Clone, Serialize)]
pub struct AttributionVerdict {
    pub verdict: Verdict,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorEncoding {
    /// Vectors as JSON number arrays (shortest exact decimal).
    Decimal,
    /// Vectors as base64 of the little-endian f64 bytes.
    Base64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyRegistry {
    dim: usize,
    dataset_fingerprint: u64,
    delta: f64,
    entries: Vec<RegistryEntry>,
}

impl KeyRegistry {
    pub fn new(dim: usize, dataset_fingerprint: u64, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        if dim == 0 {
            return Err(Error::InvalidParameter("registry dimension must be positive".into()));
        }
        Ok(Self { dim, dataset_fingerprint, delta, entries: Vec::new() })
    }

    /// Empty registry bound to the dataset's dimension and fingerprint.
    pub fn for_dataset(dataset: &DatasetHandle, delta: f64) -> Result<Self> {
        Self::new(dataset.dim(), dataset.fingerprint(), delta)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dataset_fingerprint(&self) -> u64 {
        self.dataset_fingerprint
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: u32) -> Option<&RegistryEntry> {
        self.entries.get((id as usize).checked_sub(1)?)
    }

    /// Keys of the non-revoked entries, in id order.
    pub fn active_keys(&self) -> Vec<&Key> {
        self.entries.iter().filter(|e| !e.revoked).map(|e| &e.key).collect()
    }

    /// Appends a key, re-stamping its id to keep ids dense (entry k has id
    /// k + 1). Returns the assigned id.
    pub fn append(
        &mut self,
        key: Key,
        gamma: Option<f64>,
        noise_sigma: Option<f64>,
    ) -> Result<u32> {
        if key.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: key.dim() });
        }
        if let Some(g) = gamma
            && !(g.is_finite() && g >= 0.0)
        {
            return Err(Error::InvalidParameter(format!("gamma {g} must be non-negative")));
        }
        if let Some(s) = noise_sigma
            && !(s.is_finite() && s >= 0.0)
        {
            return Err(Error::InvalidParameter(format!("noise sigma {s} must be non-negative")));
        }
        let id = u32::try_from(self.entries.len() + 1)
            .map_err(|_| Error::InvalidParameter("registry is full".into()))?;
        self.entries.push(RegistryEntry { key: key.with_id(id), gamma, noise_sigma, revoked: false });
        Ok(id)
    }

    /// Marks an entry revoked. The entry stays in place (ids are dense and
    /// stable); it just stops participating in verdicts.
    pub fn revoke(&mut self, id: u32) -> Result<()> {
        let idx = (id as usize)
            .checked_sub(1)
            .filter(|i| *i < self.entries.len())
            .ok_or_else(|| Error::InvalidParameter(format!("no entry with id {id}")))?;
        self.entries[idx].revoked = true;
        Ok(())
    }

    /// Scores the query under every key and applies the one-hot rule over
    /// the non-revoked entries. Zero projections count as non-positive.
    pub fn attribute(&self, x: &[f64]) -> Result<AttributionVerdict> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let mut scores = Vec::with_capacity(self.entries.len());
        let mut positive: Option<u32> = None;
        let mut ambiguous = false;
        for e in &self.entries {
            let s = e.key.score(x)?;
            scores.push(s);
            if !e.revoked && s > 0.0 {
                if positive.is_some() {
                    ambiguous = true;
                } else {
                    positive = Some(e.key.id());
                }
            }
        }
        let verdict = match (positive, ambiguous) {
            (Some(id), false) => Verdict::Model(id),
            (None, _) => Verdict::Authentic,
            (Some(_), true) => Verdict::Ambiguous,
        };
        Ok(AttributionVerdict { verdict, scores })
    }

    /// Saves as JSON with a whole-file checksum: the `sha256` field is the
    /// hex digest of the canonical (sorted-key, compact) serialization of
    /// everything else.
    pub fn save(&self, path: &Path, encoding: VectorEncoding) -> Result<()> {
        let record = FileRecord {
            version: SCHEMA_VERSION,
            dim: self.dim,
            dataset_fingerprint: self.dataset_fingerprint,
            delta: self.delta,
            entries: self
                .entries
                .iter()
                .map(|e| EntryRecord {
                    id: e.key.id(),
                    vector: match encoding {
                        VectorEncoding::Decimal => VectorRepr::Decimal(e.key.vector().to_vec()),
                        VectorEncoding::Base64 => {
                            let mut bytes = Vec::with_capacity(8 * e.key.dim());
                            for v in e.key.vector() {
                                bytes.extend_from_slice(&v.to_le_bytes());
                            }
                            VectorRepr::Base64(BASE64.encode(bytes))
                        }
                    },
                    d_max: e.key.d_max(),
                    d_min: e.key.d_min(),
                    compliance_fraction: e.key.compliance_fraction(),
                    created_at: e.key.created_at(),
                    gamma: e.gamma,
                    noise_sigma: e.noise_sigma,
                    revoked: e.revoked,
                })
                .collect(),
        };
        let mut value = serde_json::to_value(&record)?;
        let canonical = serde_json::to_vec(&value)?;
        let checksum = hex_digest(&canonical);
        value
            .as_object_mut()
            .expect("records serialize to objects")
            .insert("sha256".into(), serde_json::Value::String(checksum));
        std::fs::write(path, serde_json::to_string_pretty(&value)?)?;
        Ok(())
    }

    /// Loads and fully validates a registry file: schema version, checksum,
    /// key norms, and id density.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut value: serde_json::Value = serde_json::from_str(&text)?;
        let obj = value.as_object_mut().ok_or(Error::MalformedFile)?;
        let version = obj
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or(Error::MalformedFile)?;
        if version != u64::from(SCHEMA_VERSION) {
            return Err(Error::SchemaVersionMismatch {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: SCHEMA_VERSION,
            });
        }
        let stored = obj
            .remove("sha256")
            .and_then(|v| v.as_str().map(str::to_owned))
            .ok_or(Error::ChecksumMismatch)?;
        let canonical = serde_json::to_vec(&value)?;
        if hex_digest(&canonical) != stored {
            return Err(Error::ChecksumMismatch);
        }
        let record: FileRecord = serde_json::from_value(value)?;
        let mut registry = Self::new(record.dim, record.dataset_fingerprint, record.delta)?;
        for (i, e) in record.entries.into_iter().enumerate() {
            let expected_id = u32::try_from(i + 1).expect("checked by append");
            if e.id != expected_id {
                return Err(Error::RegistryMismatch(format!(
                    "entry {i} has id {}, expected dense id {expected_id}",
                    e.id
                )));
            }
            let vector = match e.vector {
                VectorRepr::Decimal(v) => v,
                VectorRepr::Base64(text) => {
                    let bytes = BASE64
                        .decode(text.as_bytes())
                        .map_err(|err| Error::RegistryMismatch(format!("bad vector: {err}")))?;
                    if bytes.len() % 8 != 0 {
                        return Err(Error::RegistryMismatch(
                            "vector byte length not a multiple of 8".into(),
                        ));
                    }
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("chunked by 8")))
                        .collect()
                }
            };
            let key = Key::new(e.id, vector, e.d_max, e.d_min, e.compliance_fraction)?
                .with_created_at(e.created_at);
            let id = registry.append(key, e.gamma, e.noise_sigma)?;
            debug_assert_eq!(id, expected_id);
            if e.revoked {
                registry.revoke(id)?;
            }
        }
        Ok(registry)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[derive(Serialize, Deserialize)]
struct FileRecord {
    version: u32,
    dim: usize,
    dataset_fingerprint: u64,
    delta: f64,
    entries: Vec<EntryRecord>,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    id: u32,
    vector: VectorRepr,
    d_max: f64,
    d_min: f64,
    compliance_fraction: f64,
    created_at: u64,
    gamma: Option<f64>,
    noise_sigma: Option<f64>,
    revoked: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum VectorRepr {
    Decimal(Vec<f64>),
    Base64(String),
}
