//! Python bindings for the attribution toolkit, exposed as the `keymark_py`
//! module. Wrapper classes hold the core types; free functions mirror the
//! library's entry points with keyword defaults. All library errors surface
//! as `ValueError`.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use keymark::capacity::{self, CapacityOptions};
use keymark::keygen::{self, KeyInit, KeygenConfig};
use keymark::postproc::{self, PostProcess, PostProcessSpec};
use keymark::registry::{KeyRegistry, Verdict, VectorEncoding};
use keymark::watermark::{self, GammaSearchConfig};
use keymark::{dataio, metrics, theory};
use keymark::{DatasetHandle, ImageLayout, Key, MetricsReport, NoiseModel, WatermarkModel};

fn err(e: keymark::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Immutable sample matrix every operation runs against.
#[pyclass(name = "Dataset", module = "keymark_py", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Arc<DatasetHandle>,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (name, rows, clamp=None))]
    fn new(name: String, rows: Vec<Vec<f64>>, clamp: Option<(f64, f64)>) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(DatasetHandle::from_rows(name, &rows, clamp).map_err(err)?) })
    }

    /// Scale-mixture Gaussian cluster: rows are `s * (center + sigma * g)`
    /// with `s` uniform in `scale`.
    #[staticmethod]
    #[pyo3(signature = (n, center, sigma, scale=(1.0, 1.0), clamp=None, seed=0))]
    fn synthetic(
        n: usize,
        center: Vec<f64>,
        sigma: f64,
        scale: (f64, f64),
        clamp: Option<(f64, f64)>,
        seed: u64,
    ) -> PyResult<Self> {
        let ds = dataio::synth_scaled_gaussian(n, &center, sigma, scale, clamp, seed);
        Ok(Self { inner: Arc::new(ds.map_err(err)?) })
    }

    #[staticmethod]
    #[pyo3(signature = (images, labels=None, value_range=(-1.0, 1.0)))]
    fn from_idx(
        images: PathBuf,
        labels: Option<PathBuf>,
        value_range: (f64, f64),
    ) -> PyResult<Self> {
        let ds = dataio::load_idx(&images, labels.as_deref(), value_range);
        Ok(Self { inner: Arc::new(ds.map_err(err)?) })
    }

    #[staticmethod]
    #[pyo3(signature = (path, clamp=None))]
    fn from_csv(path: PathBuf, clamp: Option<(f64, f64)>) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(dataio::load_csv(&path, clamp).map_err(err)?) })
    }

    /// Returns a copy that carries an image layout, enabling the
    /// image-space attacks and the robust search.
    #[pyo3(signature = (height, width, channels=1, value_range=(-1.0, 1.0)))]
    fn with_layout(
        &self,
        height: usize,
        width: usize,
        channels: usize,
        value_range: (f64, f64),
    ) -> PyResult<Self> {
        let layout = ImageLayout::new(height, width, channels, value_range).map_err(err)?;
        let ds = (*self.inner).clone().with_layout(layout).map_err(err)?;
        Ok(Self { inner: Arc::new(ds) })
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn clamp(&self) -> Option<(f64, f64)> {
        self.inner.clamp()
    }

    fn mean(&self) -> Vec<f64> {
        self.inner.mean()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows().map(<[f64]>::to_vec).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset('{}', n={}, dim={})",
            self.inner.name(),
            self.inner.n(),
            self.inner.dim()
        )
    }
}

/// Unit-norm key vector with its projection statistics.
#[pyclass(name = "Key", module = "keymark_py", from_py_object)]
#[derive(Clone)]
struct PyKey {
    inner: Key,
}

#[pymethods]
impl PyKey {
    /// Normalizes `vector` and attaches no statistics; use
    /// `compliance_stats` to measure it against a dataset.
    #[staticmethod]
    fn from_direction(id: u32, vector: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: Key::from_direction(id, vector).map_err(err)? })
    }

    #[getter]
    fn id(&self) -> u32 {
        self.inner.id()
    }

    #[getter]
    fn vector(&self) -> Vec<f64> {
        self.inner.vector().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn d_max(&self) -> f64 {
        self.inner.d_max()
    }

    #[getter]
    fn d_min(&self) -> f64 {
        self.inner.d_min()
    }

    #[getter]
    fn compliance_fraction(&self) -> f64 {
        self.inner.compliance_fraction()
    }

    /// Projection `phi . x`.
    fn score(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.score(&x).map_err(err)
    }

    /// `sign(phi . x)`: +1 marks generated, -1 authentic.
    fn classify(&self, x: Vec<f64>) -> PyResult<i32> {
        Ok(self.inner.classify(&x).map_err(err)?.sign())
    }

    fn __repr__(&self) -> String {
        format!("Key(id={}, dim={})", self.inner.id(), self.inner.dim())
    }
}

/// Output noise model (zero, isotropic, diagonal, full, or empirical).
#[pyclass(name = "NoiseModel", module = "keymark_py", from_py_object)]
#[derive(Clone)]
struct PyNoise {
    inner: Arc<NoiseModel>,
}

#[pymethods]
impl PyNoise {
    #[staticmethod]
    fn zero(dim: usize) -> Self {
        Self { inner: Arc::new(NoiseModel::zero(dim)) }
    }

    #[staticmethod]
    fn isotropic(dim: usize, std: f64) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(NoiseModel::isotropic(dim, std).map_err(err)?) })
    }

    #[staticmethod]
    fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(NoiseModel::diagonal(mean, variances).map_err(err)?) })
    }

    #[staticmethod]
    fn full(mean: Vec<f64>, cov_row_major: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(NoiseModel::full(mean, cov_row_major).map_err(err)?) })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn mean(&self) -> Vec<f64> {
        self.inner.mean().to_vec()
    }

    /// Standard deviation of `phi . noise`.
    fn projected_std(&self, phi: Vec<f64>) -> PyResult<f64> {
        self.inner.projected_std(&phi).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("NoiseModel(dim={})", self.inner.dim())
    }
}

/// Watermarked generator: base sample + gamma * key + noise, optionally
/// clamped to the dataset's bounds.
#[pyclass(name = "WatermarkModel", module = "keymark_py", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: WatermarkModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (dataset, key, gamma, noise, clamp=false))]
    fn new(
        dataset: PyDataset,
        key: PyKey,
        gamma: f64,
        noise: PyNoise,
        clamp: bool,
    ) -> PyResult<Self> {
        let model = WatermarkModel::new(dataset.inner, key.inner, gamma, noise.inner, clamp);
        Ok(Self { inner: model.map_err(err)? })
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[getter]
    fn clamp(&self) -> bool {
        self.inner.clamp()
    }

    fn key(&self) -> PyKey {
        PyKey { inner: self.inner.key().clone() }
    }

    fn with_gamma(&self, gamma: f64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.with_gamma(gamma).map_err(err)? })
    }

    fn sample(&self, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        watermark::sample(&self.inner, n, seed).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "WatermarkModel(key={}, gamma={}, clamp={})",
            self.inner.key().id(),
            self.inner.gamma(),
            self.inner.clamp()
        )
    }
}

/// Result of a calibration search.
#[pyclass(name = "GammaOutcome", module = "keymark_py")]
struct PyGammaOutcome {
    #[pyo3(get)]
    gamma: f64,
    #[pyo3(get)]
    rounds: u32,
    #[pyo3(get)]
    distinguishability: f64,
    model: PyModel,
}

#[pymethods]
impl PyGammaOutcome {
    fn model(&self) -> PyModel {
        self.model.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "GammaOutcome(gamma={}, rounds={}, distinguishability={})",
            self.gamma, self.rounds, self.distinguishability
        )
    }
}

/// Seeded post-process (attack) applicable to flat images.
#[pyclass(name = "Attack", module = "keymark_py", from_py_object)]
#[derive(Clone)]
struct PyAttack {
    inner: PostProcessSpec,
}

#[pymethods]
impl PyAttack {
    #[staticmethod]
    fn identity() -> Self {
        Self { inner: PostProcessSpec::identity() }
    }

    /// Additive Gaussian pixel noise; `sigma=None` draws it uniformly from
    /// [0, 0.3] per image.
    #[staticmethod]
    #[pyo3(signature = (sigma=None, seed=0))]
    fn noise(sigma: Option<f64>, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: PostProcessSpec::new(PostProcess::Noise { sigma }, seed).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (sigma=None, seed=0))]
    fn blur(sigma: Option<f64>, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: PostProcessSpec::new(PostProcess::Blur { sigma }, seed).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (ratio=None, seed=0))]
    fn crop(ratio: Option<f64>, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: PostProcessSpec::new(PostProcess::Crop { ratio }, seed).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (quality=None, seed=0))]
    fn jpeg(quality: Option<i64>, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: PostProcessSpec::new(PostProcess::Jpeg { quality }, seed).map_err(err)? })
    }

    /// Blur, then crop-and-resize, then noise, then JPEG, all at random
    /// strengths.
    #[staticmethod]
    #[pyo3(signature = (seed=0))]
    fn combination(seed: u64) -> PyResult<Self> {
        Ok(Self { inner: PostProcessSpec::new(PostProcess::Combination, seed).map_err(err)? })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self { inner: self.inner.with_seed(seed) }
    }

    /// Applies the process to one flat image of shape
    /// `(height, width, channels)` with the given value range.
    #[pyo3(signature = (image, height, width, channels=1, value_range=(-1.0, 1.0)))]
    fn apply(
        &self,
        image: Vec<f64>,
        height: usize,
        width: usize,
        channels: usize,
        value_range: (f64, f64),
    ) -> PyResult<Vec<f64>> {
        let layout = ImageLayout::new(height, width, channels, value_range).map_err(err)?;
        postproc::apply(&self.inner, &image, &layout).map_err(err)
    }
}

/// Persistent key registry with attribution.
#[pyclass(name = "Registry", module = "keymark_py")]
struct PyRegistry {
    inner: KeyRegistry,
}

fn parse_encoding(name: &str) -> PyResult<VectorEncoding> {
    match name {
        "decimal" => Ok(VectorEncoding::Decimal),
        "base64" => Ok(VectorEncoding::Base64),
        other => Err(PyValueError::new_err(format!(
            "unknown encoding '{other}', expected 'decimal' or 'base64'"
        ))),
    }
}

#[pymethods]
impl PyRegistry {
    #[new]
    fn new(dataset: &PyDataset, delta: f64) -> PyResult<Self> {
        Ok(Self { inner: KeyRegistry::for_dataset(&dataset.inner, delta).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: KeyRegistry::load(&path).map_err(err)? })
    }

    #[pyo3(signature = (path, encoding="decimal"))]
    fn save(&self, path: PathBuf, encoding: &str) -> PyResult<()> {
        self.inner.save(&path, parse_encoding(encoding)?).map_err(err)
    }

    /// Appends a key (ids are re-stamped densely) and returns the assigned
    /// id.
    #[pyo3(signature = (key, gamma=None, noise_sigma=None))]
    fn append(&mut self, key: PyKey, gamma: Option<f64>, noise_sigma: Option<f64>) -> PyResult<u32> {
        self.inner.append(key.inner, gamma, noise_sigma).map_err(err)
    }

    fn revoke(&mut self, id: u32) -> PyResult<()> {
        self.inner.revoke(id).map_err(err)
    }

    /// Scores a query against every key: returns
    /// `(verdict, model_id, scores)` where verdict is "model",
    /// "authentic", or "ambiguous".
    fn attribute(&self, x: Vec<f64>) -> PyResult<(String, Option<u32>, Vec<f64>)> {
        let out = self.inner.attribute(&x).map_err(err)?;
        let (verdict, id) = match out.verdict {
            Verdict::Model(id) => ("model", Some(id)),
            Verdict::Authentic => ("authentic", None),
            Verdict::Ambiguous => ("ambiguous", None),
        };
        Ok((verdict.to_string(), id, out.scores))
    }

    fn keys(&self) -> Vec<PyKey> {
        self.inner.entries().iter().map(|e| PyKey { inner: e.key().clone() }).collect()
    }

    fn entries<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .entries()
            .iter()
            .map(|e| {
                let d = PyDict::new(py);
                d.set_item("id", e.key().id())?;
                d.set_item("gamma", e.gamma())?;
                d.set_item("noise_sigma", e.noise_sigma())?;
                d.set_item("revoked", e.revoked())?;
                Ok(d)
            })
            .collect()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta()
    }

    #[getter]
    fn dataset_fingerprint(&self) -> u64 {
        self.inner.dataset_fingerprint()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Registry(dim={}, keys={})", self.inner.dim(), self.inner.len())
    }
}

fn parse_init(name: &str) -> PyResult<KeyInit> {
    match name {
        "negative_mean" => Ok(KeyInit::NegativeMean),
        "random" => Ok(KeyInit::Random),
        other => Err(PyValueError::new_err(format!(
            "unknown init '{other}', expected 'negative_mean' or 'random'"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
fn keygen_config(
    seed: u64,
    max_iters: u32,
    batch_size: usize,
    step_size: f64,
    step_decay: f64,
    tol: f64,
    compliance_threshold: f64,
    orthogonality_weight: f64,
    init: &str,
) -> PyResult<KeygenConfig> {
    Ok(KeygenConfig {
        seed,
        max_iters,
        batch_size,
        step_size,
        step_decay,
        tol,
        compliance_threshold,
        orthogonality_weight,
        init: parse_init(init)?,
    })
}

/// Trains one key against the dataset, steering away from `existing`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (dataset, existing=Vec::new(), *, seed=0, max_iters=600,
    batch_size=64, step_size=0.1, step_decay=0.995, tol=1e-7,
    compliance_threshold=1.0, orthogonality_weight=1.0, init="negative_mean"))]
fn generate_key(
    dataset: &PyDataset,
    existing: Vec<PyKey>,
    seed: u64,
    max_iters: u32,
    batch_size: usize,
    step_size: f64,
    step_decay: f64,
    tol: f64,
    compliance_threshold: f64,
    orthogonality_weight: f64,
    init: &str,
) -> PyResult<PyKey> {
    let cfg = keygen_config(
        seed,
        max_iters,
        batch_size,
        step_size,
        step_decay,
        tol,
        compliance_threshold,
        orthogonality_weight,
        init,
    )?;
    let existing: Vec<Key> = existing.into_iter().map(|k| k.inner).collect();
    Ok(PyKey { inner: keygen::generate_key(&dataset.inner, &existing, &cfg).map_err(err)? })
}

#[pyfunction]
fn compliance_stats<'py>(
    py: Python<'py>,
    key: &PyKey,
    dataset: &PyDataset,
) -> PyResult<Bound<'py, PyDict>> {
    let stats = keygen::compliance_stats(&key.inner, &dataset.inner).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("compliance_fraction", stats.compliance_fraction)?;
    d.set_item("d_max", stats.d_max)?;
    d.set_item("d_min", stats.d_min)?;
    Ok(d)
}

#[pyfunction]
fn gram_matrix(keys: Vec<PyKey>) -> PyResult<Vec<Vec<f64>>> {
    let keys: Vec<Key> = keys.into_iter().map(|k| k.inner).collect();
    keygen::gram_matrix(&keys).map_err(err)
}

#[pyfunction]
fn max_offdiagonal(gram: Vec<Vec<f64>>) -> f64 {
    keygen::max_offdiagonal(&gram)
}

/// The shift `(1 + d_max) * phi`, which flips the sign of every dataset
/// projection under a fully compliant key.
#[pyfunction]
fn distinguishing_perturbation(key: &PyKey, dataset: &PyDataset) -> PyResult<Vec<f64>> {
    theory::distinguishing_perturbation(&key.inner, &dataset.inner).map_err(err)
}

#[pyfunction]
fn min_gamma(key: &PyKey, dataset: &PyDataset, noise: &PyNoise, delta: f64) -> PyResult<f64> {
    theory::min_gamma(&key.inner, &dataset.inner, &noise.inner, delta).map_err(err)
}

/// Largest admissible inner product between `key` and `other` such that
/// `key`'s marked outputs still classify negative under `other`.
#[pyfunction]
fn pairwise_bound(
    key: &PyKey,
    other: &PyKey,
    dataset: &PyDataset,
    noise_other: &PyNoise,
    delta: f64,
) -> PyResult<f64> {
    theory::pairwise_bound(&key.inner, &other.inner, &dataset.inner, &noise_other.inner, delta)
        .map_err(err)
}

/// Checks every ordered key pair; returns a dict with `all_satisfied`,
/// `violations` (list of (i, j) index pairs), and `min_rhs_per_key`.
#[pyfunction]
fn check_pairwise<'py>(
    py: Python<'py>,
    keys: Vec<PyKey>,
    noises: Vec<PyNoise>,
    dataset: &PyDataset,
    delta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let keys: Vec<Key> = keys.into_iter().map(|k| k.inner).collect();
    let noises: Vec<NoiseModel> = noises.into_iter().map(|n| (*n.inner).clone()).collect();
    let outcome = theory::check_pairwise(&keys, &noises, &dataset.inner, delta).map_err(err)?;
    let violations: Vec<(usize, usize)> = outcome
        .pairs
        .iter()
        .filter(|p| !p.report.satisfied)
        .map(|p| (p.i, p.j))
        .collect();
    let d = PyDict::new(py);
    d.set_item("all_satisfied", outcome.all_satisfied())?;
    d.set_item("violations", violations)?;
    d.set_item("min_rhs_per_key", outcome.min_rhs_per_key)?;
    Ok(d)
}

/// `1 - n_models * delta`, the guaranteed attributability when every pair
/// satisfies the sufficiency condition.
#[pyfunction]
fn attributability_lower_bound(n_models: usize, delta: f64) -> PyResult<f64> {
    theory::attributability_lower_bound(n_models, delta).map_err(err)
}

fn search_config(
    delta: f64,
    alpha: f64,
    mc_samples: usize,
    max_rounds: u32,
    seed: u64,
) -> GammaSearchConfig {
    GammaSearchConfig { delta, alpha, mc_samples, max_rounds, seed }
}

/// Geometric search for the smallest gamma reaching distinguishability
/// `1 - delta`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (key, dataset, noise, *, delta=0.01, alpha=1.1,
    mc_samples=5000, max_rounds=64, seed=0))]
fn gamma_search(
    key: &PyKey,
    dataset: &PyDataset,
    noise: &PyNoise,
    delta: f64,
    alpha: f64,
    mc_samples: usize,
    max_rounds: u32,
    seed: u64,
) -> PyResult<PyGammaOutcome> {
    let cfg = search_config(delta, alpha, mc_samples, max_rounds, seed);
    let out =
        watermark::gamma_search(&key.inner, &dataset.inner, &noise.inner, &cfg).map_err(err)?;
    Ok(PyGammaOutcome {
        gamma: out.gamma,
        rounds: out.rounds,
        distinguishability: out.distinguishability,
        model: PyModel { inner: out.model },
    })
}

/// Like `gamma_search`, but each round must also pass on attacked samples,
/// so the result is never below the plain search's for the same seed. The
/// dataset must carry an image layout.
#[pyfunction]
#[pyo3(signature = (key, dataset, noise, attack, *, delta=0.01, alpha=1.1,
    mc_samples=5000, max_rounds=64, seed=0))]
#[allow(clippy::too_many_arguments)]
fn robust_gamma_search(
    key: &PyKey,
    dataset: &PyDataset,
    noise: &PyNoise,
    attack: &PyAttack,
    delta: f64,
    alpha: f64,
    mc_samples: usize,
    max_rounds: u32,
    seed: u64,
) -> PyResult<PyGammaOutcome> {
    let cfg = search_config(delta, alpha, mc_samples, max_rounds, seed);
    let out = watermark::robust_gamma_search(
        &key.inner,
        &dataset.inner,
        &noise.inner,
        &attack.inner,
        &cfg,
    )
    .map_err(err)?;
    Ok(PyGammaOutcome {
        gamma: out.gamma,
        rounds: out.rounds,
        distinguishability: out.distinguishability,
        model: PyModel { inner: out.model },
    })
}

/// Fits a diagonal (or empirical) noise model to generator residuals.
#[pyfunction]
fn fit_noise(residuals: Vec<Vec<f64>>) -> PyResult<PyNoise> {
    Ok(PyNoise { inner: Arc::new(watermark::fit_noise(&residuals).map_err(err)?) })
}

#[pyfunction]
fn distinguishability(
    model: &PyModel,
    dataset: &PyDataset,
    n: usize,
    seed: u64,
) -> PyResult<f64> {
    metrics::distinguishability(&model.inner, &dataset.inner, n, seed).map_err(err)
}

/// Closed-form distinguishability; rejects clamped models.
#[pyfunction]
fn distinguishability_analytic(model: &PyModel, dataset: &PyDataset) -> PyResult<f64> {
    metrics::distinguishability_analytic(&model.inner, &dataset.inner).map_err(err)
}

fn unwrap_models(models: Vec<PyModel>, keys: Vec<PyKey>) -> (Vec<WatermarkModel>, Vec<Key>) {
    (
        models.into_iter().map(|m| m.inner).collect(),
        keys.into_iter().map(|k| k.inner).collect(),
    )
}

#[pyfunction]
fn attributability(
    models: Vec<PyModel>,
    keys: Vec<PyKey>,
    n: usize,
    seed: u64,
) -> PyResult<f64> {
    let (models, keys) = unwrap_models(models, keys);
    metrics::attributability(&models, &keys, n, seed).map_err(err)
}

#[pyfunction]
fn attributability_per_model(
    models: Vec<PyModel>,
    keys: Vec<PyKey>,
    n: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let (models, keys) = unwrap_models(models, keys);
    metrics::attributability_per_model(&models, &keys, n, seed).map_err(err)
}

/// Average L2 norm of the realized output shift (watermark plus noise,
/// after any clamping).
#[pyfunction]
fn perturbation_norm(model: &PyModel, n: usize, seed: u64) -> PyResult<f64> {
    metrics::perturbation_norm(&model.inner, n, seed).map_err(err)
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("distinguishability", r.distinguishability)?;
    d.set_item("attributability", r.attributability)?;
    d.set_item("perturbation_norm", r.perturbation_norm)?;
    d.set_item("samples_used", r.samples_used)?;
    d.set_item("seed", r.seed)?;
    Ok(d)
}

/// Evaluates every model before and after the attack; returns a
/// `(before, after)` pair of report dicts.
#[pyfunction]
fn robust_evaluate<'py>(
    py: Python<'py>,
    models: Vec<PyModel>,
    keys: Vec<PyKey>,
    attack: &PyAttack,
    n: usize,
    seed: u64,
) -> PyResult<(Bound<'py, PyDict>, Bound<'py, PyDict>)> {
    let (models, keys) = unwrap_models(models, keys);
    let (before, after) =
        postproc::robust_evaluate(&models, &keys, &attack.inner, n, seed).map_err(err)?;
    Ok((report_dict(py, &before)?, report_dict(py, &after)?))
}

/// Greedy capacity estimate: how many mutually admissible keys the dataset
/// supports under the pairwise condition.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (dataset, noise, delta=0.01, max_keys=8, *, seed=0,
    restarts=5, d_max_ceiling=None))]
fn estimate_capacity<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    noise: &PyNoise,
    delta: f64,
    max_keys: usize,
    seed: u64,
    restarts: u32,
    d_max_ceiling: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = KeygenConfig::default().with_seed(seed);
    let options = CapacityOptions { restarts, d_max_ceiling };
    let report =
        capacity::estimate_capacity(&dataset.inner, &noise.inner, delta, max_keys, &cfg, &options)
            .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("count", report.count)?;
    d.set_item(
        "keys",
        report.keys.into_iter().map(|k| PyKey { inner: k }).collect::<Vec<_>>(),
    )?;
    d.set_item("min_pairwise_margin", report.min_pairwise_margin)?;
    d.set_item("failure_reason", report.failure_reason.map(|f| format!("{f:?}")))?;
    d.set_item("delta", report.delta)?;
    Ok(d)
}

#[pymodule]
fn keymark_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyKey>()?;
    m.add_class::<PyNoise>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyGammaOutcome>()?;
    m.add_class::<PyAttack>()?;
    m.add_class::<PyRegistry>()?;
    m.add_function(wrap_pyfunction!(generate_key, m)?)?;
    m.add_function(wrap_pyfunction!(compliance_stats, m)?)?;
    m.add_function(wrap_pyfunction!(gram_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(max_offdiagonal, m)?)?;
    m.add_function(wrap_pyfunction!(distinguishing_perturbation, m)?)?;
    m.add_function(wrap_pyfunction!(min_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_bound, m)?)?;
    m.add_function(wrap_pyfunction!(check_pairwise, m)?)?;
    m.add_function(wrap_pyfunction!(attributability_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_search, m)?)?;
    m.add_function(wrap_pyfunction!(robust_gamma_search, m)?)?;
    m.add_function(wrap_pyfunction!(fit_noise, m)?)?;
    m.add_function(wrap_pyfunction!(distinguishability, m)?)?;
    m.add_function(wrap_pyfunction!(distinguishability_analytic, m)?)?;
    m.add_function(wrap_pyfunction!(attributability, m)?)?;
    m.add_function(wrap_pyfunction!(attributability_per_model, m)?)?;
    m.add_function(wrap_pyfunction!(perturbation_norm, m)?)?;
    m.add_function(wrap_pyfunction!(robust_evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_capacity, m)?)?;
    Ok(())
}
