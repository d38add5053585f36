//! Image post-processes used as robustness attacks: Gaussian blur, center
//! crop with bilinear rescale, additive white noise, baseline JPEG, and a
//! random composition of the four. All are deterministic given their
//! parameters and seed, and all map an H x W x C image to an image of the
//! same shape.

mod blur;
mod jpeg;
mod resize;

use std::io::Write as _;
use std::path::Path;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use blur::blur;
pub use jpeg::jpeg;
pub use resize::crop_resize;

use crate::error::{Error, Result};
use crate::key::Key;
use crate::layout::ImageLayout;
use crate::linalg::norm;
use crate::metrics::{attributed_to, dataset_negative_rate, positive_rate};
use crate::report::MetricsReport;
use crate::rng::{derive_seed, rng_from_seed, stream_rng};
use crate::watermark::{sample_paired, WatermarkModel};

pub const DEFAULT_JPEG_QUALITY: i64 = 80;

/// Blur widths drawn by the random stages: 1/3 * {1, 3, 5, 7, 9}.
pub const BLUR_SIGMAS: [f64; 5] =
    [1.0 / 3.0, 1.0, 5.0 / 3.0, 7.0 / 3.0, 3.0];

/// One post-process kind. `None` parameters are drawn per image from the
/// spec seed: blur sigma uniformly from `BLUR_SIGMAS`, crop ratio from
/// U[0.8, 1], noise sigma from U[0, 0.3]. A missing JPEG quality means
/// `DEFAULT_JPEG_QUALITY`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PostProcess {
    Identity,
    Blur { sigma: Option<f64> },
    Crop { ratio: Option<f64> },
    Noise { sigma: Option<f64> },
    Jpeg { quality: Option<i64> },
    Combination,
}

/// A post-process plus the seed that fixes all of its randomness. Image `i`
/// of a batch draws from RNG stream `i` under the seed, so results do not
/// depend on batch splitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostProcessSpec {
    process: PostProcess,
    seed: u64,
}

impl PostProcessSpec {
    /// Fixed parameters must sit in the documented attack ranges: blur
    /// sigma positive, crop ratio in [0.8, 1], noise sigma in [0, 0.3],
    /// JPEG quality in [1, 100].
    pub fn new(process: PostProcess, seed: u64) -> Result<Self> {
        match process {
            PostProcess::Identity | PostProcess::Combination => {}
            PostProcess::Blur { sigma: Some(s) } => {
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "blur sigma {s} must be positive"
                    )));
                }
            }
            PostProcess::Crop { ratio: Some(r) } => {
                if !(r.is_finite() && (0.8..=1.0).contains(&r)) {
                    return Err(Error::InvalidParameter(format!(
                        "crop ratio {r} must lie in [0.8, 1]"
                    )));
                }
            }
            PostProcess::Noise { sigma: Some(s) } => {
                if !(s.is_finite() && (0.0..=0.3).contains(&s)) {
                    return Err(Error::InvalidParameter(format!(
                        "noise sigma {s} must lie in [0, 0.3]"
                    )));
                }
            }
            PostProcess::Jpeg { quality: Some(q) } if !(1..=100).contains(&q) => {
                return Err(Error::BadQuality(q));
            }
            _ => {}
        }
        Ok(Self { process, seed })
    }

    pub fn identity() -> Self {
        Self { process: PostProcess::Identity, seed: 0 }
    }

    pub fn process(&self) -> &PostProcess {
        &self.process
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }
}

/// Applies the spec to a single image as element 0 of a batch.
pub fn apply(spec: &PostProcessSpec, image: &[f64], layout: &ImageLayout) -> Result<Vec<f64>> {
    apply_indexed(spec, image, layout, 0)
}

/// Applies the spec to one image occupying position `index` in a batch.
pub fn apply_indexed(
    spec: &PostProcessSpec,
    image: &[f64],
    layout: &ImageLayout,
    index: u64,
) -> Result<Vec<f64>> {
    layout.check_len(image)?;
    let mut rng = stream_rng(spec.seed, index);
    match spec.process {
        PostProcess::Identity => Ok(image.to_vec()),
        PostProcess::Blur { sigma } => {
            let s = sigma.unwrap_or_else(|| BLUR_SIGMAS[rng.random_range(0..BLUR_SIGMAS.len())]);
            blur(image, layout, s)
        }
        PostProcess::Crop { ratio } => {
            let r = ratio.unwrap_or_else(|| 0.8 + 0.2 * rng.random::<f64>());
            crop_resize(image, layout, r)
        }
        PostProcess::Noise { sigma } => {
            let s = sigma.unwrap_or_else(|| 0.3 * rng.random::<f64>());
            noise_with(image, s, &mut rng)
        }
        PostProcess::Jpeg { quality } => {
            jpeg(image, layout, quality.unwrap_or(DEFAULT_JPEG_QUALITY))
        }
        PostProcess::Combination => combination_with(image, layout, &mut rng),
    }
}

pub fn apply_batch(
    spec: &PostProcessSpec,
    images: &[Vec<f64>],
    layout: &ImageLayout,
) -> Result<Vec<Vec<f64>>> {
    images
        .iter()
        .enumerate()
        .map(|(i, img)| apply_indexed(spec, img, layout, i as u64))
        .collect()
}

/// Adds i.i.d. N(0, sigma^2) to every component. No clipping here; value
/// bounds are the dataset clamp's job.
pub fn add_noise(image: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    noise_with(image, sigma, &mut rng_from_seed(seed))
}

fn noise_with(image: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma {sigma} must be non-negative"
        )));
    }
    Ok(image
        .iter()
        .map(|x| x + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// Applies blur, crop, noise, and JPEG in that fixed order, each
/// independently with probability one half, parameters drawn fresh from the
/// seed (blur sigma from `BLUR_SIGMAS`, crop ratio from U[0.8, 1], noise
/// sigma from U[0, 0.3], JPEG at the default quality).
pub fn combination(image: &[f64], layout: &ImageLayout, seed: u64) -> Result<Vec<f64>> {
    layout.check_len(image)?;
    combination_with(image, layout, &mut rng_from_seed(seed))
}

struct CombinationPlan {
    blur_sigma: Option<f64>,
    crop_ratio: Option<f64>,
    noise_sigma: Option<f64>,
    jpeg: bool,
}

/// Stage decisions and parameters are drawn up front in the documented
/// order; the noise field (if any) consumes the stream afterwards.
fn combination_plan(rng: &mut ChaCha8Rng) -> CombinationPlan {
    let blur_sigma =
        (rng.random::<f64>() < 0.5).then(|| BLUR_SIGMAS[rng.random_range(0..BLUR_SIGMAS.len())]);
    let crop_ratio = (rng.random::<f64>() < 0.5).then(|| 0.8 + 0.2 * rng.random::<f64>());
    let noise_sigma = (rng.random::<f64>() < 0.5).then(|| 0.3 * rng.random::<f64>());
    let jpeg = rng.random::<f64>() < 0.5;
    CombinationPlan { blur_sigma, crop_ratio, noise_sigma, jpeg }
}

fn combination_with(
    image: &[f64],
    layout: &ImageLayout,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let plan = combination_plan(rng);
    let mut out = image.to_vec();
    if let Some(s) = plan.blur_sigma {
        out = blur(&out, layout, s)?;
    }
    if let Some(r) = plan.crop_ratio {
        out = crop_resize(&out, layout, r)?;
    }
    if let Some(s) = plan.noise_sigma {
        out = noise_with(&out, s, rng)?;
    }
    if plan.jpeg {
        out = jpeg(&out, layout, DEFAULT_JPEG_QUALITY)?;
    }
    Ok(out)
}

/// Evaluates a matched model/key set with and without the attack: mean
/// distinguishability over models, attributability under the
/// one-positive-score rule, and mean perturbation norm, each computed on
/// raw samples (`before`) and on attacked samples (`after`). Every model's
/// dataset must carry an image layout.
pub fn robust_evaluate(
    models: &[WatermarkModel],
    keys: &[Key],
    attack: &PostProcessSpec,
    n: usize,
    seed: u64,
) -> Result<(MetricsReport, MetricsReport)> {
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
                "model {i} does not carry key {i}"
            )));
        }
    }
    if n == 0 {
        return Err(Error::TooFewSamples { min: 1, got: 0 });
    }
    let m = models.len() as f64;
    let mut d = [0.0; 2];
    let mut a = [0.0; 2];
    let mut p = [0.0; 2];
    for (i, model) in models.iter().enumerate() {
        let layout = model.base().layout().ok_or_else(|| {
            Error::InvalidParameter("robust evaluation needs an image layout on the dataset".into())
        })?;
        let model_seed = derive_seed(seed, i as u64);
        let (bases, raw) = sample_paired(model, n, derive_seed(model_seed, 0))?;
        let neg = dataset_negative_rate(model.key(), model.base(), n, derive_seed(model_seed, 1))?;
        let attacked =
            apply_batch(&attack.with_seed(derive_seed(attack.seed, i as u64)), &raw, &layout)?;
        for (slot, outputs) in [&raw, &attacked].into_iter().enumerate() {
            d[slot] += 0.5 * (positive_rate(&keys[i], outputs)? + neg);
            let mut hits = 0usize;
            let mut scores = vec![0.0; keys.len()];
            for x in outputs {
                for (s, k) in scores.iter_mut().zip(keys) {
                    *s = k.score(x)?;
                }
                if attributed_to(&scores, i) {
                    hits += 1;
                }
            }
            a[slot] += hits as f64 / n as f64;
            let mut shift = vec![0.0; model.base().dim()];
            for (b, o) in bases.iter().zip(outputs) {
                for ((acc, ov), bv) in shift.iter_mut().zip(o).zip(b) {
                    *acc += (ov - bv) / n as f64;
                }
            }
            p[slot] += norm(&shift);
        }
    }
    let report = |slot: usize| MetricsReport {
        distinguishability: d[slot] / m,
        attributability: Some(a[slot] / m),
        perturbation_norm: p[slot] / m,
        samples_used: n,
        seed,
    };
    Ok((report(0), report(1)))
}

/// Writes a plain-text PGM ("P2") grayscale image, mapping the layout's
/// value range onto 0..=255.
pub fn write_pgm(path: &Path, image: &[f64], layout: &ImageLayout) -> Result<()> {
    if layout.channels != 1 {
        return Err(Error::InvalidParameter(format!(
            "PGM is grayscale; layout has {} channels",
            layout.channels
        )));
    }
    write_netpbm(path, "P2", image, layout)
}

/// Writes a plain-text PPM ("P3") color image, mapping the layout's value
/// range onto 0..=255.
pub fn write_ppm(path: &Path, image: &[f64], layout: &ImageLayout) -> Result<()> {
    if layout.channels != 3 {
        return Err(Error::InvalidParameter(format!(
            "PPM is three-channel; layout has {} channels",
            layout.channels
        )));
    }
    write_netpbm(path, "P3", image, layout)
}

fn write_netpbm(path: &Path, magic: &str, image: &[f64], layout: &ImageLayout) -> Result<()> {
    layout.check_len(image)?;
    let (lo, hi) = layout.value_range;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{magic}\n{} {}\n255", layout.width, layout.height)?;
    for y in 0..layout.height {
        let mut line = String::new();
        for x in 0..layout.width {
            for c in 0..layout.channels {
                if !line.is_empty() {
                    line.push(' ');
                }
                let v = ((image[layout.index(y, x, c)] - lo) / (hi - lo) * 255.0)
                    .clamp(0.0, 255.0)
                    .round_ties_even() as u8;
                line.push_str(&v.to_string());
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
