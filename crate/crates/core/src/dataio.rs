//! Dataset ingestion: IDX image files, CSV matrices, and synthetic
//! Gaussian generators, all producing immutable `DatasetHandle`s.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetHandle;
use crate::error::{Error, Result};
use crate::layout::ImageLayout;
use crate::rng::stream_rng;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::MalformedFile)?;
    Ok(u32::from_be_bytes(buf))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned())
}

/// Loads an IDX image file (big-endian, magic 0x00000803), mapping pixel
/// bytes onto `value_range` and recording the height x width x 1 layout and
/// the range as clamp bounds. A labels file (magic 0x00000801), when given,
/// is parsed and length-checked against the image count; attribution never
/// uses label values, so they are not retained.
pub fn load_idx(
    images_path: &Path,
    labels_path: Option<&Path>,
    value_range: (f64, f64),
) -> Result<DatasetHandle> {
    let mut r = BufReader::new(File::open(images_path)?);
    let magic = read_be_u32(&mut r)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic { found: magic, expected: IDX_IMAGES_MAGIC });
    }
    let n = read_be_u32(&mut r)? as usize;
    let h = read_be_u32(&mut r)? as usize;
    let w = read_be_u32(&mut r)? as usize;
    let len = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or(Error::MalformedFile)?;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes).map_err(|_| Error::MalformedFile)?;
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::MalformedFile);
    }
    if let Some(labels) = labels_path {
        let mut lr = BufReader::new(File::open(labels)?);
        let magic = read_be_u32(&mut lr)?;
        if magic != IDX_LABELS_MAGIC {
            return Err(Error::BadMagic { found: magic, expected: IDX_LABELS_MAGIC });
        }
        let ln = read_be_u32(&mut lr)? as usize;
        if ln != n {
            return Err(Error::DimensionMismatch { expected: n, got: ln });
        }
        let mut lbuf = vec![0u8; ln];
        lr.read_exact(&mut lbuf).map_err(|_| Error::MalformedFile)?;
        if lr.read(&mut [0u8; 1])? != 0 {
            return Err(Error::MalformedFile);
        }
    }
    let (lo, hi) = value_range;
    let data: Vec<f64> = bytes.iter().map(|&b| lo + f64::from(b) / 255.0 * (hi - lo)).collect();
    let layout = ImageLayout::new(h, w, 1, value_range)?;
    DatasetHandle::new(file_stem(images_path), data, h * w, Some(value_range))?
        .with_layout(layout)
}

/// Writes a dataset with a single-channel image layout back to an IDX image
/// file, mapping values from the layout's range onto bytes with
/// round-half-even. Loading the result reproduces byte-quantized data
/// exactly.
pub fn save_idx(path: &Path, dataset: &DatasetHandle) -> Result<()> {
    let layout = dataset
        .layout()
        .ok_or_else(|| Error::InvalidParameter("dataset has no image layout".into()))?;
    if layout.channels != 1 {
        return Err(Error::InvalidParameter(
            "IDX export supports single-channel layouts only".into(),
        ));
    }
    let (lo, hi) = layout.value_range;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    w.write_all(&(u32::try_from(dataset.n()).map_err(|_| Error::MalformedFile)?).to_be_bytes())?;
    w.write_all(&(layout.height as u32).to_be_bytes())?;
    w.write_all(&(layout.width as u32).to_be_bytes())?;
    for v in dataset.data() {
        let byte = ((v - lo) / (hi - lo) * 255.0).clamp(0.0, 255.0).round_ties_even() as u8;
        w.write_all(&[byte])?;
    }
    Ok(())
}

/// Loads a CSV matrix, one sample per row, plain `f64` literals with a `.`
/// decimal point. Rows must agree in length.
pub fn load_csv(path: &Path, clamp: Option<(f64, f64)>) -> Result<DatasetHandle> {
    let text = std::fs::read_to_string(path)?;
    let mut data = Vec::new();
    let mut d = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row_len = 0usize;
        for field in line.split(',') {
            let value: f64 = field.trim().parse().map_err(|e| Error::CsvParse {
                line: lineno + 1,
                msg: format!("{e}: {:?}", field.trim()),
            })?;
            data.push(value);
            row_len += 1;
        }
        match d {
            None => d = Some(row_len),
            Some(expect) if expect != row_len => {
                return Err(Error::CsvParse {
                    line: lineno + 1,
                    msg: format!("row has {row_len} values, expected {expect}"),
                });
            }
            _ => {}
        }
    }
    let d = d.ok_or(Error::EmptyDataset)?;
    DatasetHandle::new(file_stem(path), data, d, clamp)
}

/// `n` i.i.d. draws from an isotropic Gaussian around `center`, each draw
/// on its own RNG stream under `seed`. Clamp bounds, when given, clip the
/// draws and are recorded on the handle.
pub fn synth_gaussian(
    n: usize,
    center: &[f64],
    sigma: f64,
    clamp: Option<(f64, f64)>,
    seed: u64,
) -> Result<DatasetHandle> {
    synth_scaled_gaussian(n, center, sigma, (1.0, 1.0), clamp, seed)
}

/// Scale-mixture variant: sample `i` is `s_i * center + sigma * z_i` with
/// `s_i ~ U[scale.0, scale.1]`. The spread of scales stretches the dataset
/// along its center direction, which keeps the min and max key projections
/// apart (a plain tight cluster has them nearly equal).
pub fn synth_scaled_gaussian(
    n: usize,
    center: &[f64],
    sigma: f64,
    scale: (f64, f64),
    clamp: Option<(f64, f64)>,
    seed: u64,
) -> Result<DatasetHandle> {
    if n == 0 {
        return Err(Error::TooFewSamples { min: 1, got: 0 });
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma {sigma} must be non-negative")));
    }
    let (s_lo, s_hi) = scale;
    if !(s_lo.is_finite() && s_hi.is_finite() && s_lo <= s_hi) {
        return Err(Error::InvalidParameter(format!(
            "scale range ({s_lo}, {s_hi}) must be ordered and finite"
        )));
    }
    let d = center.len();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let mut rng = stream_rng(seed, i as u64);
        let s = if s_lo == s_hi { s_lo } else { s_lo + (s_hi - s_lo) * rng.random::<f64>() };
        for c in center {
            let mut v = s * c + sigma * rng.sample::<f64, _>(StandardNormal);
            if let Some((lo, hi)) = clamp {
                v = v.clamp(lo, hi);
            }
            data.push(v);
        }
    }
    DatasetHandle::new("synth-gaussian", data, d, clamp)
}

/// Declarative synthetic dataset, loadable from JSON so experiment inputs
/// can live next to their outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub center: Vec<f64>,
    pub sigma: f64,
    #[serde(default)]
    pub scale: Option<(f64, f64)>,
    #[serde(default)]
    pub clamp: Option<(f64, f64)>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub layout: Option<ImageLayout>,
    #[serde(default)]
    pub name: Option<String>,
}

pub fn load_synth_spec(path: &Path) -> Result<SynthSpec> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn synthesize(spec: &SynthSpec) -> Result<DatasetHandle> {
    let mut ds = synth_scaled_gaussian(
        spec.n,
        &spec.center,
        spec.sigma,
        spec.scale.unwrap_or((1.0, 1.0)),
        spec.clamp,
        spec.seed,
    )?;
    if let Some(layout) = spec.layout {
        if layout.len() != spec.center.len() {
            return Err(Error::LayoutMismatch { expected: layout.len(), got: spec.center.len() });
        }
        ds = ds.with_layout(layout)?;
    }
    if let Some(name) = &spec.name {
        ds = ds.with_name(name.clone());
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_idx_images(path: &Path, n: u32, h: u32, w: u32, pixels: &[u8]) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&n.to_be_bytes());
        bytes.extend_from_slice(&h.to_be_bytes());
        bytes.extend_from_slice(&w.to_be_bytes());
        bytes.extend_from_slice(pixels);
        std::fs::write(path, bytes).unwrap();
    }

    fn write_idx_labels(path: &Path, labels: &[u8]) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        bytes.extend_from_slice(labels);
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn idx_files_load_with_layout_and_range() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("train.idx");
        let pixels: Vec<u8> = (0..2 * 2 * 3).map(|i| (i * 23) as u8).collect();
        write_idx_images(&img, 3, 2, 2, &pixels);
        let ds = load_idx(&img, None, (-1.0, 1.0)).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.name(), "train");
        let layout = ds.layout().unwrap();
        assert_eq!((layout.height, layout.width, layout.channels), (2, 2, 1));
        assert_eq!(ds.clamp(), Some((-1.0, 1.0)));
        assert_eq!(ds.sample(0)[0], -1.0);
        assert_eq!(ds.sample(0)[1], -1.0 + 23.0 / 255.0 * 2.0);
    }

    #[test]
    fn idx_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("bad.idx");
        std::fs::write(&img, 0u32.to_be_bytes()).unwrap();
        assert!(matches!(
            load_idx(&img, None, (0.0, 1.0)),
            Err(Error::BadMagic { found: 0, .. })
        ));

        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[1, 2, 3]); // needs 8 pixel bytes
        std::fs::write(&img, &bytes).unwrap();
        assert!(matches!(load_idx(&img, None, (0.0, 1.0)), Err(Error::MalformedFile)));

        bytes.extend_from_slice(&[4, 5, 6, 7, 8, 9]); // 9 bytes: one too many
        std::fs::write(&img, &bytes).unwrap();
        assert!(matches!(load_idx(&img, None, (0.0, 1.0)), Err(Error::MalformedFile)));
    }

    #[test]
    fn idx_labels_are_length_checked() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lbl = dir.path().join("lbl.idx");
        write_idx_images(&img, 2, 1, 2, &[0, 64, 128, 255]);
        write_idx_labels(&lbl, &[7, 3]);
        assert!(load_idx(&img, Some(&lbl), (0.0, 1.0)).is_ok());
        write_idx_labels(&lbl, &[7, 3, 1]);
        assert!(matches!(
            load_idx(&img, Some(&lbl), (0.0, 1.0)),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
        write_idx_images(&lbl, 2, 1, 1, &[1, 2]);
        assert!(matches!(
            load_idx(&img, Some(&lbl), (0.0, 1.0)),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn idx_save_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("orig.idx");
        let pixels: Vec<u8> = (0..5 * 4).map(|i| (i * 13 % 256) as u8).collect();
        write_idx_images(&img, 5, 2, 2, &pixels);
        let ds = load_idx(&img, None, (-1.0, 1.0)).unwrap();
        let copy = dir.path().join("copy.idx");
        save_idx(&copy, &ds).unwrap();
        assert_eq!(std::fs::read(&img).unwrap(), std::fs::read(&copy).unwrap());
        let ds2 = load_idx(&copy, None, (-1.0, 1.0)).unwrap();
        assert_eq!(ds.data(), ds2.data());
        assert_eq!(ds.fingerprint(), ds2.fingerprint());
    }

    #[test]
    fn csv_parses_and_reports_line_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "1.0, 2.5\n-3.25,4e-2\n\n0.5,0.5\n").unwrap();
        let ds = load_csv(&path, None).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.sample(1), &[-3.25, 0.04]);
        assert_eq!(ds.name(), "m");

        std::fs::write(&path, "1.0,2.0\n3.0\n").unwrap();
        assert!(matches!(load_csv(&path, None), Err(Error::CsvParse { line: 2, .. })));
        std::fs::write(&path, "1.0,oops\n").unwrap();
        assert!(matches!(load_csv(&path, None), Err(Error::CsvParse { line: 1, .. })));
        std::fs::write(&path, "\n\n").unwrap();
        assert!(matches!(load_csv(&path, None), Err(Error::EmptyDataset)));
    }

    #[test]
    fn synth_zero_sigma_repeats_center() {
        let center = [0.25, -0.5, 0.75];
        let ds = synth_gaussian(10, &center, 0.0, None, 3).unwrap();
        for i in 0..10 {
            assert_eq!(ds.sample(i), &center);
        }
    }

    #[test]
    fn synth_mean_concentrates() {
        let d = 16;
        let center: Vec<f64> = (0..d).map(|j| (j as f64 - 8.0) / 4.0).collect();
        let n = 10_000;
        let ds = synth_gaussian(n, &center, 1.0, None, 11).unwrap();
        let mean = ds.mean();
        let band = 3.0 / (n as f64).sqrt();
        for j in 0..d {
            assert!(
                (mean[j] - center[j]).abs() < band,
                "component {j}: {} vs {}",
                mean[j],
                center[j]
            );
        }
    }

    #[test]
    fn synth_is_seed_deterministic() {
        let center = [1.0, -1.0];
        let a = synth_gaussian(64, &center, 0.5, None, 7).unwrap();
        let b = synth_gaussian(64, &center, 0.5, None, 7).unwrap();
        let c = synth_gaussian(64, &center, 0.5, None, 8).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn synth_clamp_clips_draws() {
        let ds = synth_gaussian(500, &[0.9, -0.9], 0.5, Some((-1.0, 1.0)), 13).unwrap();
        assert!(ds.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(ds.data().iter().any(|v| *v == 1.0 || *v == -1.0), "expected saturation");
    }

    #[test]
    fn scaled_draws_spread_along_center() {
        let center = [-2.0, 0.0];
        let ds = synth_scaled_gaussian(2000, &center, 0.0, (0.5, 1.0), None, 17).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..ds.n() {
            let s = ds.sample(i)[0] / center[0];
            lo = lo.min(s);
            hi = hi.max(s);
        }
        assert!(lo >= 0.5 && lo < 0.51, "scale low end {lo}");
        assert!(hi <= 1.0 && hi > 0.99, "scale high end {hi}");
    }

    #[test]
    fn synth_spec_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.json");
        let spec = SynthSpec {
            n: 20,
            center: vec![-1.0, -1.0, -1.0, -1.0],
            sigma: 0.1,
            scale: Some((0.6, 1.0)),
            clamp: Some((-3.0, 3.0)),
            seed: 5,
            layout: Some(ImageLayout::new(2, 2, 1, (-3.0, 3.0)).unwrap()),
            name: Some("four-pixel".into()),
        };
        std::fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
        let loaded = load_synth_spec(&path).unwrap();
        let ds = synthesize(&loaded).unwrap();
        assert_eq!(ds.name(), "four-pixel");
        assert_eq!(ds.n(), 20);
        assert!(ds.layout().is_some());
        assert_eq!(ds.fingerprint(), synthesize(&spec).unwrap().fingerprint());
    }
}
