use std::path::Path;

use anyhow::{bail, Context, Result};
use keymark::dataio;
use keymark::DatasetHandle;

/// Loads a dataset by extension: `.csv` numeric rows, `.json` a synthetic
/// generator description, anything else an IDX image file. `value_range`
/// maps IDX bytes (and clamps CSV data when given explicitly).
pub fn load_dataset(
    path: &Path,
    labels: Option<&Path>,
    value_range: Option<(f64, f64)>,
) -> Result<DatasetHandle> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let ds = match ext {
        "csv" => {
            if labels.is_some() {
                bail!("label files only apply to IDX datasets");
            }
            dataio::load_csv(path, value_range)?
        }
        "json" => {
            if labels.is_some() {
                bail!("label files only apply to IDX datasets");
            }
            if value_range.is_some() {
                bail!("synthetic datasets carry their own value range; drop --value-lo/--value-hi");
            }
            let spec = dataio::load_synth_spec(path)?;
            dataio::synthesize(&spec)?
        }
        _ => dataio::load_idx(path, labels, value_range.unwrap_or((-1.0, 1.0)))?,
    };
    Ok(ds)
}

pub fn check_fingerprint(registry_fp: u64, dataset: &DatasetHandle) -> Result<()> {
    if registry_fp != dataset.fingerprint() {
        bail!(
            "registry was built for dataset fingerprint {registry_fp}, \
             but '{}' has fingerprint {}",
            dataset.name(),
            dataset.fingerprint()
        );
    }
    Ok(())
}

pub fn value_range_flags(lo: Option<f64>, hi: Option<f64>) -> Result<Option<(f64, f64)>> {
    match (lo, hi) {
        (None, None) => Ok(None),
        (Some(lo), Some(hi)) => Ok(Some((lo, hi))),
        _ => bail!("--value-lo and --value-hi must be given together"),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
