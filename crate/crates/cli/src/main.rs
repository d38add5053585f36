//! Command-line front end: key issuance, shift calibration, evaluation
//! tables, capacity estimation, attribution, and the HTTP service.

use keymark_cli::{data, http};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use keymark::capacity::{estimate_capacity, CapacityOptions};
use keymark::keygen::{generate_key, KeygenConfig};
use keymark::metrics;
use keymark::postproc::{robust_evaluate, PostProcess, PostProcessSpec};
use keymark::registry::{KeyRegistry, Verdict, VectorEncoding};
use keymark::rng::derive_seed;
use keymark::theory::min_gamma;
use keymark::watermark::{gamma_search, robust_gamma_search, GammaSearchConfig};
use keymark::{DatasetHandle, Key, NoiseModel, WatermarkModel};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "keymark", version, about = "Key-based attribution of generative models")]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate sequential compliant keys for a dataset and write a registry.
    Keygen(KeygenArgs),
    /// Calibrate each registered key's shift magnitude against a dataset.
    GammaSearch(GammaSearchArgs),
    /// Evaluate registered models: distinguishability, attribution rate,
    /// mean shift norm, and the shift-vs-bound scatter data.
    Eval(EvalArgs),
    /// Before/after metrics under post-processing attacks.
    RobustEval(RobustEvalArgs),
    /// Estimate how many mutually admissible keys a dataset supports.
    Capacity(CapacityArgs),
    /// Attribute a file of query vectors against a registry.
    Attribute(AttributeArgs),
    /// Serve the attribution service over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct DatasetArgs {
    /// Dataset path: .csv (numeric rows), .json (synthetic description),
    /// anything else is read as IDX images.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// IDX labels file to validate against the image count.
    #[arg(long, value_name = "PATH")]
    labels: Option<PathBuf>,
    /// Lower pixel value the IDX byte range maps to (default -1).
    #[arg(long)]
    value_lo: Option<f64>,
    /// Upper pixel value the IDX byte range maps to (default 1).
    #[arg(long)]
    value_hi: Option<f64>,
}

impl DatasetArgs {
    fn load(&self, file: &FileConfig) -> Result<DatasetHandle> {
        let lo = self.value_lo.or(file.value_lo);
        let hi = self.value_hi.or(file.value_hi);
        data::load_dataset(&self.data, self.labels.as_deref(), data::value_range_flags(lo, hi)?)
    }
}

#[derive(Args)]
struct KeygenArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Number of keys to issue.
    #[arg(long)]
    keys: Option<usize>,
    /// Per-key failure budget recorded in the registry.
    #[arg(long)]
    delta: Option<f64>,
    /// Weight of the penalty that keeps new keys from leaning towards
    /// existing ones.
    #[arg(long)]
    orthogonality_weight: Option<f64>,
    /// Creation time (seconds) stamped on issued keys; 0 means unset so
    /// reruns stay byte-identical.
    #[arg(long)]
    timestamp: Option<u64>,
    /// Vector encoding in the registry file.
    #[arg(long, value_enum)]
    encoding: Option<EncodingArg>,
    /// Output registry path.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct GammaSearchArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[arg(long, value_name = "PATH")]
    registry: PathBuf,
    /// Isotropic model-noise standard deviation used for sampling and
    /// recorded per entry.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Search failure budget (target distinguishability 1 - delta).
    #[arg(long)]
    delta: Option<f64>,
    /// Geometric growth factor per failed round.
    #[arg(long)]
    alpha: Option<f64>,
    /// Monte-Carlo draws per round.
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    max_rounds: Option<u32>,
    /// Calibrate against outputs attacked by this post-process (and clean
    /// outputs) instead of clean outputs alone.
    #[arg(long, value_enum)]
    attack: Option<AttackArg>,
    /// Fixed JPEG quality for --attack jpeg.
    #[arg(long)]
    quality: Option<i64>,
    #[arg(long, value_enum)]
    encoding: Option<EncodingArg>,
    /// Updated registry path (defaults to rewriting the input).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[arg(long, value_name = "PATH")]
    registry: PathBuf,
    /// Monte-Carlo draws per estimate.
    #[arg(long)]
    samples: Option<usize>,
    /// Per-model metrics table (columns model_id, D, A_contribution,
    /// delta_x_norm).
    #[arg(long, value_name = "PATH")]
    metrics_out: PathBuf,
    /// Scatter data of each model's shift against its sufficient bound
    /// (columns model_id, gamma, bound); points on or above the diagonal
    /// have certified distinguishability.
    #[arg(long, value_name = "PATH")]
    bound_out: Option<PathBuf>,
}

#[derive(Args)]
struct RobustEvalArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[arg(long, value_name = "PATH")]
    registry: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
    /// Comma-separated attacks to evaluate.
    #[arg(long, value_delimiter = ',', default_values = ["blur", "crop", "noise", "jpeg", "combination"])]
    attacks: Vec<AttackArg>,
    /// Fixed JPEG quality for the jpeg attack (default 80).
    #[arg(long)]
    quality: Option<i64>,
    /// Output table (one row per attack, before/after columns).
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct CapacityArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    max_keys: Option<usize>,
    /// Keygen attempts per slot.
    #[arg(long)]
    restarts: Option<u32>,
    /// Isotropic noise proxy standing in for every model's noise.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Reject candidates whose largest dataset projection exceeds this.
    #[arg(long)]
    d_max_ceiling: Option<f64>,
    /// Report path (JSON); stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttributeArgs {
    #[arg(long, value_name = "PATH")]
    registry: PathBuf,
    /// CSV file of query vectors, one per row.
    #[arg(long, value_name = "PATH")]
    queries: PathBuf,
    /// Verdict table (columns index, verdict, model_id).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, value_name = "PATH")]
    registry: PathBuf,
    /// Bind address; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:8787")]
    bind: String,
    /// Include key vectors in GET /registry responses.
    #[arg(long)]
    expose_keys: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EncodingArg {
    Decimal,
    Base64,
}

impl From<EncodingArg> for VectorEncoding {
    fn from(e: EncodingArg) -> Self {
        match e {
            EncodingArg::Decimal => VectorEncoding::Decimal,
            EncodingArg::Base64 => VectorEncoding::Base64,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AttackArg {
    Identity,
    Blur,
    Crop,
    Noise,
    Jpeg,
    Combination,
}

impl AttackArg {
    fn name(self) -> &'static str {
        match self {
            AttackArg::Identity => "identity",
            AttackArg::Blur => "blur",
            AttackArg::Crop => "crop",
            AttackArg::Noise => "noise",
            AttackArg::Jpeg => "jpeg",
            AttackArg::Combination => "combination",
        }
    }

    /// Randomized-parameter spec; per-image draws come from the seed.
    fn spec(self, quality: Option<i64>, seed: u64) -> Result<PostProcessSpec> {
        let process = match self {
            AttackArg::Identity => PostProcess::Identity,
            AttackArg::Blur => PostProcess::Blur { sigma: None },
            AttackArg::Crop => PostProcess::Crop { ratio: None },
            AttackArg::Noise => PostProcess::Noise { sigma: None },
            AttackArg::Jpeg => PostProcess::Jpeg { quality },
            AttackArg::Combination => PostProcess::Combination,
        };
        Ok(PostProcessSpec::new(process, seed)?)
    }
}

/// Optional values read from --config; flags win over these, these win over
/// built-in defaults.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    delta: Option<f64>,
    alpha: Option<f64>,
    mc_samples: Option<usize>,
    max_rounds: Option<u32>,
    samples: Option<usize>,
    keys: Option<usize>,
    noise_sigma: Option<f64>,
    orthogonality_weight: Option<f64>,
    value_lo: Option<f64>,
    value_hi: Option<f64>,
    timestamp: Option<u64>,
    encoding: Option<String>,
    max_keys: Option<usize>,
    restarts: Option<u32>,
    quality: Option<i64>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    fn encoding(&self) -> Result<Option<EncodingArg>> {
        match self.encoding.as_deref() {
            None => Ok(None),
            Some("decimal") => Ok(Some(EncodingArg::Decimal)),
            Some("base64") => Ok(Some(EncodingArg::Base64)),
            Some(other) => bail!("unknown encoding '{other}' in config"),
        }
    }
}

fn main() -> std::process::ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return std::process::ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    match cli.command {
        Command::Keygen(args) => run_keygen(args, &file, seed),
        Command::GammaSearch(args) => run_gamma_search(args, &file, seed),
        Command::Eval(args) => run_eval(args, &file, seed),
        Command::RobustEval(args) => run_robust_eval(args, &file, seed),
        Command::Capacity(args) => run_capacity(args, &file, seed),
        Command::Attribute(args) => run_attribute(args),
        Command::Serve(args) => run_serve(args),
    }
}

fn run_keygen(args: KeygenArgs, file: &FileConfig, seed: u64) -> Result<()> {
    let ds = args.dataset.load(file)?;
    let n_keys = args.keys.or(file.keys).unwrap_or(1);
    let delta = args.delta.or(file.delta).unwrap_or(0.01);
    let timestamp = args.timestamp.or(file.timestamp).unwrap_or(0);
    let encoding = args.encoding.or(file.encoding()?).unwrap_or(EncodingArg::Decimal);
    let mut cfg = KeygenConfig::default();
    if let Some(w) = args.orthogonality_weight.or(file.orthogonality_weight) {
        cfg.orthogonality_weight = w;
    }

    let mut registry = KeyRegistry::for_dataset(&ds, delta)?;
    let mut issued: Vec<Key> = Vec::with_capacity(n_keys);
    for k in 0..n_keys {
        let cfg_k = cfg.clone().with_seed(derive_seed(seed, k as u64));
        let key = generate_key(&ds, &issued, &cfg_k)
            .with_context(|| format!("generating key {}", k + 1))?;
        registry.append(key.clone().with_created_at(timestamp), None, None)?;
        issued.push(key);
    }
    registry.save(&args.out, encoding.into())?;
    println!("issued {} keys for '{}' into {}", n_keys, ds.name(), args.out.display());
    Ok(())
}

/// Rebuilds the registry with one searched gamma per active entry; revoked
/// entries are copied through untouched.
fn run_gamma_search(args: GammaSearchArgs, file: &FileConfig, seed: u64) -> Result<()> {
    let ds = Arc::new(args.dataset.load(file)?);
    let registry = KeyRegistry::load(&args.registry)?;
    data::check_fingerprint(registry.dataset_fingerprint(), &ds)?;
    let noise_sigma = args.noise_sigma.or(file.noise_sigma).unwrap_or(0.0);
    let noise = Arc::new(noise_model(ds.dim(), noise_sigma)?);
    let encoding = args.encoding.or(file.encoding()?).unwrap_or(EncodingArg::Decimal);
    let cfg = GammaSearchConfig {
        delta: args.delta.or(file.delta).unwrap_or(0.01),
        alpha: args.alpha.or(file.alpha).unwrap_or(1.1),
        mc_samples: args.mc_samples.or(file.mc_samples).unwrap_or(5000),
        max_rounds: args.max_rounds.or(file.max_rounds).unwrap_or(64),
        seed: 0,
    };
    let attack = match args.attack {
        None => None,
        Some(a) => Some(a.spec(args.quality.or(file.quality), derive_seed(seed, u64::MAX))?),
    };

    let mut updated = KeyRegistry::new(registry.dim(), registry.dataset_fingerprint(), registry.delta())?;
    let mut revoked_ids = Vec::new();
    for entry in registry.entries() {
        let key = entry.key().clone();
        if entry.revoked() {
            let id = updated.append(key, entry.gamma(), entry.noise_sigma())?;
            revoked_ids.push(id);
            continue;
        }
        let cfg_k = cfg.clone().with_seed(derive_seed(seed, u64::from(key.id())));
        let outcome = match &attack {
            None => gamma_search(&key, &ds, &noise, &cfg_k),
            Some(spec) => robust_gamma_search(&key, &ds, &noise, spec, &cfg_k),
        }
        .with_context(|| format!("searching gamma for key {}", key.id()))?;
        println!(
            "key {}: gamma {:.6} after {} rounds (D = {:.4})",
            key.id(),
            outcome.gamma,
            outcome.rounds,
            outcome.distinguishability
        );
        updated.append(key, Some(outcome.gamma), Some(noise_sigma))?;
    }
    for id in revoked_ids {
        updated.revoke(id)?;
    }
    let out = args.out.as_ref().unwrap_or(&args.registry);
    updated.save(out, encoding.into())?;
    println!("updated registry written to {}", out.display());
    Ok(())
}

fn run_eval(args: EvalArgs, file: &FileConfig, seed: u64) -> Result<()> {
    let ds = Arc::new(args.dataset.load(file)?);
    let registry = KeyRegistry::load(&args.registry)?;
    data::check_fingerprint(registry.dataset_fingerprint(), &ds)?;
    let n = args.samples.or(file.samples).unwrap_or(5000);
    let (models, keys) = build_models(&registry, &ds)?;

    let rates = metrics::attributability_per_model(&models, &keys, n, derive_seed(seed, 0))?;
    let mut table = String::from("model_id,D,A_contribution,delta_x_norm\n");
    let mut bounds = String::from("model_id,gamma,bound\n");
    for (i, model) in models.iter().enumerate() {
        let id = keys[i].id();
        let d =
            metrics::distinguishability(model, &ds, n, derive_seed(seed, 1 + 2 * i as u64))?;
        let pnorm = metrics::perturbation_norm(model, n, derive_seed(seed, 2 + 2 * i as u64))?;
        writeln!(table, "{id},{d:.6},{:.6},{pnorm:.6}", rates[i])?;
        let bound = min_gamma(&keys[i], &ds, model.noise(), registry.delta())?;
        writeln!(bounds, "{id},{:.6},{bound:.6}", model.gamma())?;
    }
    data::write_text(&args.metrics_out, &table)?;
    println!("metrics for {} models written to {}", models.len(), args.metrics_out.display());
    if let Some(path) = &args.bound_out {
        data::write_text(path, &bounds)?;
        println!("shift-vs-bound data written to {}", path.display());
    }
    Ok(())
}

fn run_robust_eval(args: RobustEvalArgs, file: &FileConfig, seed: u64) -> Result<()> {
    let ds = Arc::new(args.dataset.load(file)?);
    if ds.layout().is_none() {
        bail!("robust evaluation needs an image dataset (IDX, or a synthetic description with a layout)");
    }
    let registry = KeyRegistry::load(&args.registry)?;
    data::check_fingerprint(registry.dataset_fingerprint(), &ds)?;
    let n = args.samples.or(file.samples).unwrap_or(5000);
    let (models, keys) = build_models(&registry, &ds)?;

    let mut table = String::from(
        "attack,D_before,A_before,delta_x_norm_before,D_after,A_after,delta_x_norm_after\n",
    );
    for (i, attack) in args.attacks.iter().enumerate() {
        let spec = attack.spec(args.quality.or(file.quality), derive_seed(seed, 1000 + i as u64))?;
        let (before, after) = robust_evaluate(&models, &keys, &spec, n, seed)?;
        writeln!(
            table,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            attack.name(),
            before.distinguishability,
            before.attributability.unwrap_or(f64::NAN),
            before.perturbation_norm,
            after.distinguishability,
            after.attributability.unwrap_or(f64::NAN),
            after.perturbation_norm,
        )?;
        println!(
            "{}: D {:.4} -> {:.4}, A {:.4} -> {:.4}",
            attack.name(),
            before.distinguishability,
            after.distinguishability,
            before.attributability.unwrap_or(f64::NAN),
            after.attributability.unwrap_or(f64::NAN),
        );
    }
    data::write_text(&args.out, &table)?;
    println!("attack grid written to {}", args.out.display());
    Ok(())
}

fn run_capacity(args: CapacityArgs, file: &FileConfig, seed: u64) -> Result<()> {
    let ds = args.dataset.load(file)?;
    let delta = args.delta.or(file.delta).unwrap_or(0.01);
    let max_keys = args.max_keys.or(file.max_keys).unwrap_or(8);
    let noise_sigma = args.noise_sigma.or(file.noise_sigma).unwrap_or(0.0);
    let noise = noise_model(ds.dim(), noise_sigma)?;
    let options = CapacityOptions {
        restarts: args.restarts.or(file.restarts).unwrap_or(5),
        d_max_ceiling: args.d_max_ceiling,
    };
    let cfg = KeygenConfig::default().with_seed(seed);
    let report = estimate_capacity(&ds, &noise, delta, max_keys, &cfg, &options)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => {
            data::write_text(path, &json)?;
            println!(
                "capacity {} (of at most {max_keys}) written to {}",
                report.count,
                path.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn run_attribute(args: AttributeArgs) -> Result<()> {
    let registry = KeyRegistry::load(&args.registry)?;
    let queries = keymark::dataio::load_csv(&args.queries, None)?;
    let mut table = String::from("index,verdict,model_id\n");
    let mut counts = [0usize; 3];
    for (i, row) in queries.rows().enumerate() {
        let outcome = registry.attribute(row)?;
        let (verdict, id) = match outcome.verdict {
            Verdict::Model(id) => ("model", Some(id)),
            Verdict::Authentic => ("authentic", None),
            Verdict::Ambiguous => ("ambiguous", None),
        };
        counts[match outcome.verdict {
            Verdict::Model(_) => 0,
            Verdict::Authentic => 1,
            Verdict::Ambiguous => 2,
        }] += 1;
        writeln!(table, "{i},{verdict},{}", id.map_or(String::new(), |v| v.to_string()))?;
    }
    match &args.out {
        Some(path) => data::write_text(path, &table)?,
        None => print!("{table}"),
    }
    println!(
        "{} queries: {} attributed, {} authentic, {} ambiguous",
        queries.n(),
        counts[0],
        counts[1],
        counts[2]
    );
    Ok(())
}

fn run_serve(args: ServeArgs) -> Result<()> {
    let registry = KeyRegistry::load(&args.registry)?;
    let state = Arc::new(http::AppState { registry, expose_keys: args.expose_keys });
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.bind)
            .await
            .with_context(|| format!("binding {}", args.bind))?;
        println!("serving on http://{}", listener.local_addr()?);
        axum::serve(listener, http::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn noise_model(dim: usize, sigma: f64) -> Result<NoiseModel> {
    if sigma == 0.0 {
        Ok(NoiseModel::zero(dim))
    } else {
        Ok(NoiseModel::isotropic(dim, sigma)?)
    }
}

/// Instantiates one model per active registry entry; every entry must carry
/// a searched gamma.
fn build_models(
    registry: &KeyRegistry,
    ds: &Arc<DatasetHandle>,
) -> Result<(Vec<WatermarkModel>, Vec<Key>)> {
    let clamp = ds.clamp().is_some();
    let mut models = Vec::new();
    let mut keys = Vec::new();
    for entry in registry.entries() {
        if entry.revoked() {
            continue;
        }
        let gamma = entry.gamma().ok_or_else(|| {
            anyhow!("key {} has no calibrated gamma; run gamma-search first", entry.key().id())
        })?;
        let noise = Arc::new(noise_model(ds.dim(), entry.noise_sigma().unwrap_or(0.0))?);
        models.push(WatermarkModel::new(ds.clone(), entry.key().clone(), gamma, noise, clamp)?);
        keys.push(entry.key().clone());
    }
    if models.is_empty() {
        bail!("registry has no active entries");
    }
    Ok((models, keys))
}
