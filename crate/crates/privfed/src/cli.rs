//! The workflows behind the `privfed` binary: dataset generation, local and
//! federated training, the encrypted inference service and client, the
//! gradient-inversion attack, the latency benchmark, model comparison, and
//! securely pooled dataset statistics.
//!
//! Every command resolves its settings from an optional flat config file
//! plus flags, runs deterministically under one root seed, and writes a
//! `manifest.json` into the output directory recording what ran and which
//! artifacts it produced. Artifacts are byte-identical across repeated runs
//! with the same seed and inputs; the manifest timestamp is the one
//! exception. Exit codes: 0 success, 2 for usage or data problems, 1 for
//! everything else.

use crate::attack::{
    capture_fed_plain, capture_fed_secure, capture_local, evaluate_reconstruction,
    feature_distance, invert, pooled_moments_of, AttackConfig, AttackReport, LabelMode,
    ReconQuality, Scenario,
};
use crate::config::ConfigMap;
use crate::error::{Error, Result};
use crate::federation::{
    hyperparameter_search, pixel_sums, pooled_moments_local, run_federation, FederationConfig,
    SearchOutcome, SearchSpace,
};
use crate::fixed::DEFAULT_FRAC_BITS;
use crate::inference::service::{run_client, serve, ClientConfig};
use crate::nn::data::{
    load_dataset, read_idx_images, read_idx_labels, synthetic_dataset, write_idx_images,
    write_idx_labels, Dataset, SYNTHETIC_CLASSES,
};
use crate::nn::metrics::{cohens_kappa, evaluate, mcnemar_test, ConfusionMatrix, MetricsReport};
use crate::nn::train::{train_local, TrainConfig, TrainReport};
use crate::nn::{read_pmd1, write_pmd1, Architecture, ModelParams};
use crate::seed;
use crate::shares::{secure_moments, Moments};
use crate::tensor::PlainTensor;
use crate::transport::bench::{benchmark_inference, BaselineModel, InferenceBenchmark};
use crate::transport::sim::{run_sim, LatencyModel, SimParty};
use crate::transport::Net;
use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Dataset root used when `--data-dir` is not passed.
pub const DATA_DIR_ENV: &str = "PRIMIA_DATA_DIR";

/// Every config key any command understands. One file can drive a whole
/// pipeline (gen-data, training, attack, benchmark); keys outside this list
/// are rejected up front.
pub const ALL_KEYS: &[&str] = &[
    "arch",
    "hidden",
    "side",
    "nodes",
    "per_node",
    "test",
    "seed",
    "rounds",
    "epochs",
    "lr",
    "batch_size",
    "patience",
    "secure",
    "frac_bits",
    "latency_ms",
    "val_fraction",
    "search_lrs",
    "search_epochs",
    "search_batch_sizes",
    "search_rounds",
    "search_budget",
    "iterations",
    "step_size",
    "lambda_tv",
    "restarts",
    "label_mode",
    "baseline_rounds_per_comparison",
    "baseline_bytes_factor",
];

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum LogLevel {
    Quiet,
    Info,
    Debug,
}

#[derive(Clone, Copy)]
struct Log {
    level: LogLevel,
}

impl Log {
    fn info(&self, msg: impl AsRef<str>) {
        if self.level >= LogLevel::Info {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn debug(&self, msg: impl AsRef<str>) {
        if self.level >= LogLevel::Debug {
            eprintln!("{}", msg.as_ref());
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "privfed",
    version,
    about = "Privacy-preserving federated learning: train, serve encrypted inference, attack, benchmark"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root seed for all randomness; overrides the config file's `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for checkpoints, reports, and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Info)]
    pub log_level: LogLevel,

    /// Dataset root directory; falls back to $PRIMIA_DATA_DIR.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic per-node IDX datasets under the data root.
    GenData,

    /// Train one model on the pooled data of every node.
    TrainLocal,

    /// Federated training across the node datasets.
    TrainFederated {
        /// Aggregate with additive secret sharing instead of plaintext.
        #[arg(long)]
        secure: bool,
    },

    /// Serve encrypted two-party inference for a trained checkpoint.
    InferServe {
        #[arg(long)]
        model: PathBuf,
        /// TCP port on 127.0.0.1; 0 picks an ephemeral port (printed).
        #[arg(long)]
        port: u16,
        /// Stop after this many sessions (serves forever when omitted).
        #[arg(long)]
        sessions: Option<usize>,
    },

    /// Classify IDX images against a running encrypted-inference server.
    InferClient {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        port: u16,
        /// IDX image file to classify.
        #[arg(long)]
        images: PathBuf,
        /// Prediction JSON path [default: <out-dir>/predictions.json].
        #[arg(long)]
        out: Option<PathBuf>,
        /// IDX label file; when given, predictions are also scored.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Request full probability vectors, not just labels.
        #[arg(long)]
        probabilities: bool,
        /// JSON `{mean, std}` sidecar applied to the images first.
        #[arg(long)]
        norm: Option<PathBuf>,
    },

    /// Reconstruct a victim's training image from a captured model update.
    Attack {
        #[arg(long, value_enum)]
        scenario: ScenarioArg,
        /// Report path [default: <out-dir>/report.json].
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Compare encrypted-inference latency against the round-count baseline.
    Benchmark {
        /// One-way link latencies to sweep, in milliseconds.
        #[arg(long = "latency-ms", value_delimiter = ',', default_values_t = vec![10, 100])]
        latency_ms: Vec<u64>,
        /// Restrict the headline series to one protocol (both always run).
        #[arg(long, value_enum)]
        protocol: Option<ProtocolArg>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Report path [default: <out-dir>/bench.json].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Benchmark a trained checkpoint instead of a fresh seeded model.
        #[arg(long)]
        model: Option<PathBuf>,
    },

    /// Pairwise agreement statistics between saved prediction files.
    Compare {
        /// Prediction JSON produced by infer-client; pass at least twice.
        #[arg(long)]
        preds: Vec<PathBuf>,
        /// IDX label file with the ground truth.
        #[arg(long)]
        truth: PathBuf,
        /// Report path [default: <out-dir>/compare.json].
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Pool per-node dataset statistics with secure summation.
    Stats {
        /// Report path [default: <out-dir>/stats.json].
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioArg {
    Local,
    FedPlain,
    FedSecure,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Scenario {
        match s {
            ScenarioArg::Local => Scenario::Local,
            ScenarioArg::FedPlain => Scenario::FedPlain,
            ScenarioArg::FedSecure => Scenario::FedSecure,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtocolArg {
    Fss,
    Baseline,
}

/// What one invocation ran and produced. Exactly one is written per run;
/// every artifact path exists once the run has succeeded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Fully resolved settings (config file, defaults, and flags merged).
    pub settings: BTreeMap<String, String>,
    /// Artifact name to path.
    pub artifacts: BTreeMap<String, String>,
    pub timestamp_unix: u64,
}

/// Shared context for one command run.
struct Ctx {
    cfg: ConfigMap,
    seed: u64,
    out_dir: PathBuf,
    data_dir: Option<PathBuf>,
    log: Log,
}

impl Ctx {
    fn data_root(&self) -> Result<PathBuf> {
        if let Some(d) = &self.data_dir {
            return Ok(d.clone());
        }
        std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
            Error::Usage(format!("no dataset root: pass --data-dir or set ${DATA_DIR_ENV}"))
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Write the run manifest and hand it back.
    fn finish(
        &self,
        command: &str,
        settings: BTreeMap<String, String>,
        artifacts: BTreeMap<String, String>,
    ) -> Result<RunManifest> {
        let timestamp_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            settings,
            artifacts,
            timestamp_unix,
        };
        write_json(&self.out("manifest.json"), &manifest)?;
        Ok(manifest)
    }
}

/// Reads config keys with per-command defaults while recording every
/// resolved value, so the manifest echoes exactly what the run used.
struct Resolve<'a> {
    cfg: &'a ConfigMap,
    echo: BTreeMap<String, String>,
}

impl<'a> Resolve<'a> {
    fn new(cfg: &'a ConfigMap) -> Self {
        Resolve { cfg, echo: BTreeMap::new() }
    }

    /// Record a flag-supplied setting.
    fn note(&mut self, key: &str, value: impl ToString) {
        self.echo.insert(key.to_string(), value.to_string());
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        let v = self.cfg.usize_or(key, default)?;
        self.note(key, v);
        Ok(v)
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64> {
        let v = self.cfg.u64_or(key, default)?;
        self.note(key, v);
        Ok(v)
    }

    fn u8(&mut self, key: &str, default: u8) -> Result<u8> {
        let v = self.cfg.u8_or(key, default)?;
        self.note(key, v);
        Ok(v)
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        let v = self.cfg.f64_or(key, default)?;
        self.note(key, v);
        Ok(v)
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        let v = self.cfg.bool_or(key, default)?;
        self.note(key, v);
        Ok(v)
    }

    fn usize_list(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        let v = self.cfg.usize_list_or(key, default)?;
        self.note(key, v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        Ok(v)
    }

    fn f64_list(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        let v = self.cfg.f64_list_or(key, default)?;
        self.note(key, v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        Ok(v)
    }

    fn patience(&mut self) -> Result<Option<usize>> {
        let v = self.cfg.usize_or_none("patience")?;
        self.note("patience", v.map_or("none".to_string(), |p| p.to_string()));
        Ok(v)
    }

    /// A string key restricted to `allowed` values.
    fn choice(&mut self, key: &str, default: &str, allowed: &[&str]) -> Result<String> {
        let v = self.cfg.str_or(key, default);
        if !allowed.contains(&v.as_str()) {
            return Err(Error::Usage(format!(
                "config key '{key}': expected one of {}, got '{v}'",
                allowed.join("/")
            )));
        }
        self.note(key, &v);
        Ok(v)
    }
}

/// `{mean, std, count}` normalization sidecar shared between training
/// output and the inference client.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormSidecar {
    pub mean: f64,
    pub std: f64,
    pub count: f64,
}

impl From<Moments> for NormSidecar {
    fn from(m: Moments) -> Self {
        NormSidecar { mean: m.mean, std: m.std, count: m.count }
    }
}

/// `dataset.json` at the data root: the layout contract for node data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: usize,
    pub side: usize,
    pub nodes: usize,
}

/// A dataset root directory: `dataset.json`, one `node<k>/` directory per
/// node with `train-images.idx` + `train-labels.idx`, and an optional
/// shared `test-images.idx` + `test-labels.idx`.
pub struct DataRoot {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

fn load_idx_pair(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    for p in [images, labels] {
        if !p.exists() {
            return Err(Error::Data(format!(
                "missing dataset file {}; run `privfed gen-data` or point --data-dir at a dataset",
                p.display()
            )));
        }
    }
    load_dataset(images, labels, classes)
        .map_err(|e| Error::Data(format!("{}: {e}", images.display())))
}

impl DataRoot {
    pub fn open(dir: &Path) -> Result<DataRoot> {
        let path = dir.join("dataset.json");
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::Data(format!(
                "no dataset manifest at {}: {e}; run `privfed gen-data` first",
                path.display()
            ))
        })?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if manifest.classes < 2 || manifest.side < 4 || manifest.nodes == 0 {
            return Err(Error::Data(format!(
                "{}: needs classes >= 2, side >= 4, nodes >= 1",
                path.display()
            )));
        }
        Ok(DataRoot { dir: dir.to_path_buf(), manifest })
    }

    pub fn node(&self, k: usize) -> Result<Dataset> {
        let d = self.dir.join(format!("node{k}"));
        load_idx_pair(&d.join("train-images.idx"), &d.join("train-labels.idx"), self.manifest.classes)
    }

    pub fn nodes(&self) -> Result<Vec<Dataset>> {
        (0..self.manifest.nodes).map(|k| self.node(k)).collect()
    }

    /// All node training data concatenated, in node order.
    pub fn pooled(&self) -> Result<Dataset> {
        let nodes = self.nodes()?;
        let side = self.manifest.side;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for n in &nodes {
            data.extend_from_slice(&n.images.data);
            labels.extend_from_slice(&n.labels);
        }
        let images = PlainTensor::from_vec(&[labels.len(), 1, side, side], data)
            .map_err(|e| Error::Data(format!("node datasets disagree on image size: {e}")))?;
        Dataset::new(images, labels, self.manifest.classes)
    }

    /// The shared held-out test set, when present.
    pub fn test(&self) -> Result<Option<Dataset>> {
        let images = self.dir.join("test-images.idx");
        let labels = self.dir.join("test-labels.idx");
        if !images.exists() || !labels.exists() {
            return Ok(None);
        }
        Ok(Some(load_idx_pair(&images, &labels, self.manifest.classes)?))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Format(format!("serializing {}: {e}", path.display())))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
}

/// Entry point behind `main`: dispatches one parsed invocation.
pub fn run(cli: Cli) -> Result<RunManifest> {
    let Cli { command, config, seed, out_dir, log_level, data_dir } = cli;
    std::fs::create_dir_all(&out_dir)?;
    let cfg = match &config {
        Some(p) => ConfigMap::load(p)?,
        None => ConfigMap::empty(),
    };
    cfg.reject_unknown(ALL_KEYS)?;
    let seed = match seed {
        Some(s) => s,
        None => cfg.u64_or("seed", 0)?,
    };
    let ctx = Ctx { cfg, seed, out_dir, data_dir, log: Log { level: log_level } };
    match command {
        Command::GenData => gen_data_cmd(&ctx),
        Command::TrainLocal => train_local_cmd(&ctx),
        Command::TrainFederated { secure } => train_federated_cmd(&ctx, secure),
        Command::InferServe { model, port, sessions } => {
            infer_serve_cmd(&ctx, &model, port, sessions)
        }
        Command::InferClient { host, port, images, out, labels, probabilities, norm } => {
            infer_client_cmd(&ctx, &host, port, &images, out, labels, probabilities, norm)
        }
        Command::Attack { scenario, out } => attack_cmd(&ctx, scenario.into(), out),
        Command::Benchmark { latency_ms, protocol, repeats, out, model } => {
            benchmark_cmd(&ctx, &latency_ms, protocol, repeats, out, model)
        }
        Command::Compare { preds, truth, out } => compare_cmd(&ctx, &preds, &truth, out),
        Command::Stats { out } => stats_cmd(&ctx, out),
    }
}

// ---------------------------------------------------------------------------
// gen-data

fn gen_data_cmd(ctx: &Ctx) -> Result<RunManifest> {
    let mut r = Resolve::new(&ctx.cfg);
    let nodes = r.usize("nodes", 3)?;
    let per_node = r.usize("per_node", 200)?;
    let test_n = r.usize("test", 200)?;
    let side = r.usize("side", 16)?;
    r.note("seed", ctx.seed);
    if nodes == 0 {
        return Err(Error::Usage("gen-data needs nodes >= 1".into()));
    }
    if side < 4 {
        return Err(Error::Usage(format!("side {side} too small; the patterns need >= 4")));
    }

    let root = ctx.data_root()?;
    std::fs::create_dir_all(&root)?;
    for k in 0..nodes {
        let ds = synthetic_dataset(ctx.seed, &format!("data.node{k}"), per_node, side)?;
        let dir = root.join(format!("node{k}"));
        std::fs::create_dir_all(&dir)?;
        write_idx_images(&dir.join("train-images.idx"), &ds.images)?;
        write_idx_labels(&dir.join("train-labels.idx"), &ds.labels)?;
    }
    if test_n > 0 {
        let test = synthetic_dataset(ctx.seed, "data.test", test_n, side)?;
        write_idx_images(&root.join("test-images.idx"), &test.images)?;
        write_idx_labels(&root.join("test-labels.idx"), &test.labels)?;
    }
    let manifest = DatasetManifest { classes: SYNTHETIC_CLASSES, side, nodes };
    write_json(&root.join("dataset.json"), &manifest)?;

    ctx.log.info(format!(
        "wrote {nodes} node(s) x {per_node} images ({side}x{side}) and {test_n} test images to {}",
        root.display()
    ));
    let mut artifacts = BTreeMap::new();
    artifacts.insert("dataset_dir".into(), root.display().to_string());
    ctx.finish("gen-data", r.echo, artifacts)
}

// ---------------------------------------------------------------------------
// train-local

fn resolve_arch(r: &mut Resolve, side: usize, classes: usize) -> Result<Architecture> {
    let kind = r.choice("arch", "cnn", &["cnn", "mlp"])?;
    Ok(if kind == "mlp" {
        let hidden = r.usize_list("hidden", &[32])?;
        Architecture::mlp(side * side, hidden, classes)
    } else {
        Architecture::small_cnn(side, side, classes)
    })
}

/// Test-set evaluation with the training-time normalization.
fn eval_test(
    root: &DataRoot,
    params: &ModelParams,
    moments: &Moments,
) -> Result<Option<MetricsReport>> {
    match root.test()? {
        Some(t) if !t.is_empty() => {
            let batch = t.normalized(moments.mean, moments.std).to_batch_for(&params.arch)?;
            Ok(Some(evaluate(params, &batch)?))
        }
        _ => Ok(None),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LocalMetricsDoc {
    train: TrainReport,
    normalization: NormSidecar,
    test: Option<MetricsReport>,
}

fn train_local_cmd(ctx: &Ctx) -> Result<RunManifest> {
    let root = DataRoot::open(&ctx.data_root()?)?;
    let mut r = Resolve::new(&ctx.cfg);
    let arch = resolve_arch(&mut r, root.manifest.side, root.manifest.classes)?;
    let cfg = TrainConfig {
        lr: r.f64("lr", 0.1)?,
        epochs: r.usize("epochs", 5)?,
        batch_size: r.usize("batch_size", 16)?,
        patience: r.patience()?,
        seed: ctx.seed,
        round_tag: 0,
    };
    let val_fraction = r.f64("val_fraction", 0.1)?;
    let frac_bits = r.u8("frac_bits", DEFAULT_FRAC_BITS)?;
    r.note("seed", ctx.seed);

    let pooled = root.pooled()?;
    if pooled.is_empty() {
        return Err(Error::Data(format!(
            "no training images under {} ({} nodes, all empty)",
            root.dir.display(),
            root.manifest.nodes
        )));
    }
    let moments = pooled_moments_local(&pooled, frac_bits)?;
    let (train, val) =
        pooled.normalized(moments.mean, moments.std).split(val_fraction, ctx.seed, "cli.valsplit");

    let mut params = ModelParams::init(&arch, ctx.seed)?;
    let t0 = Instant::now();
    let report = train_local(&mut params, &train, &val, &cfg)?;
    for e in &report.history {
        ctx.log.debug(format!(
            "epoch {}: loss {:.4}, val MCC {}",
            e.epoch,
            e.train_loss,
            e.val_mcc.map_or("n/a".into(), |m| format!("{m:.4}"))
        ));
    }
    ctx.log.info(format!(
        "trained {} epochs in {:.1}s; best validation MCC {}",
        report.epochs_run,
        t0.elapsed().as_secs_f64(),
        report.best_val_mcc.map_or("n/a".into(), |m| format!("{m:.4}"))
    ));

    let test = eval_test(&root, &params, &moments)?;
    if let Some(t) = &test {
        ctx.log.info(format!("test: {} samples, accuracy {:.4}, MCC {:.4}", t.samples, t.accuracy, t.mcc));
    }

    let model_path = ctx.out("model.pmd1");
    write_pmd1(&params, &model_path)?;
    let norm = NormSidecar::from(moments);
    write_json(&ctx.out("norm.json"), &norm)?;
    write_json(&ctx.out("metrics.json"), &LocalMetricsDoc { train: report, normalization: norm, test })?;

    let mut artifacts = BTreeMap::new();
    artifacts.insert("model".into(), model_path.display().to_string());
    artifacts.insert("metrics".into(), ctx.out("metrics.json").display().to_string());
    artifacts.insert("norm".into(), ctx.out("norm.json").display().to_string());
    ctx.finish("train-local", r.echo, artifacts)
}

// ---------------------------------------------------------------------------
// train-federated

#[derive(Debug, Serialize, Deserialize)]
struct FedMetricsDoc {
    final_val_mcc: Option<f64>,
    normalization: NormSidecar,
    test: Option<MetricsReport>,
}

fn train_federated_cmd(ctx: &Ctx, secure_flag: bool) -> Result<RunManifest> {
    let root = DataRoot::open(&ctx.data_root()?)?;
    let mut r = Resolve::new(&ctx.cfg);
    let arch = resolve_arch(&mut r, root.manifest.side, root.manifest.classes)?;
    let secure = secure_flag || r.bool("secure", false)?;
    r.note("secure", secure);
    let mut fc = FederationConfig {
        arch,
        rounds: r.usize("rounds", 3)?,
        epochs: r.usize("epochs", 2)?,
        lr: r.f64("lr", 0.1)?,
        batch_size: r.usize("batch_size", 16)?,
        patience: r.patience()?,
        secure,
        seed: ctx.seed,
        frac_bits: r.u8("frac_bits", DEFAULT_FRAC_BITS)?,
        latency_ms: r.u64("latency_ms", 0)?,
        search: SearchSpace {
            lrs: r.f64_list("search_lrs", &[])?,
            epochs: r.usize_list("search_epochs", &[])?,
            batch_sizes: r.usize_list("search_batch_sizes", &[])?,
        },
        search_rounds: r.usize("search_rounds", 1)?,
    };
    let budget = r.usize("search_budget", 0)?;
    r.note("seed", ctx.seed);

    let nodes = root.nodes()?;
    if nodes.iter().all(|n| n.is_empty()) {
        return Err(Error::Data(format!(
            "no training images under {} ({} nodes, all empty)",
            root.dir.display(),
            root.manifest.nodes
        )));
    }

    let search = if budget > 0 {
        let outcome = hyperparameter_search(&fc, &nodes, budget)?;
        ctx.log.info(format!(
            "search over {} trial(s): adopted lr={} epochs={} batch_size={}",
            outcome.trials.len(),
            outcome.best.lr,
            outcome.best.epochs,
            outcome.best.batch_size
        ));
        fc.lr = outcome.best.lr;
        fc.epochs = outcome.best.epochs;
        fc.batch_size = outcome.best.batch_size;
        r.note("adopted_lr", fc.lr);
        r.note("adopted_epochs", fc.epochs);
        r.note("adopted_batch_size", fc.batch_size);
        Some(outcome)
    } else {
        None
    };

    let t0 = Instant::now();
    let run = run_federation(&fc, &nodes)?;
    for rep in &run.reports {
        ctx.log.info(format!(
            "round {}/{} [{}]: mean loss {}, val MCC {}",
            rep.round,
            fc.rounds,
            rep.mode,
            mean_opt(&rep.train_loss).map_or("n/a".into(), |v| format!("{v:.4}")),
            mean_opt(&rep.val_mcc).map_or("n/a".into(), |v| format!("{v:.4}"))
        ));
    }
    ctx.log.info(format!(
        "federated {} round(s) across {} node(s) in {:.1}s; final validation MCC {}",
        fc.rounds,
        nodes.len(),
        t0.elapsed().as_secs_f64(),
        run.final_val_mcc.map_or("n/a".into(), |m| format!("{m:.4}"))
    ));

    let test = eval_test(&root, &run.params, &run.moments)?;
    if let Some(t) = &test {
        ctx.log.info(format!("test: {} samples, accuracy {:.4}, MCC {:.4}", t.samples, t.accuracy, t.mcc));
    }

    let model_path = ctx.out("model.pmd1");
    write_pmd1(&run.params, &model_path)?;
    let mut rounds_text = String::new();
    for rep in &run.reports {
        rounds_text.push_str(&serde_json::to_string(rep).expect("round report serializes"));
        rounds_text.push('\n');
    }
    std::fs::write(ctx.out("rounds.jsonl"), rounds_text)?;
    let norm = NormSidecar::from(run.moments);
    write_json(&ctx.out("norm.json"), &norm)?;
    write_json(
        &ctx.out("metrics.json"),
        &FedMetricsDoc { final_val_mcc: run.final_val_mcc, normalization: norm, test },
    )?;

    let mut artifacts = BTreeMap::new();
    artifacts.insert("model".into(), model_path.display().to_string());
    artifacts.insert("rounds".into(), ctx.out("rounds.jsonl").display().to_string());
    artifacts.insert("metrics".into(), ctx.out("metrics.json").display().to_string());
    artifacts.insert("norm".into(), ctx.out("norm.json").display().to_string());
    if let Some(outcome) = &search {
        write_json(&ctx.out("search.json"), outcome)?;
        artifacts.insert("search".into(), ctx.out("search.json").display().to_string());
    }
    let _: Option<&SearchOutcome> = search.as_ref();
    ctx.finish("train-federated", r.echo, artifacts)
}

fn mean_opt(vals: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = vals.iter().flatten().copied().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

// ---------------------------------------------------------------------------
// infer-serve / infer-client

fn read_model(path: &Path) -> Result<ModelParams> {
    if !path.exists() {
        return Err(Error::Usage(format!("model checkpoint {} does not exist", path.display())));
    }
    read_pmd1(path)
}

fn infer_serve_cmd(
    ctx: &Ctx,
    model: &Path,
    port: u16,
    sessions: Option<usize>,
) -> Result<RunManifest> {
    let params = read_model(model)?;
    let mut r = Resolve::new(&ctx.cfg);
    let frac_bits = r.u8("frac_bits", DEFAULT_FRAC_BITS)?;
    r.note("seed", ctx.seed);
    r.note("model", model.display());
    r.note("port", port);
    r.note("sessions", sessions.map_or("unlimited".into(), |s| s.to_string()));

    let listener = TcpListener::bind(("127.0.0.1", port))?;
    let addr = listener.local_addr()?;
    // Scrapable by scripts and tests; the bound port matters under --port 0.
    println!("listening on {addr}");
    std::io::stdout().flush()?;
    ctx.log.info(format!("serving {} ({})", model.display(), params.arch.tag()));

    let mut artifacts = BTreeMap::new();
    artifacts.insert("model".into(), model.display().to_string());
    let manifest = ctx.finish("infer-serve", r.echo.clone(), artifacts.clone())?;
    if sessions.is_none() {
        // Serves until killed; the manifest above is this run's record.
        serve(&listener, &params, frac_bits, ctx.seed, None)?;
        return Ok(manifest);
    }

    let report = serve(&listener, &params, frac_bits, ctx.seed, sessions)?;
    ctx.log.info(format!(
        "served {} session(s), {} image(s), {} failure(s)",
        report.sessions, report.images, report.failures
    ));
    write_json(&ctx.out("serve_report.json"), &report)?;
    artifacts.insert("serve_report".into(), ctx.out("serve_report.json").display().to_string());
    ctx.finish("infer-serve", r.echo, artifacts)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoredBlock {
    pub accuracy: f64,
    pub mcc: f64,
}

/// What `infer-client` writes and `compare` reads.
#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionsDoc {
    pub labels: Vec<usize>,
    #[serde(default)]
    pub probabilities: Option<Vec<Vec<f64>>>,
    /// Present when ground-truth labels were supplied.
    #[serde(default)]
    pub scored: Option<ScoredBlock>,
}

fn classes_spanning(truth: &[usize], preds: &[usize]) -> usize {
    truth.iter().chain(preds).max().map_or(1, |m| m + 1).max(2)
}

#[allow(clippy::too_many_arguments)]
fn infer_client_cmd(
    ctx: &Ctx,
    host: &str,
    port: u16,
    images_path: &Path,
    out: Option<PathBuf>,
    labels_path: Option<PathBuf>,
    probabilities: bool,
    norm: Option<PathBuf>,
) -> Result<RunManifest> {
    let mut r = Resolve::new(&ctx.cfg);
    r.note("seed", ctx.seed);
    r.note("host", host);
    r.note("port", port);
    r.note("images", images_path.display());
    r.note("probabilities", probabilities);

    let mut images = read_idx_images(images_path)
        .map_err(|e| Error::Data(format!("{}: {e}", images_path.display())))?;
    if let Some(np) = &norm {
        let n: NormSidecar = read_json(np, "normalization sidecar")?;
        r.note("norm", np.display());
        let s = n.std.max(1e-6);
        for v in &mut images.data {
            *v = (*v - n.mean) / s;
        }
    }

    let t0 = Instant::now();
    let preds = run_client((host, port), &images, ClientConfig { probabilities, seed: ctx.seed })?;
    ctx.log.info(format!("classified {} image(s) in {:.1}s", preds.len(), t0.elapsed().as_secs_f64()));

    let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
    let probs = probabilities
        .then(|| preds.iter().map(|p| p.probabilities.clone().unwrap_or_default()).collect());

    let scored = match &labels_path {
        Some(lp) => {
            let truth = read_idx_labels(lp).map_err(|e| Error::Data(format!("{}: {e}", lp.display())))?;
            if truth.len() != labels.len() {
                return Err(Error::Data(format!(
                    "{} has {} labels for {} predictions",
                    lp.display(),
                    truth.len(),
                    labels.len()
                )));
            }
            r.note("labels", lp.display());
            let m = ConfusionMatrix::from_pairs(&truth, &labels, classes_spanning(&truth, &labels))?;
            let block = ScoredBlock { accuracy: m.accuracy(), mcc: m.mcc() };
            ctx.log.info(format!("accuracy {:.4}, MCC {:.4}", block.accuracy, block.mcc));
            Some(block)
        }
        None => None,
    };

    let out_path = out.unwrap_or_else(|| ctx.out("predictions.json"));
    write_json(&out_path, &PredictionsDoc { labels, probabilities: probs, scored })?;
    let mut artifacts = BTreeMap::new();
    artifacts.insert("predictions".into(), out_path.display().to_string());
    ctx.finish("infer-client", r.echo, artifacts)
}

// ---------------------------------------------------------------------------
// attack

#[derive(Debug, Serialize)]
struct AttackDoc {
    scenario: Scenario,
    true_labels: Vec<usize>,
    recovered_labels: Vec<usize>,
    quality: ReconQuality,
    /// Squared feature-space distance in the victim model's own embedding;
    /// not comparable to Inception-based FID figures.
    feature_distance: f64,
    /// Messages in the captured secure-aggregation transcript, when one ran.
    transcript_messages: Option<usize>,
    report: AttackReport,
}

fn attack_cmd(ctx: &Ctx, scenario: Scenario, out: Option<PathBuf>) -> Result<RunManifest> {
    let mut r = Resolve::new(&ctx.cfg);
    let nodes_n = r.usize("nodes", 3)?;
    let side = r.usize("side", 8)?;
    let hidden = r.usize_list("hidden", &[16])?;
    let epochs = r.usize("epochs", 2)?;
    let lr = r.f64("lr", 0.2)?;
    let frac_bits = r.u8("frac_bits", DEFAULT_FRAC_BITS)?;
    let label_mode = match r.choice("label_mode", "analytic", &["analytic", "joint"])?.as_str() {
        "joint" => LabelMode::Joint,
        _ => LabelMode::Analytic,
    };
    let acfg = AttackConfig {
        iterations: r.usize("iterations", 1000)?,
        step_size: r.f64("step_size", 0.1)?,
        lambda_tv: r.f64("lambda_tv", 0.0)?,
        restarts: r.usize("restarts", 2)?,
        seed: seed::derive_seed(ctx.seed, "attack.invert"),
        label_mode,
    };
    r.note("seed", ctx.seed);
    r.note("scenario", scenario.as_str());
    if nodes_n == 0 {
        return Err(Error::Usage("attack needs nodes >= 1".into()));
    }
    if side < 4 {
        return Err(Error::Usage(format!("side {side} too small; the patterns need >= 4")));
    }

    // One synthetic image per node; node 0 is the victim.
    let pool = synthetic_dataset(ctx.seed, "attack.scene", nodes_n, side)?;
    let node_sets: Vec<Dataset> = (0..nodes_n).map(|k| pool.subset(&[k])).collect();
    let arch = Architecture::mlp(side * side, hidden, pool.classes);
    let fc = FederationConfig {
        arch: arch.clone(),
        rounds: 1,
        epochs,
        lr,
        batch_size: 1,
        patience: None,
        secure: false,
        seed: ctx.seed,
        frac_bits,
        latency_ms: 0,
        search: SearchSpace::default(),
        search_rounds: 1,
    };
    let global = ModelParams::init(&arch, ctx.seed)?;
    let moments = pooled_moments_of(&node_sets, frac_bits)?;
    let victim_batch =
        node_sets[0].normalized(moments.mean, moments.std).to_batch_for(&arch)?;
    let truth = victim_batch.inputs.clone();

    let (update, transcript_messages) = match scenario {
        Scenario::Local => (capture_local(&global, &victim_batch)?, None),
        Scenario::FedPlain => (capture_fed_plain(&fc, &node_sets, 0)?, None),
        Scenario::FedSecure => {
            let (u, t) = capture_fed_secure(&fc, &node_sets)?;
            (u, t.map(|t| t.collect().len()))
        }
    };

    let t0 = Instant::now();
    let report = invert(&global, &update, Some(&truth), &acfg)?;
    for o in &report.restarts {
        ctx.log.debug(format!(
            "restart {}: objective {:.6}, MSE {}, {} iteration(s){}",
            o.restart,
            o.objective,
            o.mse.map_or("n/a".into(), |m| format!("{m:.6}")),
            o.iterations_run,
            if o.aborted { ", aborted" } else { "" }
        ));
    }
    let best = &report.restarts[report.best_restart];
    let quality = evaluate_reconstruction(&best.reconstruction, &truth)?;
    let fd = feature_distance(&global, &best.reconstruction, &truth)?;
    ctx.log.info(format!(
        "{} attack: best restart {} of {}, objective {:.6}, MSE {:.6}, {:.1}s",
        scenario.as_str(),
        report.best_restart,
        acfg.restarts,
        best.objective,
        quality.mse,
        t0.elapsed().as_secs_f64()
    ));

    // Reconstruction and target dumped as images: the truth exactly as the
    // victim held it, the reconstruction denormalized into pixel space.
    let truth_path = ctx.out("truth.idx");
    write_idx_images(&truth_path, &node_sets[0].images)?;
    let mut denorm = best.reconstruction.data.clone();
    for v in &mut denorm {
        *v = (*v * moments.std + moments.mean).clamp(0.0, 1.0);
    }
    let recon_img = PlainTensor::from_vec(&[1, 1, side, side], denorm)?;
    let recon_path = ctx.out("recon.idx");
    write_idx_images(&recon_path, &recon_img)?;

    let doc = AttackDoc {
        scenario,
        true_labels: victim_batch.labels.clone(),
        recovered_labels: best.labels.clone(),
        quality,
        feature_distance: fd,
        transcript_messages,
        report,
    };
    let out_path = out.unwrap_or_else(|| ctx.out("report.json"));
    write_json(&out_path, &doc)?;

    let mut artifacts = BTreeMap::new();
    artifacts.insert("report".into(), out_path.display().to_string());
    artifacts.insert("recon_idx".into(), recon_path.display().to_string());
    artifacts.insert("truth_idx".into(), truth_path.display().to_string());
    ctx.finish("attack", r.echo, artifacts)
}

// ---------------------------------------------------------------------------
// benchmark

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectedPoint {
    pub latency_ms: u64,
    pub elapsed_ns: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BenchmarkDoc {
    protocol: String,
    repeats: usize,
    /// Virtual-clock figures were identical across every repeat.
    deterministic_across_repeats: bool,
    wall_ms_per_repeat: Vec<u64>,
    /// Headline series for the protocol picked with --protocol.
    selected: Option<Vec<SelectedPoint>>,
    benchmark: InferenceBenchmark,
}

fn benchmark_cmd(
    ctx: &Ctx,
    latency_ms: &[u64],
    protocol: Option<ProtocolArg>,
    repeats: usize,
    out: Option<PathBuf>,
    model: Option<PathBuf>,
) -> Result<RunManifest> {
    if latency_ms.is_empty() {
        return Err(Error::Usage("benchmark needs at least one --latency-ms value".into()));
    }
    if repeats == 0 {
        return Err(Error::Usage("benchmark needs --repeats >= 1".into()));
    }
    let mut r = Resolve::new(&ctx.cfg);
    let params = match &model {
        Some(p) => {
            r.note("model", p.display());
            read_model(p)?
        }
        None => {
            let side = r.usize("side", 16)?;
            if side < 4 {
                return Err(Error::Usage(format!("side {side} too small; needs >= 4")));
            }
            let arch = resolve_arch(&mut r, side, SYNTHETIC_CLASSES)?;
            ModelParams::init(&arch, ctx.seed)?
        }
    };
    let baseline = BaselineModel {
        rounds_per_comparison: r.u64("baseline_rounds_per_comparison", 8)?,
        comparison_bytes_factor: r.u64("baseline_bytes_factor", 4)?,
    };
    r.note("seed", ctx.seed);
    r.note("latency_ms", latency_ms.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","));
    r.note("repeats", repeats);
    let protocol_name = match protocol {
        Some(ProtocolArg::Fss) => "fss",
        Some(ProtocolArg::Baseline) => "baseline",
        None => "both",
    };
    r.note("protocol", protocol_name);

    let shape = params.arch.input_shape();
    let numel: usize = shape.iter().product();
    let mut rng = seed::rng_from(ctx.seed, "bench.sample");
    let sample =
        PlainTensor::from_vec(&shape, (0..numel).map(|_| rng.gen_range(0.0..1.0)).collect())?;

    let mut first: Option<(String, InferenceBenchmark)> = None;
    let mut deterministic = true;
    let mut wall_ms_per_repeat = Vec::with_capacity(repeats);
    for rep in 0..repeats {
        let t0 = Instant::now();
        let bench = benchmark_inference(&params, &sample, latency_ms, &baseline, ctx.seed)?;
        wall_ms_per_repeat.push(t0.elapsed().as_millis() as u64);
        let key = serde_json::to_string(&bench).expect("benchmark serializes");
        match &first {
            None => first = Some((key, bench)),
            Some((k0, _)) if *k0 != key => {
                deterministic = false;
                ctx.log.info(format!("repeat {rep} diverged from repeat 0"));
            }
            _ => {}
        }
    }
    let benchmark = first.expect("repeats >= 1").1;

    for p in &benchmark.points {
        ctx.log.info(format!(
            "{} ms: fss {:.1} ms, baseline {:.1} ms, reduction {:.1}%",
            p.latency_ms,
            p.fss_ns as f64 / 1e6,
            p.baseline_ns as f64 / 1e6,
            100.0 * p.reduction
        ));
    }

    let selected = protocol.map(|p| {
        benchmark
            .points
            .iter()
            .map(|pt| SelectedPoint {
                latency_ms: pt.latency_ms,
                elapsed_ns: match p {
                    ProtocolArg::Fss => pt.fss_ns,
                    ProtocolArg::Baseline => pt.baseline_ns,
                },
            })
            .collect()
    });
    let doc = BenchmarkDoc {
        protocol: protocol_name.to_string(),
        repeats,
        deterministic_across_repeats: deterministic,
        wall_ms_per_repeat,
        selected,
        benchmark,
    };
    let out_path = out.unwrap_or_else(|| ctx.out("bench.json"));
    write_json(&out_path, &doc)?;
    let mut artifacts = BTreeMap::new();
    artifacts.insert("bench".into(), out_path.display().to_string());
    ctx.finish("benchmark", r.echo, artifacts)
}

// ---------------------------------------------------------------------------
// compare

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelScore {
    pub name: String,
    pub accuracy: f64,
    pub mcc: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairScore {
    pub a: String,
    pub b: String,
    pub kappa: f64,
    pub mcnemar_statistic: f64,
    pub mcnemar_p: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompareDoc {
    pub samples: usize,
    pub models: Vec<ModelScore>,
    pub pairs: Vec<PairScore>,
}

/// Pairwise agreement of named prediction vectors against shared truth.
pub fn compare_predictions(
    models: &[(String, Vec<usize>)],
    truth: &[usize],
) -> Result<CompareDoc> {
    if models.len() < 2 {
        return Err(Error::Usage("compare needs at least two prediction sets".into()));
    }
    for (name, preds) in models {
        if preds.len() != truth.len() {
            return Err(Error::Data(format!(
                "prediction set '{name}' has {} labels, truth has {}",
                preds.len(),
                truth.len()
            )));
        }
    }
    let mut scores = Vec::with_capacity(models.len());
    for (name, preds) in models {
        let m = ConfusionMatrix::from_pairs(truth, preds, classes_spanning(truth, preds))?;
        scores.push(ModelScore { name: name.clone(), accuracy: m.accuracy(), mcc: m.mcc() });
    }
    let mut pairs = Vec::new();
    for i in 0..models.len() {
        for j in (i + 1)..models.len() {
            let (a_name, a) = &models[i];
            let (b_name, b) = &models[j];
            let kappa = cohens_kappa(a, b)?;
            let (stat, p) = mcnemar_test(a, b, truth)?;
            pairs.push(PairScore {
                a: a_name.clone(),
                b: b_name.clone(),
                kappa,
                mcnemar_statistic: stat,
                mcnemar_p: p,
            });
        }
    }
    Ok(CompareDoc { samples: truth.len(), models: scores, pairs })
}

/// File stems, falling back to full paths if stems collide.
fn display_names(paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = paths
        .iter()
        .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
        .collect();
    let unique: std::collections::BTreeSet<&String> = stems.iter().collect();
    if unique.len() == stems.len() {
        stems
    } else {
        paths.iter().map(|p| p.display().to_string()).collect()
    }
}

fn compare_cmd(
    ctx: &Ctx,
    preds: &[PathBuf],
    truth_path: &Path,
    out: Option<PathBuf>,
) -> Result<RunManifest> {
    if preds.len() < 2 {
        return Err(Error::Usage("compare needs at least two --preds files".into()));
    }
    let mut r = Resolve::new(&ctx.cfg);
    r.note("seed", ctx.seed);
    r.note("truth", truth_path.display());
    let truth = read_idx_labels(truth_path)
        .map_err(|e| Error::Data(format!("{}: {e}", truth_path.display())))?;

    let names = display_names(preds);
    let mut models = Vec::with_capacity(preds.len());
    for (path, name) in preds.iter().zip(&names) {
        let doc: PredictionsDoc = read_json(path, "prediction file")?;
        models.push((name.clone(), doc.labels));
    }
    r.note("preds", names.join(","));

    let doc = compare_predictions(&models, &truth)?;
    for p in &doc.pairs {
        ctx.log.info(format!(
            "{} vs {}: kappa {:.4}, McNemar p {:.4}",
            p.a, p.b, p.kappa, p.mcnemar_p
        ));
    }
    let out_path = out.unwrap_or_else(|| ctx.out("compare.json"));
    write_json(&out_path, &doc)?;
    let mut artifacts = BTreeMap::new();
    artifacts.insert("compare".into(), out_path.display().to_string());
    ctx.finish("compare", r.echo, artifacts)
}

// ---------------------------------------------------------------------------
// stats

#[derive(Debug, Serialize, Deserialize)]
pub struct NodeMomentsLine {
    pub node: usize,
    pub count: u64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct StatsDoc {
    frac_bits: u8,
    nodes: Vec<NodeMomentsLine>,
    /// Direct f64 pooling of the per-node sums — the oracle.
    pooled_plain: NormSidecar,
    /// What the secure-summation protocol revealed.
    pooled_secure: NormSidecar,
    mean_abs_error: f64,
    std_abs_error: f64,
}

fn plain_moments(sum: f64, sum_sq: f64, count: f64) -> NormSidecar {
    if count <= 0.0 {
        return NormSidecar { mean: 0.0, std: 0.0, count: 0.0 };
    }
    let mean = sum / count;
    let var = (sum_sq / count - mean * mean).max(0.0);
    NormSidecar { mean, std: var.sqrt(), count }
}

fn stats_cmd(ctx: &Ctx, out: Option<PathBuf>) -> Result<RunManifest> {
    let root = DataRoot::open(&ctx.data_root()?)?;
    let mut r = Resolve::new(&ctx.cfg);
    let frac_bits = r.u8("frac_bits", DEFAULT_FRAC_BITS)?;
    r.note("seed", ctx.seed);

    let nodes = root.nodes()?;
    let sums: Vec<(f64, f64, u64)> = nodes.iter().map(pixel_sums).collect();
    let node_lines: Vec<NodeMomentsLine> = sums
        .iter()
        .enumerate()
        .map(|(k, &(s, q, c))| {
            let m = plain_moments(s, q, c as f64);
            NodeMomentsLine { node: k, count: c, mean: m.mean, std: m.std }
        })
        .collect();
    let (ts, tq, tc) = sums
        .iter()
        .fold((0.0, 0.0, 0u64), |(a, b, c), &(s, q, n)| (a + s, b + q, c + n));
    let pooled_plain = plain_moments(ts, tq, tc as f64);

    // A real secure-summation session when several parties exist; the
    // single-node case has nobody to hide from and pools locally.
    let pooled_secure: Moments = if nodes.len() >= 2 {
        let sid = seed::derive_seed128(ctx.seed, "stats.sid");
        let root_seed = ctx.seed;
        let fns: Vec<_> = sums
            .iter()
            .map(|&(s, q, c)| {
                move |party: &mut SimParty| {
                    let mut rng =
                        seed::rng_from(root_seed, &format!("stats.node{}", party.me()));
                    secure_moments(party, sid, s, q, c, frac_bits, 0, &mut rng)
                }
            })
            .collect();
        let run = run_sim(LatencyModel::ideal(), fns)?;
        run.results[0].expect("the collector learns the pooled moments")
    } else {
        pooled_moments_local(&nodes[0], frac_bits)?
    };

    let doc = StatsDoc {
        frac_bits,
        nodes: node_lines,
        pooled_plain,
        pooled_secure: NormSidecar::from(pooled_secure),
        mean_abs_error: (pooled_secure.mean - pooled_plain.mean).abs(),
        std_abs_error: (pooled_secure.std - pooled_plain.std).abs(),
    };
    ctx.log.info(format!(
        "pooled over {} node(s): mean {:.6} (secure {:.6}), std {:.6} (secure {:.6})",
        nodes.len(),
        doc.pooled_plain.mean,
        doc.pooled_secure.mean,
        doc.pooled_plain.std,
        doc.pooled_secure.std
    ));

    let out_path = out.unwrap_or_else(|| ctx.out("stats.json"));
    write_json(&out_path, &doc)?;
    let mut artifacts = BTreeMap::new();
    artifacts.insert("stats".into(), out_path.display().to_string());
    ctx.finish("stats", r.echo, artifacts)
}
