//! Cross-validated experiment harness behind the CLI subcommands.
//!
//! One job is a `(seed, fold)` cell. Inside a job the clean pairs are drawn
//! once from the training fold; for each noise setting they are corrupted
//! once and every method trains on that same pair set, so comparisons are
//! paired. Jobs run on a bounded worker pool and results are assembled in job
//! order, so reports do not depend on scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    estimate_pi_plus_from_sd, generate_pairs, inject_noise, kfold_split, load_csv, synth_gaussians,
    MinMaxScaler, PairDataset, PointDataset,
};
use crate::error::{Error, Result};
use crate::losses::{scaling_constant, LossKind, NoiseSpec, Priors};
use crate::net::{default_layer_dims, Mlp, TrainConfig, DEFAULT_HIDDEN};
use crate::noise_est::{estimate_noise_rates, NoiseEstConfig, RateEstimate};
use crate::risk::{evaluate_accuracy, train, RiskMode};
use crate::rng::Rng;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const RAW_CSV_HEADER: &str = "seed,fold,method,loss,noise_s,noise_d,accuracy";

// Sub-streams of a run seed.
const STREAM_DATA: u64 = 1;
const STREAM_FOLDS: u64 = 2;
const STREAM_PAIRS: u64 = 1_000;
const STREAM_NOISE: u64 = 2_000;
const STREAM_EST_SPLIT: u64 = 3_000;
const STREAM_EST_INIT: u64 = 4_000;
const STREAM_EST_TRAIN: u64 = 5_000;
const STREAM_NET_INIT: u64 = 6_000;
const STREAM_TRAIN: u64 = 7_000;
const STREAM_GRID: u64 = 100;

/// Noisy pairs, rates used, estimated rates, π₊ for one grid point.
type Prepared = (PairDataset, (f64, f64), Option<RateEstimate>, f64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        label_column: String,
        positive_token: String,
    },
    /// Two Gaussians; without a fixed `seed` each run seed draws its own
    /// sample.
    Synthetic {
        n: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        pi_plus: f64,
        mean_sep: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn default_dim() -> usize {
    2
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            n: 500,
            dim: 2,
            pi_plus: 0.7,
            mean_sep: 8.0,
            seed: None,
        }
    }
}

/// Where the noise rates handed to the corrected losses come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSource {
    /// The rates that were injected.
    #[default]
    Given,
    /// The anchor-pair estimator, run on the noisy training pairs.
    Estimate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    /// Positive fraction of the training fold.
    #[default]
    Labels,
    /// The configured `pi_plus`.
    Fixed,
    /// Inverted from the similar-pair fraction; assumes `π₊ > π₋`.
    Estimate,
}

/// How the pair loss is built from the base loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Robust mode matching the noise: uniform → `L`, conditional or
    /// estimated rates → scaled `L̂`.
    #[default]
    Auto,
    /// Plain `L`, no noise handling.
    Clean,
    UniformRobust,
    ConditionalRobust,
    /// Backward correction with the rates.
    Lcnip,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Auto => "auto",
            Method::Clean => "clean",
            Method::UniformRobust => "uniform_robust",
            Method::ConditionalRobust => "conditional_robust",
            Method::Lcnip => "lcnip",
        }
    }

    pub fn default_label(self) -> &'static str {
        match self {
            Method::Auto => "rolnip",
            Method::Clean => "uncorrected",
            Method::UniformRobust => "rolnip_uniform",
            Method::ConditionalRobust => "rolnip_conditional",
            Method::Lcnip => "lcnip",
        }
    }

    fn needs_rates(self, rates: RateSource) -> bool {
        match self {
            Method::ConditionalRobust | Method::Lcnip => true,
            Method::Auto => rates == RateSource::Estimate,
            Method::Clean | Method::UniformRobust => false,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        [
            Method::Auto,
            Method::Clean,
            Method::UniformRobust,
            Method::ConditionalRobust,
            Method::Lcnip,
        ]
        .into_iter()
        .find(|m| m.name() == norm)
        .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub label: String,
    pub method: Method,
    pub loss: LossKind,
}

impl MethodSpec {
    pub fn new(method: Method, loss: LossKind) -> Self {
        Self {
            label: method.default_label().to_string(),
            method,
            loss,
        }
    }
}

/// `label:method:loss`, `method:loss`, or just `method` (config loss).
pub fn parse_method_spec(s: &str, default_loss: LossKind) -> Result<MethodSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [m] => Ok(MethodSpec::new(m.parse()?, default_loss)),
        [m, l] => Ok(MethodSpec::new(m.parse()?, l.parse()?)),
        [label, m, l] => Ok(MethodSpec {
            label: label.to_string(),
            method: m.parse()?,
            loss: l.parse()?,
        }),
        _ => Err(Error::Config(format!("bad method spec `{s}`"))),
    }
}

/// `none`, `uniform:η` (or a bare `η`), `conditional:η_S,η_D`.
pub fn parse_noise(s: &str) -> Result<NoiseSpec> {
    let s = s.trim();
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad noise rate `{v}` in `{s}`")))
    };
    let spec = if s.eq_ignore_ascii_case("none") {
        NoiseSpec::None
    } else if let Some(rest) = s.strip_prefix("uniform:") {
        NoiseSpec::Uniform { eta: num(rest)? }
    } else if let Some(rest) = s.strip_prefix("conditional:") {
        let (a, b) = rest
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("conditional noise needs two rates: `{s}`")))?;
        NoiseSpec::Conditional {
            eta_s: num(a)?,
            eta_d: num(b)?,
        }
    } else {
        NoiseSpec::Uniform { eta: num(s)? }
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Pairs drawn per training fold; `None` means twice the fold size.
    pub n_pairs: Option<usize>,
    /// Noise settings to run; each is injected into the training pairs.
    pub noise: Vec<NoiseSpec>,
    pub rates: RateSource,
    pub loss: LossKind,
    pub method: Method,
    /// Methods for `compare`; empty means RoLNiP, LCNiP and uncorrected
    /// Squared.
    pub methods: Vec<MethodSpec>,
    pub priors: PriorSource,
    pub pi_plus: Option<f64>,
    /// Per-column min-max scaling fitted on the training fold.
    pub scale: bool,
    pub hidden: Vec<usize>,
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub train: TrainConfig,
    pub noise_est: NoiseEstConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            n_pairs: None,
            noise: vec![NoiseSpec::None],
            rates: RateSource::Given,
            loss: LossKind::Sigmoid,
            method: Method::Auto,
            methods: Vec::new(),
            priors: PriorSource::Labels,
            pi_plus: None,
            scale: true,
            hidden: DEFAULT_HIDDEN.to_vec(),
            folds: 10,
            seeds: vec![0],
            jobs: 1,
            train: TrainConfig::default(),
            noise_est: NoiseEstConfig::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Methods for `compare`.
    pub fn compare_methods(&self) -> Vec<MethodSpec> {
        if !self.methods.is_empty() {
            return self.methods.clone();
        }
        vec![
            MethodSpec::new(Method::Auto, self.loss),
            MethodSpec::new(Method::Lcnip, self.loss),
            MethodSpec::new(Method::Clean, LossKind::Squared),
        ]
    }

    pub fn train_eval_methods(&self) -> Vec<MethodSpec> {
        vec![MethodSpec::new(self.method, self.loss)]
    }

    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataSource::Csv { label_column, .. } if label_column.is_empty() => {
                return Err(Error::Config("label_column must be set".into()))
            }
            DataSource::Synthetic {
                n,
                dim,
                pi_plus,
                mean_sep,
                ..
            } => {
                if *n < 2 || *dim == 0 || !(0.0..=1.0).contains(pi_plus) || mean_sep.is_nan() || *mean_sep <= 0.0 {
                    return Err(Error::Config(format!(
                        "bad synthetic source: n={n}, dim={dim}, pi_plus={pi_plus}, mean_sep={mean_sep}"
                    )));
                }
            }
            DataSource::Csv { .. } => {}
        }
        if self.n_pairs == Some(0) {
            return Err(Error::Config("n_pairs must be at least 1".into()));
        }
        if self.noise.is_empty() {
            return Err(Error::Config("at least one noise setting is required".into()));
        }
        for n in &self.noise {
            n.validate()?;
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        match (self.priors, self.pi_plus) {
            (PriorSource::Fixed, None) => {
                return Err(Error::Config("priors = \"fixed\" needs pi_plus".into()))
            }
            (_, Some(p)) if !(0.0..=1.0).contains(&p) => {
                return Err(Error::Config(format!("pi_plus must lie in [0, 1], got {p}")))
            }
            _ => {}
        }
        self.train.validate()?;
        self.noise_est.validate()?;
        let mut methods = self.compare_methods();
        methods.extend(self.train_eval_methods());
        for m in &methods {
            if !m.loss.is_differentiable() {
                return Err(Error::UnsupportedLoss(format!(
                    "{} is evaluation-only and cannot be trained on",
                    m.loss
                )));
            }
            if m.method == Method::ConditionalRobust && self.rates == RateSource::Given {
                if let Some(n) = self.noise.iter().find(|n| matches!(n, NoiseSpec::Uniform { .. })) {
                    return Err(Error::Config(format!(
                        "conditional_robust needs conditional rates, given or estimated; noise is {n}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One method trained and evaluated on one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub fold: usize,
    pub method: String,
    pub loss: LossKind,
    pub noise: NoiseSpec,
    pub noise_s: f64,
    pub noise_d: f64,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
    /// Rates handed to the risk, given or estimated.
    pub rates_used: Option<(f64, f64)>,
    pub estimated_rates: Option<RateEstimate>,
    pub pi_plus: Option<f64>,
    pub risk_mode: Option<RiskMode>,
    pub pair_checksum: Option<String>,
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub loss: LossKind,
    pub noise: NoiseSpec,
    /// Mean over seeds of the per-seed fold means.
    pub mean: Option<f64>,
    /// Sample standard deviation of the per-seed means; 0 for one seed.
    pub std: Option<f64>,
    pub seed_means: Vec<(u64, f64)>,
    pub completed_runs: usize,
    pub failed_runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub software_version: String,
    pub command: String,
    pub config: ExperimentConfig,
    /// False when any run failed.
    pub complete: bool,
    pub pairs_shared: bool,
    pub summaries: Vec<MethodSummary>,
    pub runs: Vec<RunRecord>,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    /// Report JSON without the wall-clock field, for reproducibility checks.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self).map_err(|e| Error::State(e.to_string()))?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_clock_seconds");
        }
        serde_json::to_string_pretty(&v).map_err(|e| Error::State(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::State(e.to_string()))
    }

    pub fn raw_csv(&self) -> String {
        let mut out = String::from(RAW_CSV_HEADER);
        out.push('\n');
        for r in &self.runs {
            let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.seed, r.fold, r.method, r.loss, r.noise_s, r.noise_d, acc
            ));
        }
        out
    }

    pub fn comparison_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::State(e.to_string());
        w.write_record(["method", "loss", "noise", "mean", "std"]).map_err(io)?;
        for s in &self.summaries {
            let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                s.method.clone(),
                s.loss.to_string(),
                s.noise.to_string(),
                f(s.mean),
                f(s.std),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::State(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::State(e.to_string()))
    }

    pub fn summary(&self, method: &str, noise: &NoiseSpec) -> Option<&MethodSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.noise == *noise)
    }
}

/// Loads or synthesises the point dataset for a run seed.
pub fn load_points(source: &DataSource, run_seed: u64) -> Result<PointDataset> {
    match source {
        DataSource::Csv {
            path,
            label_column,
            positive_token,
        } => load_csv(path, label_column, positive_token),
        DataSource::Synthetic {
            n,
            dim,
            pi_plus,
            mean_sep,
            seed,
        } => {
            let s = seed.unwrap_or_else(|| Rng::derive_seed(run_seed, STREAM_DATA));
            synth_gaussians(*n, *dim, *pi_plus, *mean_sep, s)
        }
    }
}

fn data_is_per_seed(source: &DataSource) -> bool {
    matches!(source, DataSource::Synthetic { seed: None, .. })
}

fn prepare_points(points: &PointDataset, scale: bool) -> Result<PointDataset> {
    if scale {
        MinMaxScaler::fit(points).transform(points)
    } else {
        Ok(points.clone())
    }
}

fn noise_est_config(base: &NoiseEstConfig, run_seed: u64, slot: u64) -> NoiseEstConfig {
    let mut cfg = base.clone();
    cfg.split_seed = Rng::derive_seed(run_seed, STREAM_EST_SPLIT + slot);
    cfg.init_seed = Rng::derive_seed(run_seed, STREAM_EST_INIT + slot);
    cfg.train.seed = Rng::derive_seed(run_seed, STREAM_EST_TRAIN + slot);
    cfg
}

/// Pairs over the whole dataset for `generate`, seeded with the first run
/// seed; noise uses a derived stream.
pub fn generate_pair_file(config: &ExperimentConfig) -> Result<(PointDataset, PairDataset)> {
    let seed = config.seeds[0];
    let points = load_points(&config.data, seed)?;
    let n_pairs = config.n_pairs.unwrap_or(2 * points.len());
    let clean = generate_pairs(&points, n_pairs, seed)?;
    let pairs = inject_noise(&clean, &config.noise[0], Rng::derive_seed(seed, STREAM_NOISE))?;
    Ok((points, pairs))
}

/// Output of `estimate-noise`: the estimates averaged over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimateReport {
    pub eta_s_hat: f64,
    pub eta_d_hat: f64,
    pub seeds: Vec<u64>,
    pub top_k: usize,
}

/// Per-seed estimates on pairs drawn from the whole dataset.
pub fn estimate_noise_per_seed(config: &ExperimentConfig) -> Result<Vec<RateEstimate>> {
    config.validate()?;
    let shared = if data_is_per_seed(&config.data) {
        None
    } else {
        Some(load_points(&config.data, 0)?)
    };
    let run = |&seed: &u64| -> Result<RateEstimate> {
        let raw = match &shared {
            Some(p) => p.clone(),
            None => load_points(&config.data, seed)?,
        };
        let points = prepare_points(&raw, config.scale)?;
        let n_pairs = config.n_pairs.unwrap_or(2 * points.len());
        let clean = generate_pairs(&points, n_pairs, Rng::derive_seed(seed, STREAM_PAIRS))?;
        let noisy = inject_noise(&clean, &config.noise[0], Rng::derive_seed(seed, STREAM_NOISE))?;
        estimate_noise_rates(&points, &noisy, &noise_est_config(&config.noise_est, seed, 0))
    };
    with_pool(config.jobs, || config.seeds.par_iter().map(run).collect::<Result<Vec<_>>>())?
}

pub fn estimate_noise(config: &ExperimentConfig) -> Result<NoiseEstimateReport> {
    let per_seed = estimate_noise_per_seed(config)?;
    let n = per_seed.len() as f64;
    Ok(NoiseEstimateReport {
        eta_s_hat: per_seed.iter().map(|e| e.eta_s_hat).sum::<f64>() / n,
        eta_d_hat: per_seed.iter().map(|e| e.eta_d_hat).sum::<f64>() / n,
        seeds: config.seeds.clone(),
        top_k: config.noise_est.top_k,
    })
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Everything a method needs from one `(seed, fold, noise)` cell.
struct Cell<'a> {
    seed: u64,
    fold: usize,
    noise: NoiseSpec,
    train_points: &'a PointDataset,
    test_points: &'a PointDataset,
    pairs: &'a PairDataset,
    rates: (f64, f64),
    estimated: Option<RateEstimate>,
    pi_plus: f64,
}

fn resolve_mode(method: Method, config: &ExperimentConfig, cell: &Cell<'_>, priors: &Priors) -> Result<RiskMode> {
    let (eta_s, eta_d) = cell.rates;
    let conditional = || -> Result<RiskMode> {
        Ok(RiskMode::ConditionalRobust {
            c: scaling_constant(priors, eta_s, eta_d)?,
        })
    };
    match method {
        Method::Clean => Ok(RiskMode::Clean),
        Method::UniformRobust => Ok(RiskMode::UniformRobust),
        Method::ConditionalRobust => conditional(),
        Method::Lcnip => Ok(RiskMode::LcnipCorrected { eta_s, eta_d }),
        Method::Auto => match (config.rates, cell.noise) {
            (RateSource::Estimate, _) | (_, NoiseSpec::Conditional { .. }) => conditional(),
            _ => Ok(RiskMode::UniformRobust),
        },
    }
}

fn run_method(spec: &MethodSpec, config: &ExperimentConfig, cell: &Cell<'_>, slot: u64) -> Result<(f64, RiskMode, Vec<f64>)> {
    let (eta_s, eta_d) = cell.rates;
    let priors = Priors::derive(cell.pi_plus, &NoiseSpec::Conditional { eta_s, eta_d })?;
    let mode = resolve_mode(spec.method, config, cell, &priors)?;
    let mut dims = vec![cell.train_points.dim()];
    dims.extend(&config.hidden);
    dims.push(1);
    if config.hidden.is_empty() {
        dims = default_layer_dims(cell.train_points.dim());
    }
    let init = Mlp::init(&dims, Rng::derive_seed(cell.seed, STREAM_NET_INIT + slot))?;
    let mut tc = config.train.clone();
    tc.seed = Rng::derive_seed(cell.seed, STREAM_TRAIN + slot);
    let outcome = train(&init, cell.train_points, cell.pairs, &priors, spec.loss, &mode, &tc)?;
    let acc = evaluate_accuracy(&outcome.mlp, cell.test_points)?;
    Ok((acc, mode, outcome.trace))
}

fn failed(seed: u64, fold: usize, spec: &MethodSpec, noise: NoiseSpec, err: &Error) -> RunRecord {
    let (noise_s, noise_d) = noise.rates();
    RunRecord {
        seed,
        fold,
        method: spec.label.clone(),
        loss: spec.loss,
        noise,
        noise_s,
        noise_d,
        accuracy: None,
        error: Some(err.to_string()),
        rates_used: None,
        estimated_rates: None,
        pi_plus: None,
        risk_mode: None,
        pair_checksum: None,
        trace: Vec::new(),
    }
}

/// All runs of one `(seed, fold)` job, ordered by noise then method.
fn run_job(
    config: &ExperimentConfig,
    methods: &[MethodSpec],
    points: &PointDataset,
    fold_idx: usize,
    train_idx: &[usize],
    test_idx: &[usize],
    seed: u64,
) -> Vec<RunRecord> {
    let mut out = Vec::new();
    let fail_all = |out: &mut Vec<RunRecord>, noise: NoiseSpec, e: &Error| {
        for m in methods {
            out.push(failed(seed, fold_idx, m, noise, e));
        }
    };
    let split = (|| -> Result<(PointDataset, PointDataset, PairDataset)> {
        let train_raw = points.subset(train_idx)?;
        let test_raw = points.subset(test_idx)?;
        let (train_pts, test_pts) = if config.scale {
            let scaler = MinMaxScaler::fit(&train_raw);
            (scaler.transform(&train_raw)?, scaler.transform(&test_raw)?)
        } else {
            (train_raw, test_raw)
        };
        let n_pairs = config.n_pairs.unwrap_or(2 * train_pts.len());
        let clean = generate_pairs(
            &train_pts,
            n_pairs,
            Rng::derive_seed(seed, STREAM_PAIRS + fold_idx as u64),
        )?;
        Ok((train_pts, test_pts, clean))
    })();
    let (train_pts, test_pts, clean) = match split {
        Ok(v) => v,
        Err(e) => {
            for &noise in &config.noise {
                fail_all(&mut out, noise, &e);
            }
            return out;
        }
    };
    let needs_rates = methods.iter().any(|m| m.method.needs_rates(config.rates));
    for (g, &noise) in config.noise.iter().enumerate() {
        let slot = fold_idx as u64 + STREAM_GRID * g as u64;
        let prepared = (|| -> Result<Prepared> {
            let pairs = inject_noise(&clean, &noise, Rng::derive_seed(seed, STREAM_NOISE + slot))?;
            let (rates, estimated) = match config.rates {
                RateSource::Estimate if needs_rates => {
                    let est = estimate_noise_rates(
                        &train_pts,
                        &pairs,
                        &noise_est_config(&config.noise_est, seed, slot),
                    )?;
                    ((est.eta_s_hat, est.eta_d_hat), Some(est))
                }
                _ => (noise.rates(), None),
            };
            let pi_plus = match config.priors {
                PriorSource::Labels => train_pts.positive_fraction(),
                PriorSource::Fixed => config.pi_plus.unwrap_or(0.5),
                PriorSource::Estimate => estimate_pi_plus_from_sd(
                    &pairs,
                    &NoiseSpec::Conditional {
                        eta_s: rates.0,
                        eta_d: rates.1,
                    },
                )?,
            };
            Ok((pairs, rates, estimated, pi_plus))
        })();
        let (pairs, rates, estimated, pi_plus) = match prepared {
            Ok(v) => v,
            Err(e) => {
                fail_all(&mut out, noise, &e);
                continue;
            }
        };
        let checksum = pairs.checksum();
        let cell = Cell {
            seed,
            fold: fold_idx,
            noise,
            train_points: &train_pts,
            test_points: &test_pts,
            pairs: &pairs,
            rates,
            estimated,
            pi_plus,
        };
        for spec in methods {
            let (noise_s, noise_d) = noise.rates();
            match run_method(spec, config, &cell, slot) {
                Ok((acc, mode, trace)) => out.push(RunRecord {
                    seed,
                    fold: cell.fold,
                    method: spec.label.clone(),
                    loss: spec.loss,
                    noise,
                    noise_s,
                    noise_d,
                    accuracy: Some(acc),
                    error: None,
                    rates_used: Some(cell.rates),
                    estimated_rates: cell.estimated,
                    pi_plus: Some(cell.pi_plus),
                    risk_mode: Some(mode),
                    pair_checksum: Some(checksum.clone()),
                    trace,
                }),
                Err(e) => {
                    let mut r = failed(seed, fold_idx, spec, noise, &e);
                    r.pair_checksum = Some(checksum.clone());
                    out.push(r);
                }
            }
        }
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Groups runs by `(method, loss, noise)` in first-seen order.
pub fn summarize(runs: &[RunRecord]) -> Vec<MethodSummary> {
    let mut order: Vec<(String, LossKind, NoiseSpec)> = Vec::new();
    for r in runs {
        let key = (r.method.clone(), r.loss, r.noise);
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(method, loss, noise)| {
            let group: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.method == method && r.loss == loss && r.noise == noise)
                .collect();
            let mut per_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for r in &group {
                if let Some(a) = r.accuracy {
                    per_seed.entry(r.seed).or_default().push(a);
                }
            }
            let seed_means: Vec<(u64, f64)> = per_seed.iter().map(|(&s, v)| (s, mean(v))).collect();
            let values: Vec<f64> = seed_means.iter().map(|&(_, m)| m).collect();
            let completed = group.iter().filter(|r| r.accuracy.is_some()).count();
            MethodSummary {
                method,
                loss,
                noise,
                mean: (!values.is_empty()).then(|| mean(&values)),
                std: (!values.is_empty()).then(|| sample_std(&values)),
                seed_means,
                completed_runs: completed,
                failed_runs: group.len() - completed,
            }
        })
        .collect()
}

/// True when every method in each `(seed, fold, noise)` cell saw the same
/// pair file.
pub fn pairs_shared(runs: &[RunRecord]) -> bool {
    let mut seen: BTreeMap<(u64, usize, String), &str> = BTreeMap::new();
    for r in runs {
        if let Some(sum) = &r.pair_checksum {
            let key = (r.seed, r.fold, r.noise.to_string());
            match seen.get(&key) {
                Some(prev) if *prev != sum.as_str() => return false,
                Some(_) => {}
                None => {
                    seen.insert(key, sum.as_str());
                }
            }
        }
    }
    true
}

/// Runs `methods` over every seed, fold and noise setting.
pub fn run_experiment(config: &ExperimentConfig, methods: &[MethodSpec], command: &str) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let shared = if data_is_per_seed(&config.data) {
        None
    } else {
        Some(load_points(&config.data, 0)?)
    };
    let mut per_seed_points = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let points = match &shared {
            Some(p) => p.clone(),
            None => load_points(&config.data, seed)?,
        };
        if config.folds > points.len() {
            return Err(Error::Config(format!(
                "folds = {} exceeds the {} points",
                config.folds,
                points.len()
            )));
        }
        let folds = kfold_split(points.len(), config.folds, Rng::derive_seed(seed, STREAM_FOLDS))?;
        per_seed_points.push((seed, points, folds));
    }
    let jobs: Vec<(usize, usize)> = (0..per_seed_points.len())
        .flat_map(|s| (0..config.folds).map(move |f| (s, f)))
        .collect();
    let nested: Vec<Vec<RunRecord>> = with_pool(config.jobs, || {
        jobs.par_iter()
            .map(|&(s, f)| {
                let (seed, points, folds) = &per_seed_points[s];
                run_job(config, methods, points, f, &folds[f].train, &folds[f].test, *seed)
            })
            .collect()
    })?;
    let runs: Vec<RunRecord> = nested.into_iter().flatten().collect();
    let shared_ok = pairs_shared(&runs);
    if !shared_ok {
        return Err(Error::CheckFailed("methods consumed different pair files".into()));
    }
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config: config.clone(),
        complete: runs.iter().all(|r| r.error.is_none()),
        pairs_shared: shared_ok,
        summaries: summarize(&runs),
        runs,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

pub fn train_eval(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment(config, &config.train_eval_methods(), "train-eval")
}

pub fn compare(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment(config, &config.compare_methods(), "compare")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `report.json` and `raw.csv`, plus `comparison.csv` for compare.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let json = dir.join("report.json");
    write_text(&json, &report.to_json()?)?;
    written.push(json);
    let raw = dir.join("raw.csv");
    write_text(&raw, &report.raw_csv())?;
    written.push(raw);
    if report.command == "compare" {
        let cmp = dir.join("comparison.csv");
        write_text(&cmp, &report.comparison_csv()?)?;
        written.push(cmp);
    }
    Ok(written)
}
