use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdrisk::experiment::{
    self, parse_method_spec, parse_noise, DataSource, ExperimentConfig, ExperimentReport, Method,
    PriorSource, RateSource,
};
use sdrisk::identities;
use sdrisk::losses::LossKind;
use sdrisk::{Error, Result};

/// Learn binary classifiers from noisy similar/dissimilar pair labels.
#[derive(Parser)]
#[command(name = "sdrisk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw (optionally noisy) pairs from a dataset and write `pairs.csv`
    /// plus `pairs.meta.json`.
    Generate(Overrides),
    /// Estimate (η_S, η_D) from noisy pairs with the anchor-pair estimator.
    EstimateNoise(Overrides),
    /// Cross-validated training and evaluation of one method.
    TrainEval(Overrides),
    /// Several methods on identical folds, seeds and pairs.
    Compare(Overrides),
    /// Run the analytic identity suites and print PASS/FAIL per check.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Print passing checks too.
        #[arg(long)]
        verbose: bool,
    },
}

/// Config file plus flag overrides; flags win.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Point CSV with a header row.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, requires = "csv")]
    label_column: Option<String>,
    #[arg(long, requires = "csv")]
    positive_token: Option<String>,
    /// Synthetic Gaussians with this many points.
    #[arg(long, conflicts_with = "csv")]
    synthetic_n: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    mean_sep: Option<f64>,
    /// Class prior of the synthetic generator.
    #[arg(long)]
    synthetic_pi_plus: Option<f64>,
    #[arg(long)]
    n_pairs: Option<usize>,
    /// `none`, `uniform:0.4` (or `0.4`), `conditional:0.2,0.1`; repeat for a
    /// grid.
    #[arg(long)]
    noise: Vec<String>,
    /// `given` or `estimate`.
    #[arg(long)]
    rates: Option<String>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    method: Option<String>,
    /// `label:method:loss`; repeat for several (compare only).
    #[arg(long = "methods")]
    methods: Vec<String>,
    /// `labels`, `fixed` or `estimate`.
    #[arg(long)]
    priors: Option<String>,
    /// Class prior used when priors = fixed.
    #[arg(long)]
    pi_plus: Option<f64>,
    /// Skip min-max feature scaling.
    #[arg(long)]
    no_scale: bool,
    #[arg(long)]
    folds: Option<usize>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_ascii_lowercase()))
        .map_err(|_| Error::Config(format!("unknown {what} `{s}`")))
}

impl Overrides {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(path) = &self.csv {
            let (lc, pt) = match &c.data {
                DataSource::Csv {
                    label_column,
                    positive_token,
                    ..
                } => (label_column.clone(), positive_token.clone()),
                _ => (String::from("label"), String::from("1")),
            };
            c.data = DataSource::Csv {
                path: path.clone(),
                label_column: self.label_column.clone().unwrap_or(lc),
                positive_token: self.positive_token.clone().unwrap_or(pt),
            };
        }
        if let DataSource::Synthetic {
            n,
            dim,
            pi_plus,
            mean_sep,
            ..
        } = &mut c.data
        {
            if let Some(v) = self.synthetic_n {
                *n = v;
            }
            if let Some(v) = self.dim {
                *dim = v;
            }
            if let Some(v) = self.mean_sep {
                *mean_sep = v;
            }
            if let Some(v) = self.synthetic_pi_plus {
                *pi_plus = v;
            }
        }
        if self.n_pairs.is_some() {
            c.n_pairs = self.n_pairs;
        }
        if !self.noise.is_empty() {
            c.noise = self.noise.iter().map(|s| parse_noise(s)).collect::<Result<_>>()?;
        }
        if let Some(r) = &self.rates {
            c.rates = parse_enum::<RateSource>("rate source", r)?;
        }
        if let Some(l) = &self.loss {
            c.loss = l.parse::<LossKind>()?;
        }
        if let Some(m) = &self.method {
            c.method = m.parse::<Method>()?;
        }
        if !self.methods.is_empty() {
            c.methods = self
                .methods
                .iter()
                .map(|s| parse_method_spec(s, c.loss))
                .collect::<Result<_>>()?;
        }
        if let Some(p) = &self.priors {
            c.priors = parse_enum::<PriorSource>("prior source", p)?;
        }
        if let Some(p) = self.pi_plus {
            c.pi_plus = Some(p);
            if self.priors.is_none() {
                c.priors = PriorSource::Fixed;
            }
        }
        if self.no_scale {
            c.scale = false;
        }
        if let Some(k) = self.folds {
            c.folds = k;
        }
        if !self.seed.is_empty() {
            c.seeds = self.seed.clone();
        }
        if let Some(j) = self.jobs {
            c.jobs = j;
        }
        if let Some(e) = self.epochs {
            c.train.epochs = e;
        }
        if let Some(b) = self.batch_size {
            c.train.batch_size = b;
        }
        if let Some(lr) = self.lr {
            c.train.lr = lr;
        }
        if let Some(wd) = self.weight_decay {
            c.train.weight_decay = wd;
        }
        if let Some(k) = self.top_k {
            c.noise_est.top_k = k;
        }
        if self.out.is_some() {
            c.output_dir = self.out.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn print_summaries(report: &ExperimentReport) {
    for s in &report.summaries {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
        println!(
            "{:<20} {:<16} {:<24} {} ± {}  ({} runs, {} failed)",
            s.method,
            s.loss.to_string(),
            s.noise.to_string(),
            fmt(s.mean),
            fmt(s.std),
            s.completed_runs,
            s.failed_runs
        );
    }
}

fn finish_report(report: &ExperimentReport, config: &ExperimentConfig) -> Result<()> {
    print_summaries(report);
    if let Some(dir) = &config.output_dir {
        for p in experiment::write_report(report, dir)? {
            eprintln!("wrote {}", p.display());
        }
    }
    if !report.complete {
        let failed = report.runs.iter().filter(|r| r.error.is_some()).count();
        return Err(Error::Training(format!(
            "{failed} of {} runs failed; the report is partial",
            report.runs.len()
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(o) => {
            let c = o.build()?;
            let (points, pairs) = experiment::generate_pair_file(&c)?;
            let dir = c.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.as_path(), e))?;
            let csv = dir.join("pairs.csv");
            pairs.write_csv(&csv)?;
            let meta = dir.join("pairs.meta.json");
            let json = serde_json::to_string_pretty(&pairs.metadata()).map_err(|e| Error::State(e.to_string()))?;
            experiment::write_text(&meta, &(json + "\n"))?;
            for w in &pairs.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{} pairs over {} points, noise {}, similar fraction {:.4}",
                pairs.len(),
                points.len(),
                pairs.noise_applied,
                pairs.similar_fraction()
            );
            eprintln!("wrote {} and {}", csv.display(), meta.display());
            Ok(())
        }
        Command::EstimateNoise(o) => {
            let c = o.build()?;
            let est = experiment::estimate_noise(&c)?;
            let json = serde_json::to_string_pretty(&est).map_err(|e| Error::State(e.to_string()))?;
            println!("{json}");
            if let Some(dir) = &c.output_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.as_path(), e))?;
                experiment::write_text(&dir.join("noise_estimate.json"), &(json + "\n"))?;
            }
            Ok(())
        }
        Command::TrainEval(o) => {
            let c = o.build()?;
            let report = experiment::train_eval(&c)?;
            finish_report(&report, &c)
        }
        Command::Compare(o) => {
            let c = o.build()?;
            let report = experiment::compare(&c)?;
            finish_report(&report, &c)
        }
        Command::Check { seed, verbose } => {
            let outcomes = identities::run_all(seed)?;
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            for o in &outcomes {
                if verbose || !o.passed {
                    println!(
                        "{} {} (metric {:.3e}, tolerance {:.0e}) {}",
                        if o.passed { "PASS" } else { "FAIL" },
                        o.name,
                        o.metric,
                        o.tolerance,
                        o.detail
                    );
                }
            }
            let suites = ["symmetry", "uniform_identity", "conditional_affine", "backward_unbiased", "gradient"];
            for suite in suites {
                let group: Vec<_> = outcomes.iter().filter(|o| o.name.starts_with(suite)).collect();
                let ok = group.iter().all(|o| o.passed);
                println!("{} {suite} ({} checks)", if ok { "PASS" } else { "FAIL" }, group.len());
            }
            if failed > 0 {
                return Err(Error::CheckFailed(format!("{failed} identity checks failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
