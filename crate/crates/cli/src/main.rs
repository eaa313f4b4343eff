//! `lmo`: search, account, sample, compare, quantify and train from the
//! command line, with reproducible JSON/CSV/SVG artifacts.

mod formats;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use lmo_core::accountant::{lmo_curve, to_dp, AccountantError, PrivacyBudget};
use lmo_core::analysis::{ablation_compare, compare_noises, quantify_space, AblationVariant, AnalysisError};
use lmo_core::dpsgd::{evaluate, make_blobs, train_traced, Dataset, NoiseBackend, TrainConfig, TrainError};
use lmo_core::metrics::{bin_edges, histogram};
use lmo_core::sampler::{sample_gaussian_noise, sample_lmo_noise, NoiseRng};
use lmo_core::search::{search_optimal, SearchError, SearchGrid};
use lmo_core::MixtureSpec;

use formats::{csv_num, load_dataset_csv, load_spec, timestamp, write_csv, write_json_pretty, write_manifest, SearchResultFile};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Search(SearchError),
    #[error("{0}")]
    Accountant(AccountantError),
    #[error("{0}")]
    Analysis(AnalysisError),
    #[error("{0}")]
    Train(TrainError),
}

macro_rules! from_core_error {
    ($variant:ident, $ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::$variant(e)
            }
        }
    };
}

from_core_error!(Search, SearchError);
from_core_error!(Accountant, AccountantError);
from_core_error!(Analysis, AnalysisError);
from_core_error!(Train, TrainError);

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
            CliError::Schema(_) => "schema",
            CliError::Validation(_) => "validation",
            CliError::Config(_) => "config",
            CliError::Search(_) => "search",
            CliError::Accountant(_) => "accountant",
            CliError::Analysis(_) => "analysis",
            CliError::Train(_) => "train",
        }
    }

    /// 2 marks "no feasible candidate"; everything else is a usage/IO error.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Search(SearchError::NoFeasibleCandidate)
            | CliError::Analysis(AnalysisError::Search(SearchError::NoFeasibleCandidate)) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "lmo", version, about = "Two-fold Laplace noise toolkit")]
struct Cli {
    /// Output directory (the LMO_OUT_DIR environment variable overrides it)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid-search the noise space and persist the best candidate
    Search {
        /// Grid configuration (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Override the grid's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print and persist the RDP curve and total epsilon of a stored spec
    Account {
        /// Search-result file or bare noise spec (JSON)
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        sensitivity: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 128)]
        alpha_max: u32,
    },
    /// Draw raw noise as CSV (one column per coordinate) or a histogram JSON
    Sample {
        /// Search-result file or bare noise spec (JSON)
        #[arg(long, conflicts_with = "sigma")]
        spec: Option<PathBuf>,
        /// Sample a Gaussian baseline instead of a spec
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Samples per coordinate
        #[arg(long)]
        num: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Emit a histogram summary with this many bins instead of raw CSV
        #[arg(long)]
        histogram: Option<usize>,
    },
    /// Matched-budget comparison against the calibrated Gaussian (CSV + SVG)
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Multinomial-reference quantification of the noise space (CSV)
    Quantify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// DP-SGD training run: ledger JSON plus a per-step metrics CSV
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn out_dir(flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = match std::env::var_os("LMO_OUT_DIR") {
        Some(env) => PathBuf::from(env),
        None => flag
            .clone()
            .ok_or_else(|| CliError::Config("no output directory: pass --out or set LMO_OUT_DIR".to_string()))?,
    };
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, serde_json::Value), CliError> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let parsed = serde_json::from_value(value.clone())?;
    Ok((parsed, value))
}

fn cmd_search(out: &Path, config: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let (mut grid, _): (SearchGrid, _) = read_json(config)?;
    if let Some(seed) = seed {
        grid.seed = seed;
    }
    let effective = serde_json::to_value(&grid)?;
    let result = search_optimal(&grid)?;
    let file = SearchResultFile::from_result(result, &grid, timestamp());
    file.save(&out.join("search_result.json"))?;
    write_manifest(out, "search", effective, grid.seed)?;
    println!(
        "best candidate: eps_total={} (alpha={}), usefulness={}",
        file.eps_total, file.argmin_alpha, file.usefulness
    );
    Ok(())
}

#[derive(Serialize)]
struct AccountOutput {
    spec: MixtureSpec,
    sensitivity: f64,
    steps: u64,
    delta: f64,
    per_step: lmo_core::RdpCurve,
    composed: lmo_core::RdpCurve,
    eps_total: f64,
    argmin_alpha: f64,
}

fn cmd_account(
    out: &Path,
    spec_path: &Path,
    sensitivity: f64,
    steps: u64,
    delta: f64,
    alpha_max: u32,
) -> Result<(), CliError> {
    let spec = load_spec(spec_path)?;
    let per_step = lmo_curve(&spec, sensitivity, alpha_max)?;
    let composed = per_step.composed_over(steps);
    let (eps_total, argmin_alpha) = to_dp(&composed, delta)?;
    let rows: Vec<Vec<String>> = per_step
        .entries()
        .iter()
        .zip(composed.entries())
        .map(|(&(alpha, e1), &(_, et))| vec![csv_num(alpha), csv_num(e1), csv_num(et)])
        .collect();
    write_csv(&out.join("account.csv"), "alpha,eps_step,eps_composed", &rows)?;
    let output = AccountOutput {
        spec,
        sensitivity,
        steps,
        delta,
        per_step,
        composed,
        eps_total,
        argmin_alpha,
    };
    write_json_pretty(&out.join("account.json"), &output)?;
    let config = serde_json::json!({
        "spec_file": spec_path.display().to_string(),
        "sensitivity": sensitivity,
        "steps": steps,
        "delta": delta,
        "alpha_max": alpha_max,
    });
    write_manifest(out, "account", config, 0)?;
    for &(alpha, eps) in output.composed.entries() {
        println!("alpha={alpha} eps={eps}");
    }
    println!("total epsilon {} at alpha {} (delta {})", eps_total, argmin_alpha, delta);
    Ok(())
}

#[derive(Serialize)]
struct HistogramOutput {
    edges: Vec<f64>,
    masses: Vec<f64>,
    num: usize,
    dim: usize,
    seed: u64,
}

fn cmd_sample(
    out: &Path,
    spec_path: &Option<PathBuf>,
    sigma: Option<f64>,
    dim: usize,
    num: usize,
    seed: u64,
    hist_bins: Option<usize>,
) -> Result<(), CliError> {
    if dim == 0 || num == 0 {
        return Err(CliError::Config("dim and num must be at least 1".to_string()));
    }
    let spec = match (spec_path, sigma) {
        (Some(path), None) => Some(load_spec(path)?),
        (None, Some(_)) => None,
        _ => {
            return Err(CliError::Config(
                "pass exactly one of --spec and --sigma".to_string(),
            ))
        }
    };
    // one stream per coordinate
    let columns: Vec<Vec<f64>> = (0..dim)
        .map(|j| {
            let mut rng = NoiseRng::new(seed, j as u64);
            match (&spec, sigma) {
                (Some(spec), _) => sample_lmo_noise(spec, num, &mut rng),
                (None, Some(sigma)) => sample_gaussian_noise(sigma, num, &mut rng),
                _ => unreachable!(),
            }
        })
        .collect();
    if let Some(bins) = hist_bins {
        let all: Vec<f64> = columns.iter().flatten().copied().collect();
        let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let edges = if hi > lo {
            bin_edges(lo, hi, bins)
        } else {
            bin_edges(lo - 0.5, lo + 0.5, bins)
        };
        let masses = histogram(&all, &edges).map_err(AnalysisError::from)?;
        write_json_pretty(
            &out.join("histogram.json"),
            &HistogramOutput { edges, masses, num, dim, seed },
        )?;
    } else {
        let header: Vec<String> = (0..dim).map(|j| format!("c{j}")).collect();
        let rows: Vec<Vec<String>> = (0..num)
            .map(|i| columns.iter().map(|col| csv_num(col[i])).collect())
            .collect();
        write_csv(&out.join("samples.csv"), &header.join(","), &rows)?;
    }
    let config = serde_json::json!({
        "spec_file": spec_path.as_ref().map(|p| p.display().to_string()),
        "sigma": sigma,
        "dim": dim,
        "num": num,
        "seed": seed,
        "histogram": hist_bins,
    });
    write_manifest(out, "sample", config, seed)?;
    println!("wrote {num} samples x {dim} coordinates");
    Ok(())
}

fn default_compare_n() -> usize {
    1_000_000
}

fn default_sensitivity() -> f64 {
    1.0
}

fn default_steps() -> u64 {
    1
}

fn default_alpha_max() -> u32 {
    128
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CompareConfig {
    eps_list: Vec<f64>,
    delta: f64,
    #[serde(default = "default_sensitivity")]
    sensitivity: f64,
    #[serde(default = "default_compare_n")]
    n: usize,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_steps")]
    steps: u64,
    #[serde(default = "default_alpha_max")]
    alpha_max: u32,
    /// Restrict the searched families and compare against the full search
    /// instead of the Gaussian.
    #[serde(default)]
    ablation: Option<AblationVariant>,
    /// Grid template; the shipped default grid when absent.
    #[serde(default)]
    grid: Option<SearchGrid>,
}

fn template_grid(cfg: &CompareConfig) -> Result<SearchGrid, CliError> {
    if let Some(grid) = &cfg.grid {
        return Ok(grid.clone());
    }
    let budget = PrivacyBudget::new(cfg.eps_list[0], cfg.delta)?;
    let mut grid = SearchGrid::default_grid(budget, cfg.sensitivity, cfg.steps);
    grid.alpha_max = cfg.alpha_max;
    grid.seed = cfg.seed;
    Ok(grid)
}

const COMPARE_HEADER: &str = "eps,delta,sigma,mean_abs_lmo,mean_abs_gauss,reduction_rate,\
entropy_lmo,entropy_gauss,var_lmo,var_gauss";

fn cmd_compare(out: &Path, config: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let (mut cfg, _): (CompareConfig, _) = read_json(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if cfg.eps_list.is_empty() {
        return Err(CliError::Config("eps_list must be non-empty".to_string()));
    }
    let effective = serde_json::to_value(&cfg)?;
    let grid = template_grid(&cfg)?;
    let report = match cfg.ablation {
        None => compare_noises(&cfg.eps_list, cfg.delta, cfg.sensitivity, &grid, cfg.n, cfg.seed)?,
        Some(variant) => ablation_compare(
            &grid,
            variant,
            &cfg.eps_list,
            cfg.delta,
            cfg.sensitivity,
            cfg.n,
            cfg.seed,
        )?,
    };
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                csv_num(r.eps),
                csv_num(r.delta),
                csv_num(r.sigma),
                csv_num(r.mean_abs_lmo),
                csv_num(r.mean_abs_gauss),
                csv_num(r.reduction_rate),
                csv_num(r.entropy_lmo),
                csv_num(r.entropy_gauss),
                csv_num(r.var_lmo),
                csv_num(r.var_gauss),
            ]
        })
        .collect();
    write_csv(&out.join("compare.csv"), COMPARE_HEADER, &rows)?;
    write_json_pretty(&out.join("compare.json"), &report)?;
    let svg = plot::line_chart(
        "mean absolute noise vs per-step epsilon",
        "eps",
        "mean |noise|",
        &[
            plot::Series {
                label: "searched",
                color: "#1f77b4",
                points: report.rows.iter().map(|r| (r.eps, r.mean_abs_lmo)).collect(),
            },
            plot::Series {
                label: "baseline",
                color: "#d62728",
                points: report.rows.iter().map(|r| (r.eps, r.mean_abs_gauss)).collect(),
            },
        ],
    );
    fs::write(out.join("compare.svg"), svg)?;
    write_manifest(out, "compare", effective, cfg.seed)?;
    for r in &report.rows {
        println!("eps={} reduction_rate={}", r.eps, r.reduction_rate);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuantifyConfig {
    #[serde(default)]
    spec: Option<MixtureSpec>,
    #[serde(default)]
    spec_file: Option<PathBuf>,
    qs: Vec<f64>,
    ks: Vec<usize>,
    m: usize,
    #[serde(default = "default_seed")]
    seed: u64,
}

const QUANTIFY_HEADER: &str = "q,k,kl,l2,emd,kl_paired,l2_paired,emd_paired,mu_sim,sigma_sim";

fn cmd_quantify(out: &Path, config: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let (mut cfg, _): (QuantifyConfig, _) = read_json(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let spec = match (&cfg.spec, &cfg.spec_file) {
        (Some(spec), None) => spec.clone(),
        (None, Some(path)) => load_spec(path)?,
        _ => {
            return Err(CliError::Config(
                "pass exactly one of spec and spec_file".to_string(),
            ))
        }
    };
    let effective = serde_json::to_value(&cfg)?;
    let report = quantify_space(&spec, &cfg.qs, &cfg.ks, cfg.m, cfg.seed)?;
    let rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            vec![
                csv_num(c.q),
                c.k.to_string(),
                csv_num(c.kl),
                csv_num(c.l2),
                csv_num(c.emd),
                csv_num(c.kl_paired),
                csv_num(c.l2_paired),
                csv_num(c.emd_paired),
                csv_num(c.mu_sim),
                csv_num(c.sigma_sim),
            ]
        })
        .collect();
    write_csv(&out.join("quantify.csv"), QUANTIFY_HEADER, &rows)?;
    write_json_pretty(&out.join("quantify.json"), &report)?;
    write_manifest(out, "quantify", effective, cfg.seed)?;
    for c in &report.cells {
        println!("q={} k={} emd={}", c.q, c.k, c.emd);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlobsSpec {
    n: usize,
    d: usize,
    offset: f64,
    sigma: f64,
    seed: u64,
}

/// Noise selection in the train config; `lmo` accepts either an inline spec
/// or a path to a search-result file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NoiseChoice {
    None,
    Gaussian {
        sigma: f64,
    },
    Lmo {
        #[serde(default)]
        spec: Option<MixtureSpec>,
        #[serde(default)]
        spec_file: Option<PathBuf>,
    },
}

fn default_train_alpha_max() -> u32 {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainCliConfig {
    #[serde(default)]
    dataset: Option<PathBuf>,
    #[serde(default)]
    blobs: Option<BlobsSpec>,
    steps: u64,
    batch: usize,
    lr: f64,
    clip: f64,
    delta: f64,
    #[serde(default = "default_train_alpha_max")]
    alpha_max: u32,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default)]
    amplified: bool,
    noise: NoiseChoice,
}

fn cmd_train(out: &Path, config: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let (mut cfg, _): (TrainCliConfig, _) = read_json(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let effective = serde_json::to_value(&cfg)?;
    let dataset: Dataset = match (&cfg.dataset, &cfg.blobs) {
        (Some(path), None) => load_dataset_csv(path)?,
        (None, Some(b)) => make_blobs(b.n, b.d, b.offset, b.sigma, b.seed),
        _ => {
            return Err(CliError::Config(
                "pass exactly one of dataset and blobs".to_string(),
            ))
        }
    };
    let noise = match &cfg.noise {
        NoiseChoice::None => NoiseBackend::None,
        NoiseChoice::Gaussian { sigma } => NoiseBackend::Gaussian { sigma: *sigma },
        NoiseChoice::Lmo { spec, spec_file } => {
            let spec = match (spec, spec_file) {
                (Some(spec), None) => spec.clone(),
                (None, Some(path)) => load_spec(path)?,
                _ => {
                    return Err(CliError::Config(
                        "pass exactly one of noise.spec and noise.spec_file".to_string(),
                    ))
                }
            };
            NoiseBackend::Lmo { spec }
        }
    };
    let train_cfg = TrainConfig {
        steps: cfg.steps,
        batch: cfg.batch,
        lr: cfg.lr,
        clip: cfg.clip,
        noise,
        delta: cfg.delta,
        alpha_max: cfg.alpha_max,
        seed: cfg.seed,
        amplified: cfg.amplified,
    };
    let mut snapshots: Vec<Vec<f64>> = Vec::with_capacity(cfg.steps as usize);
    let (params, ledger) = train_traced(&dataset, &train_cfg, &mut |_, p| {
        snapshots.push(p.to_vec());
    })?;

    // per-step metrics; cumulative eps composes the identical per-step
    // curves over the number of non-empty batches so far
    let mut rows = Vec::with_capacity(snapshots.len());
    let mut executed = 0u64;
    for (step, snap) in snapshots.iter().enumerate() {
        if ledger.batch_sizes[step] > 0 {
            executed += 1;
        }
        let (accuracy, loss) = evaluate(snap, &dataset)?;
        let eps = match ledger.per_step.first() {
            Some(curve) if executed > 0 => {
                let (eps, _) = to_dp(&curve.composed_over(executed), cfg.delta)?;
                csv_num(eps)
            }
            _ => String::new(),
        };
        rows.push(vec![step.to_string(), csv_num(loss), csv_num(accuracy), eps]);
    }
    write_csv(&out.join("metrics.csv"), "step,loss,accuracy,eps", &rows)?;
    write_json_pretty(&out.join("ledger.json"), &ledger)?;
    write_json_pretty(&out.join("params.json"), &params)?;
    write_manifest(out, "train", effective, cfg.seed)?;
    let (accuracy, loss) = evaluate(&params, &dataset)?;
    match ledger.eps_total {
        Some(eps) => println!(
            "final accuracy {} loss {} at total epsilon {} (delta {})",
            accuracy, loss, eps, ledger.delta
        ),
        None => println!("final accuracy {} loss {} (non-private run)", accuracy, loss),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let out = out_dir(&cli.out)?;
    match &cli.command {
        Command::Search { config, seed } => cmd_search(&out, config, *seed),
        Command::Account { spec, sensitivity, steps, delta, alpha_max } => {
            cmd_account(&out, spec, *sensitivity, *steps, *delta, *alpha_max)
        }
        Command::Sample { spec, sigma, dim, num, seed, histogram } => {
            cmd_sample(&out, spec, *sigma, *dim, *num, *seed, *histogram)
        }
        Command::Compare { config, seed } => cmd_compare(&out, config, *seed),
        Command::Quantify { config, seed } => cmd_quantify(&out, config, *seed),
        Command::Train { config, seed } => cmd_train(&out, config, *seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({
                "error": err.kind(),
                "message": err.to_string(),
            });
            eprintln!("{payload}");
            ExitCode::from(err.exit_code())
        }
    }
}
