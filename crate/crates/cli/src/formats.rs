//! On-disk artifact formats: the versioned search-result file, run
//! manifests, CSV tables and the dataset loader.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lmo_core::accountant::PrivacyBudget;
use lmo_core::dpsgd::{Dataset, TrainError};
use lmo_core::search::{BudgetScope, SearchGrid, SearchResult};
use lmo_core::{MixtureSpec, RdpCurve};

use crate::CliError;

pub const SEARCH_RESULT_VERSION: u32 = 1;

/// The search parameters a result must be interpreted against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchContext {
    pub sensitivity: f64,
    pub steps: u64,
    pub budget_scope: BudgetScope,
    pub budget: PrivacyBudget,
}

/// Persisted search result: the winning spec plus its accounting evidence
/// and enough context to validate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResultFile {
    pub version: u32,
    pub spec: MixtureSpec,
    pub curve: RdpCurve,
    pub eps_total: f64,
    pub argmin_alpha: f64,
    pub usefulness: f64,
    pub grid_fingerprint: String,
    pub seed: u64,
    pub created_at: String,
    pub context: SearchContext,
}

impl SearchResultFile {
    pub fn from_result(result: SearchResult, grid: &SearchGrid, created_at: String) -> Self {
        SearchResultFile {
            version: SEARCH_RESULT_VERSION,
            spec: result.spec,
            curve: result.curve,
            eps_total: result.eps_total,
            argmin_alpha: result.argmin_alpha,
            usefulness: result.usefulness,
            grid_fingerprint: result.grid_fingerprint,
            seed: result.seed,
            created_at,
            context: SearchContext {
                sensitivity: grid.sensitivity,
                steps: grid.steps,
                budget_scope: grid.budget_scope,
                budget: grid.budget,
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_json_pretty(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let version = value.get("version").and_then(|v| v.as_u64());
        match version {
            Some(v) if v == SEARCH_RESULT_VERSION as u64 => {}
            other => {
                return Err(CliError::Schema(format!(
                    "unsupported search result version {:?} (expected {})",
                    other, SEARCH_RESULT_VERSION
                )))
            }
        }
        let file: SearchResultFile = serde_json::from_value(value)?;
        if file.eps_total > file.context.budget.eps {
            return Err(CliError::Validation(format!(
                "eps_total {} exceeds the stored budget eps {}",
                file.eps_total, file.context.budget.eps
            )));
        }
        Ok(file)
    }
}

/// Accept either a full search-result file or a bare noise spec.
pub fn load_spec(path: &Path) -> Result<MixtureSpec, CliError> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("version").is_some() {
        Ok(SearchResultFile::load(path)?.spec)
    } else {
        Ok(serde_json::from_value(value)?)
    }
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// ISO-8601 creation stamp; the `LMO_CREATED_AT` environment variable
/// overrides the clock so runs can be byte-identical.
pub fn timestamp() -> String {
    if let Ok(stamp) = std::env::var("LMO_CREATED_AT") {
        return stamp;
    }
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Per-run manifest: enough to rerun the command exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub versions: ManifestVersions,
    pub seed: u64,
    pub created_at: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestVersions {
    pub core: String,
    pub cli: String,
}

pub fn write_manifest(
    out_dir: &Path,
    subcommand: &str,
    config: serde_json::Value,
    seed: u64,
) -> Result<(), CliError> {
    let canonical = serde_json::to_string(&config)?;
    let digest = hex::encode(Sha256::digest(canonical.as_bytes()));
    let manifest = Manifest {
        subcommand: subcommand.to_string(),
        config,
        config_sha256: digest,
        versions: ManifestVersions {
            core: lmo_core::VERSION.to_string(),
            cli: env!("CARGO_PKG_VERSION").to_string(),
        },
        seed,
        created_at: timestamp(),
    };
    write_json_pretty(&out_dir.join("manifest.json"), &manifest)
}

/// Render one float the way Rust's shortest round-trip formatter does;
/// non-finite values become empty cells.
pub fn csv_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Headered CSV with the label in column `y` and numeric features in every
/// other column (kept in file order).
pub fn load_dataset_csv(path: &Path) -> Result<Dataset, CliError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config("empty dataset file".to_string()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let y_col = columns
        .iter()
        .position(|&c| c == "y")
        .ok_or_else(|| CliError::Config("dataset is missing a 'y' column".to_string()))?;
    let d = columns.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(CliError::Config(format!(
                "dataset row {} has {} cells, expected {}",
                row_idx + 2,
                cells.len(),
                columns.len()
            )));
        }
        for (i, cell) in cells.iter().enumerate() {
            if i == y_col {
                let label: usize = cell.parse().map_err(|_| {
                    CliError::Config(format!("bad label {cell:?} in row {}", row_idx + 2))
                })?;
                labels.push(label);
            } else {
                let x: f64 = cell.parse().map_err(|_| {
                    CliError::Config(format!("bad feature {cell:?} in row {}", row_idx + 2))
                })?;
                features.push(x);
            }
        }
    }
    Dataset::new(features, labels, d, path.display().to_string()).map_err(|e: TrainError| {
        CliError::Config(format!("invalid dataset: {e}"))
    })
}
