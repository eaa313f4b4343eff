//! Reproduction harnesses: searched-noise vs Gaussian comparison, ablations
//! over the component families, and the search-space quantification table.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::accountant::{calibrate_gaussian, AccountantError, PrivacyBudget};
use crate::metrics::{
    bin_edges, emd_1d, empirical_entropy_with_edges, histogram, kl, l2, percentile, MetricError,
};
use crate::mgf::MixtureSpec;
use crate::sampler::{sample_gaussian_noise, sample_lmo_noise, NoiseRng};
use crate::search::{search_optimal, SearchError, SearchGrid};

pub use crate::quadrature::renyi_divergence_numeric;

const ENTROPY_BINS: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum AnalysisError {
    Search(SearchError),
    Accountant(AccountantError),
    Metric(MetricError),
    /// 1/q is not an integer.
    InvalidQuantization(f64),
    /// Fewer samples than the harness contract allows.
    TooFewSamples { n: usize, min: usize },
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisError::Search(e) => write!(f, "{e}"),
            AnalysisError::Accountant(e) => write!(f, "{e}"),
            AnalysisError::Metric(e) => write!(f, "{e}"),
            AnalysisError::InvalidQuantization(q) => {
                write!(f, "1/q must be an integer, got q = {q}")
            }
            AnalysisError::TooFewSamples { n, min } => {
                write!(f, "need at least {min} samples, got {n}")
            }
        }
    }
}

impl From<SearchError> for AnalysisError {
    fn from(e: SearchError) -> Self {
        AnalysisError::Search(e)
    }
}
impl From<AccountantError> for AnalysisError {
    fn from(e: AccountantError) -> Self {
        AnalysisError::Accountant(e)
    }
}
impl From<MetricError> for AnalysisError {
    fn from(e: MetricError) -> Self {
        AnalysisError::Metric(e)
    }
}

/// One matched-budget comparison between the searched noise and a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub eps: f64,
    pub delta: f64,
    pub spec: MixtureSpec,
    /// Calibrated Gaussian sigma; 0 in ablation rows, where the baseline is
    /// the full three-family search rather than a Gaussian.
    pub sigma: f64,
    pub mean_abs_lmo: f64,
    pub mean_abs_gauss: f64,
    pub reduction_rate: f64,
    pub entropy_lmo: f64,
    pub entropy_gauss: f64,
    pub var_lmo: f64,
    pub var_gauss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub n: usize,
    pub seed: u64,
}

fn mean_abs(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x.abs()).sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// Entropies of both sample sets on one shared 1024-bin grid spanning the
/// pooled 0.1-99.9 percentile range.
fn shared_entropies(a: &[f64], b: &[f64]) -> Result<(f64, f64), MetricError> {
    let mut pooled = Vec::with_capacity(a.len() + b.len());
    pooled.extend_from_slice(a);
    pooled.extend_from_slice(b);
    let lo = percentile(&pooled, 0.1)?;
    let hi = percentile(&pooled, 99.9)?;
    let edges = if hi > lo {
        bin_edges(lo, hi, ENTROPY_BINS)
    } else {
        bin_edges(lo - 0.5, lo + 0.5, ENTROPY_BINS)
    };
    Ok((
        empirical_entropy_with_edges(a, &edges)?,
        empirical_entropy_with_edges(b, &edges)?,
    ))
}

fn comparison_row(
    eps: f64,
    delta: f64,
    spec: MixtureSpec,
    sigma: f64,
    lmo: &[f64],
    base: &[f64],
) -> Result<ComparisonRow, MetricError> {
    let mean_abs_lmo = mean_abs(lmo);
    let mean_abs_gauss = mean_abs(base);
    let (entropy_lmo, entropy_gauss) = shared_entropies(lmo, base)?;
    Ok(ComparisonRow {
        eps,
        delta,
        spec,
        sigma,
        mean_abs_lmo,
        mean_abs_gauss,
        reduction_rate: 1.0 - mean_abs_lmo / mean_abs_gauss,
        entropy_lmo,
        entropy_gauss,
        var_lmo: variance(lmo),
        var_gauss: variance(base),
    })
}

const MIN_COMPARE_SAMPLES: usize = 100_000;

/// For each per-step eps: search the grid, calibrate a Gaussian to the same
/// budget, draw `n` samples of each and summarize.
pub fn compare_noises(
    eps_list: &[f64],
    delta: f64,
    c: f64,
    template: &SearchGrid,
    n: usize,
    seed: u64,
) -> Result<ComparisonReport, AnalysisError> {
    if n < MIN_COMPARE_SAMPLES {
        return Err(AnalysisError::TooFewSamples { n, min: MIN_COMPARE_SAMPLES });
    }
    let mut rows = Vec::with_capacity(eps_list.len());
    for (i, &eps) in eps_list.iter().enumerate() {
        let budget = PrivacyBudget::new(eps, delta)?;
        let mut grid = template.clone();
        grid.budget = budget;
        grid.sensitivity = c;
        let found = search_optimal(&grid)?;
        // the baseline is per-step noise, hence one composition step
        let sigma = calibrate_gaussian(budget, c, 1, grid.alpha_max)?;
        let lmo = sample_lmo_noise(&found.spec, n, &mut NoiseRng::new(seed, 4 * i as u64));
        let gauss =
            sample_gaussian_noise(c * sigma, n, &mut NoiseRng::new(seed, 4 * i as u64 + 1));
        rows.push(comparison_row(eps, delta, found.spec, sigma, &lmo, &gauss)?);
    }
    Ok(ComparisonReport { rows, n, seed })
}

/// Component-family restrictions for the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    GammaOnly,
    ExpOnly,
    UniformOnly,
}

/// `template` with the weight lists restricted to one component family
/// (or returned unchanged for [`AblationVariant::Full`]).
pub fn restrict_grid(template: &SearchGrid, variant: AblationVariant) -> SearchGrid {
    let mut grid = template.clone();
    let only_zero = alloc::vec![0.0];
    let nonzero = |list: &[f64]| -> Vec<f64> {
        let v: Vec<f64> = list.iter().cloned().filter(|&w| w > 0.0).collect();
        if v.is_empty() {
            alloc::vec![1.0]
        } else {
            v
        }
    };
    match variant {
        AblationVariant::Full => {}
        AblationVariant::GammaOnly => {
            grid.weights_gamma = nonzero(&template.weights_gamma);
            grid.weights_exp = only_zero.clone();
            grid.weights_uniform = only_zero;
        }
        AblationVariant::ExpOnly => {
            grid.weights_gamma = only_zero.clone();
            grid.weights_exp = nonzero(&template.weights_exp);
            grid.weights_uniform = only_zero;
        }
        AblationVariant::UniformOnly => {
            grid.weights_gamma = only_zero.clone();
            grid.weights_exp = only_zero;
            grid.weights_uniform = nonzero(&template.weights_uniform);
        }
    }
    grid
}

/// Search restricted to `variant`, compared against the unrestricted search
/// at the same budgets. The baseline columns of each row hold the full
/// search's noise (sigma is 0: no Gaussian is involved).
pub fn ablation_compare(
    template: &SearchGrid,
    variant: AblationVariant,
    eps_list: &[f64],
    delta: f64,
    c: f64,
    n: usize,
    seed: u64,
) -> Result<ComparisonReport, AnalysisError> {
    if n < MIN_COMPARE_SAMPLES {
        return Err(AnalysisError::TooFewSamples { n, min: MIN_COMPARE_SAMPLES });
    }
    let restricted = restrict_grid(template, variant);
    let mut rows = Vec::with_capacity(eps_list.len());
    for (i, &eps) in eps_list.iter().enumerate() {
        let budget = PrivacyBudget::new(eps, delta)?;
        let mut var_grid = restricted.clone();
        var_grid.budget = budget;
        var_grid.sensitivity = c;
        let mut full_grid = template.clone();
        full_grid.budget = budget;
        full_grid.sensitivity = c;
        let var_found = search_optimal(&var_grid)?;
        let full_found = search_optimal(&full_grid)?;
        let var_noise =
            sample_lmo_noise(&var_found.spec, n, &mut NoiseRng::new(seed, 4 * i as u64));
        let full_noise =
            sample_lmo_noise(&full_found.spec, n, &mut NoiseRng::new(seed, 4 * i as u64 + 1));
        // variant in the "lmo" columns, full search in the baseline columns
        rows.push(comparison_row(eps, delta, var_found.spec, 0.0, &var_noise, &full_noise)?);
    }
    Ok(ComparisonReport { rows, n, seed })
}

/// One (q, k) cell of the quantification table: pooled-histogram distances
/// (primary) and index-paired averages (secondary), with the matching
/// moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantifyCell {
    pub q: f64,
    pub k: usize,
    pub kl: f64,
    pub l2: f64,
    pub emd: f64,
    pub kl_paired: f64,
    pub l2_paired: f64,
    pub emd_paired: f64,
    pub mu_sim: f64,
    pub sigma_sim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantifyReport {
    pub cells: Vec<QuantifyCell>,
    pub m: usize,
    pub seed: u64,
}

/// Multinomial(n_trials, k, p = 1/k) normalized to a probability vector.
fn multinomial_pdf(n_trials: usize, k: usize, rng: &mut NoiseRng) -> Vec<f64> {
    let mut counts = alloc::vec![0.0_f64; k];
    for _ in 0..n_trials {
        let mut idx = (rng.uniform() * k as f64) as usize;
        if idx >= k {
            idx = k - 1;
        }
        counts[idx] += 1.0;
    }
    for c in &mut counts {
        *c /= n_trials as f64;
    }
    counts
}

fn vec_moments(h: &[f64]) -> (f64, f64) {
    let n = h.len() as f64;
    let mean = h.iter().sum::<f64>() / n;
    let var = h.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Affine moment matching: shift/scale the bin values so their mean and
/// standard deviation equal the targets, then clamp at zero and renormalize
/// to unit mass.
fn match_to(h: &[f64], mu_target: f64, sigma_target: f64) -> Vec<f64> {
    let (mu, sigma) = vec_moments(h);
    let scale = if sigma > 0.0 { sigma_target / sigma } else { 1.0 };
    let mut out: Vec<f64> = h.iter().map(|&x| ((x - mu) * scale + mu_target).max(0.0)).collect();
    let mass: f64 = out.iter().sum();
    if mass > 0.0 {
        for x in &mut out {
            *x /= mass;
        }
    }
    out
}

fn pooled(hists: &[Vec<f64>]) -> Vec<f64> {
    let k = hists[0].len();
    let mut avg = alloc::vec![0.0_f64; k];
    for h in hists {
        for (a, &x) in avg.iter_mut().zip(h) {
            *a += x;
        }
    }
    for a in &mut avg {
        *a /= hists.len() as f64;
    }
    avg
}

/// Algorithm-3 style quantification: for each sampling rate `q` and bin
/// count `k`, draw `m` multinomial reference histograms (N = 1/q trials,
/// uniform cells) and `m` empirical noise histograms from `spec`, moment
/// match the noise side to the reference, and tabulate KL / l2 / EMD.
pub fn quantify_space(
    spec: &MixtureSpec,
    qs: &[f64],
    ks: &[usize],
    m: usize,
    seed: u64,
) -> Result<QuantifyReport, AnalysisError> {
    let mut cells = Vec::with_capacity(qs.len() * ks.len());
    let mut cell_idx = 0u64;
    for &q in qs {
        let n_trials_f = 1.0 / q;
        let n_trials = libm::round(n_trials_f) as usize;
        if !(q > 0.0) || (n_trials_f - n_trials as f64).abs() > 1e-9 || n_trials == 0 {
            return Err(AnalysisError::InvalidQuantization(q));
        }
        for &k in ks {
            let mut sim_rng = NoiseRng::new(seed, 2 * cell_idx);
            let mut lmo_rng = NoiseRng::new(seed, 2 * cell_idx + 1);
            cell_idx += 1;

            let sim: Vec<Vec<f64>> =
                (0..m).map(|_| multinomial_pdf(n_trials, k, &mut sim_rng)).collect();

            // shared noise-histogram edges from a pooled pre-draw
            let draws: Vec<Vec<f64>> =
                (0..m).map(|_| sample_lmo_noise(spec, n_trials, &mut lmo_rng)).collect();
            let all: Vec<f64> = draws.iter().flatten().cloned().collect();
            let lo = percentile(&all, 0.1)?;
            let hi = percentile(&all, 99.9)?;
            let edges = if hi > lo {
                bin_edges(lo, hi, k)
            } else {
                bin_edges(lo - 0.5, lo + 0.5, k)
            };
            let lmo: Vec<Vec<f64>> = draws
                .iter()
                .map(|d| histogram(d, &edges))
                .collect::<Result<_, _>>()?;

            // primary comparison: moment match the pooled noise histogram to
            // the pooled reference, then measure the pooled distances
            let sim_pool = pooled(&sim);
            let lmo_pool_raw = pooled(&lmo);
            let (mu_sim, sigma_sim) = vec_moments(&sim_pool);
            let lmo_pool = match_to(&lmo_pool_raw, mu_sim, sigma_sim);

            // secondary: pair each draw with its reference, matching moments
            // per pair, and average the distances
            let (mut klp, mut l2p, mut emdp) = (0.0, 0.0, 0.0);
            for (s, l) in sim.iter().zip(&lmo) {
                let (mu_s, sd_s) = vec_moments(s);
                let lm = match_to(l, mu_s, sd_s);
                klp += kl(s, &lm)?;
                l2p += l2(s, &lm)?;
                emdp += emd_1d(s, &lm)?;
            }
            let mf = m as f64;
            cells.push(QuantifyCell {
                q,
                k,
                kl: kl(&sim_pool, &lmo_pool)?,
                l2: l2(&sim_pool, &lmo_pool)?,
                emd: emd_1d(&sim_pool, &lmo_pool)?,
                kl_paired: klp / mf,
                l2_paired: l2p / mf,
                emd_paired: emdp / mf,
                mu_sim,
                sigma_sim,
            });
        }
    }
    Ok(QuantifyReport { cells, m, seed })
}
