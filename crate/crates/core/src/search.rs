//! Offline grid search for budget-feasible noise parameters, plus the
//! auxiliary mechanism quantities (usefulness, pure-DP bound, noise CDF).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use libm::log;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accountant::{lmo_curve, to_dp, AccountantError, PrivacyBudget, RdpCurve};
use crate::mgf::{ComponentDist, CompositionMode, MixtureSpec, WeightedComponent};

#[derive(Debug, Clone, PartialEq)]
pub enum SearchError {
    /// Every candidate in the grid violates the budget.
    NoFeasibleCandidate,
    GridTooLarge { cardinality: u64, cap: u64 },
    InvalidGrid(String),
    Accountant(AccountantError),
}

impl fmt::Display for SearchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchError::NoFeasibleCandidate => write!(f, "no candidate satisfies the budget"),
            SearchError::GridTooLarge { cardinality, cap } => {
                write!(f, "grid has {cardinality} candidates, above the cap of {cap}")
            }
            SearchError::InvalidGrid(msg) => write!(f, "invalid grid: {msg}"),
            SearchError::Accountant(e) => write!(f, "accountant failure: {e}"),
        }
    }
}

impl From<AccountantError> for SearchError {
    fn from(e: AccountantError) -> Self {
        SearchError::Accountant(e)
    }
}

/// Whether the budget constrains each step or the `steps`-fold composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetScope {
    PerStep,
    TotalComposed,
}

/// P(|noise| <= gamma) = 1 - M(-gamma): the search objective.
pub fn usefulness(spec: &MixtureSpec, gamma: f64) -> f64 {
    let m = spec.mgf(-gamma).expect("negative arguments are always in-domain");
    (1.0 - m).clamp(0.0, 1.0)
}

/// Pure-DP bound of the mechanism at sensitivity `delta_s`:
/// ln( M'(0) / M'(-delta_s) ).
pub fn pure_dp_epsilon(spec: &MixtureSpec, delta_s: f64) -> f64 {
    let num = spec.mgf_derivative(0.0).expect("0 is always in-domain");
    let den = spec.mgf_derivative(-delta_s).expect("negative arguments are always in-domain");
    log(num / den)
}

/// CDF of the mechanism output at `x` for true query value `q_v`.
pub fn mechanism_cdf(spec: &MixtureSpec, q_v: f64, x: f64) -> f64 {
    let m = |t: f64| spec.mgf(t).expect("negative arguments are always in-domain");
    if x >= q_v {
        1.0 - 0.5 * m(-(x - q_v))
    } else {
        0.5 * m(-(q_v - x))
    }
}

/// Parameter ranges for the three-family candidate space, plus the budget
/// the candidates must satisfy.
///
/// A `0.0` entry in a weight list drops that component family for those
/// candidates, so single- and two-family mixtures live in the same grid
/// (used by the ablation harness). `degenerate_values` prepends plain
/// point-mass candidates; it is empty by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub mode: CompositionMode,
    #[serde(default)]
    pub degenerate_values: Vec<f64>,
    pub weights_gamma: Vec<f64>,
    pub weights_exp: Vec<f64>,
    pub weights_uniform: Vec<f64>,
    pub k_values: Vec<f64>,
    pub theta_values: Vec<f64>,
    pub lambda_values: Vec<f64>,
    pub uniform_pairs: Vec<(f64, f64)>,
    pub alpha_max: u32,
    /// Sensitivity C of the query the noise protects.
    pub sensitivity: f64,
    pub steps: u64,
    pub budget: PrivacyBudget,
    pub budget_scope: BudgetScope,
    /// Usefulness threshold; defaults to the sensitivity when absent.
    #[serde(default)]
    pub usefulness_gamma: Option<f64>,
    #[serde(default = "default_cap")]
    pub candidate_cap: u64,
    /// Feasibility via the conservative max-over-orders conversion instead
    /// of the standard min.
    #[serde(default)]
    pub conservative_max: bool,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_cap() -> u64 {
    10_000_000
}

fn default_seed() -> u64 {
    42
}

/// Searched noise parameters with their accounting evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub spec: MixtureSpec,
    /// Per-step RDP curve of the winning spec.
    pub curve: RdpCurve,
    /// Converted eps at the grid's budget scope.
    pub eps_total: f64,
    pub argmin_alpha: f64,
    pub usefulness: f64,
    /// Hex SHA-256 of the grid configuration.
    pub grid_fingerprint: String,
    pub seed: u64,
}

const W09: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

impl SearchGrid {
    /// The shipped default grid: weights 0.1..0.9 (Gamma and Exponential may
    /// also drop out entirely), small-scale Gamma/Exponential components and
    /// uniform windows from narrow to wide.
    pub fn default_grid(budget: PrivacyBudget, sensitivity: f64, steps: u64) -> Self {
        let mut wg = vec![0.0];
        wg.extend_from_slice(&W09);
        let we = wg.clone();
        SearchGrid {
            mode: CompositionMode::Mixture,
            degenerate_values: Vec::new(),
            weights_gamma: wg,
            weights_exp: we,
            weights_uniform: W09.to_vec(),
            k_values: vec![1.0, 2.0, 4.0, 8.0],
            theta_values: vec![0.004, 0.008, 0.02, 0.08],
            lambda_values: vec![150.0, 400.0, 1000.0],
            uniform_pairs: vec![
                (0.015, 0.018),
                (0.05, 0.06),
                (0.105, 0.115),
                (0.27, 0.29),
                (0.49, 0.51),
                (0.9, 1.1),
                (1.78, 1.81),
                (2.77, 2.80),
                (0.1, 1.0),
                (0.5, 3.0),
            ],
            alpha_max: 128,
            sensitivity,
            steps,
            budget,
            budget_scope: BudgetScope::PerStep,
            usefulness_gamma: None,
            candidate_cap: default_cap(),
            conservative_max: false,
            seed: default_seed(),
        }
    }

    /// Grid containing only point-mass (plain Laplace) candidates.
    pub fn degenerate_only(
        values: Vec<f64>,
        budget: PrivacyBudget,
        sensitivity: f64,
        steps: u64,
    ) -> Self {
        SearchGrid {
            mode: CompositionMode::Mixture,
            degenerate_values: values,
            weights_gamma: Vec::new(),
            weights_exp: Vec::new(),
            weights_uniform: Vec::new(),
            k_values: Vec::new(),
            theta_values: Vec::new(),
            lambda_values: Vec::new(),
            uniform_pairs: Vec::new(),
            alpha_max: 128,
            sensitivity,
            steps,
            budget,
            budget_scope: BudgetScope::PerStep,
            usefulness_gamma: None,
            candidate_cap: default_cap(),
            conservative_max: false,
            seed: default_seed(),
        }
    }

    fn validate(&self) -> Result<(), SearchError> {
        let mixture_part = !self.weights_uniform.is_empty()
            || !self.weights_gamma.is_empty()
            || !self.weights_exp.is_empty();
        if self.degenerate_values.is_empty() && !mixture_part {
            return Err(SearchError::InvalidGrid(String::from("empty candidate space")));
        }
        if mixture_part {
            for (name, list) in [
                ("weights_gamma", &self.weights_gamma),
                ("weights_exp", &self.weights_exp),
                ("weights_uniform", &self.weights_uniform),
            ] {
                if list.is_empty() {
                    return Err(SearchError::InvalidGrid(alloc::format!("{name} is empty")));
                }
            }
            let needs = |cond: bool, name: &str, list: &Vec<f64>| {
                if cond && list.is_empty() {
                    Err(SearchError::InvalidGrid(alloc::format!("{name} is empty")))
                } else {
                    Ok(())
                }
            };
            let gamma_used = self.weights_gamma.iter().any(|&w| w > 0.0);
            let exp_used = self.weights_exp.iter().any(|&w| w > 0.0);
            let uniform_used = self.weights_uniform.iter().any(|&w| w > 0.0);
            needs(gamma_used, "k_values", &self.k_values)?;
            needs(gamma_used, "theta_values", &self.theta_values)?;
            needs(exp_used, "lambda_values", &self.lambda_values)?;
            if uniform_used && self.uniform_pairs.is_empty() {
                return Err(SearchError::InvalidGrid(String::from("uniform_pairs is empty")));
            }
        }
        if !(self.sensitivity > 0.0) {
            return Err(SearchError::InvalidGrid(String::from("sensitivity must be > 0")));
        }
        if self.steps == 0 {
            return Err(SearchError::InvalidGrid(String::from("steps must be >= 1")));
        }
        if self.alpha_max < 2 {
            return Err(SearchError::InvalidGrid(String::from("alpha_max must be >= 2")));
        }
        if let Some(g) = self.usefulness_gamma {
            if !(g > 0.0) {
                return Err(SearchError::InvalidGrid(String::from(
                    "usefulness_gamma must be > 0",
                )));
            }
        }
        Ok(())
    }

    /// Exact number of candidates the enumeration will visit.
    pub fn cardinality(&self) -> u64 {
        let mut total = self.degenerate_values.len() as u64;
        let gamma_params = (self.k_values.len() * self.theta_values.len()).max(1) as u64;
        let exp_params = self.lambda_values.len().max(1) as u64;
        let uni_params = self.uniform_pairs.len().max(1) as u64;
        for &wg in &self.weights_gamma {
            for &we in &self.weights_exp {
                for &wu in &self.weights_uniform {
                    if wg == 0.0 && we == 0.0 && wu == 0.0 {
                        continue;
                    }
                    let g = if wg > 0.0 { gamma_params } else { 1 };
                    let e = if we > 0.0 { exp_params } else { 1 };
                    let u = if wu > 0.0 { uni_params } else { 1 };
                    total += g * e * u;
                }
            }
        }
        total
    }

    /// Candidates in the fixed lexicographic order
    /// (degenerate values, then weights, k, theta, lambda, (a, b)).
    /// Dropped families contribute a single placeholder iteration so the
    /// order is stable under grid edits.
    pub fn for_each_candidate<E>(
        &self,
        mut visit: impl FnMut(MixtureSpec) -> Result<(), E>,
    ) -> Result<(), E> {
        for &c in &self.degenerate_values {
            visit(MixtureSpec::degenerate(c))?;
        }
        let one = [f64::NAN];
        let one_pair = [(f64::NAN, f64::NAN)];
        for &wg in &self.weights_gamma {
            for &we in &self.weights_exp {
                for &wu in &self.weights_uniform {
                    if wg == 0.0 && we == 0.0 && wu == 0.0 {
                        continue;
                    }
                    let ks: &[f64] = if wg > 0.0 { &self.k_values } else { &one };
                    let thetas: &[f64] = if wg > 0.0 { &self.theta_values } else { &one };
                    let lambdas: &[f64] = if we > 0.0 { &self.lambda_values } else { &one };
                    let pairs: &[(f64, f64)] =
                        if wu > 0.0 { &self.uniform_pairs } else { &one_pair };
                    for &k in ks {
                        for &theta in thetas {
                            for &lambda in lambdas {
                                for &(a, b) in pairs {
                                    let mut comps = Vec::with_capacity(3);
                                    if wg > 0.0 {
                                        comps.push(WeightedComponent {
                                            weight: wg,
                                            dist: ComponentDist::Gamma { shape: k, scale: theta },
                                        });
                                    }
                                    if we > 0.0 {
                                        comps.push(WeightedComponent {
                                            weight: we,
                                            dist: ComponentDist::Exp { rate: lambda },
                                        });
                                    }
                                    if wu > 0.0 {
                                        comps.push(WeightedComponent {
                                            weight: wu,
                                            dist: ComponentDist::Uniform { lo: a, hi: b },
                                        });
                                    }
                                    let spec = MixtureSpec::new(self.mode, comps)
                                        .expect("grid values form valid specs");
                                    visit(spec)?;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over a canonical byte encoding of every grid field.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let f = |h: &mut Sha256, x: f64| h.update(x.to_bits().to_le_bytes());
        let fs = |h: &mut Sha256, xs: &[f64]| {
            h.update((xs.len() as u64).to_le_bytes());
            for &x in xs {
                f(h, x);
            }
        };
        h.update([match self.mode {
            CompositionMode::Mixture => 0u8,
            CompositionMode::LinearCombination => 1u8,
        }]);
        fs(&mut h, &self.degenerate_values);
        fs(&mut h, &self.weights_gamma);
        fs(&mut h, &self.weights_exp);
        fs(&mut h, &self.weights_uniform);
        fs(&mut h, &self.k_values);
        fs(&mut h, &self.theta_values);
        fs(&mut h, &self.lambda_values);
        h.update((self.uniform_pairs.len() as u64).to_le_bytes());
        for &(a, b) in &self.uniform_pairs {
            f(&mut h, a);
            f(&mut h, b);
        }
        h.update(self.alpha_max.to_le_bytes());
        f(&mut h, self.sensitivity);
        h.update(self.steps.to_le_bytes());
        f(&mut h, self.budget.eps);
        f(&mut h, self.budget.delta);
        h.update([match self.budget_scope {
            BudgetScope::PerStep => 0u8,
            BudgetScope::TotalComposed => 1u8,
        }]);
        f(&mut h, self.usefulness_gamma.unwrap_or(f64::NAN));
        h.update([self.conservative_max as u8]);
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            use core::fmt::Write;
            let _ = write!(out, "{byte:02x}");
        }
        out
    }
}

/// Converted eps of a candidate at the grid's scope, with the minimizing
/// order, or `None` when every order is infeasible.
fn candidate_eps(grid: &SearchGrid, curve: &RdpCurve) -> Option<(f64, f64)> {
    let scoped;
    let scoped_ref = match grid.budget_scope {
        BudgetScope::PerStep => curve,
        BudgetScope::TotalComposed => {
            scoped = curve.composed_over(grid.steps);
            &scoped
        }
    };
    if grid.conservative_max {
        let log_inv_delta = -log(grid.budget.delta);
        let mut best: Option<(f64, f64)> = None;
        for &(alpha, eps_alpha) in scoped_ref.entries() {
            if !eps_alpha.is_finite() {
                continue;
            }
            let total = eps_alpha + log_inv_delta / (alpha - 1.0);
            match best {
                Some((b, _)) if total <= b => {}
                _ => best = Some((total, alpha)),
            }
        }
        best
    } else {
        to_dp(scoped_ref, grid.budget.delta).ok()
    }
}

/// Deterministic exhaustive search: among budget-feasible candidates, return
/// the one maximizing usefulness, ties broken by enumeration order.
pub fn search_optimal(grid: &SearchGrid) -> Result<SearchResult, SearchError> {
    grid.validate()?;
    let cardinality = grid.cardinality();
    if cardinality > grid.candidate_cap {
        return Err(SearchError::GridTooLarge { cardinality, cap: grid.candidate_cap });
    }
    let gamma = grid.usefulness_gamma.unwrap_or(grid.sensitivity);
    let mut best: Option<(f64, MixtureSpec, RdpCurve, f64, f64)> = None;
    grid.for_each_candidate(|spec| -> Result<(), SearchError> {
        let u = usefulness(&spec, gamma);
        // a candidate at or below the current best usefulness cannot win:
        // ties go to the earlier candidate
        if let Some((bu, ..)) = &best {
            if u <= *bu {
                return Ok(());
            }
        }
        let curve = lmo_curve(&spec, grid.sensitivity, grid.alpha_max)?;
        if let Some((eps, alpha)) = candidate_eps(grid, &curve) {
            if eps <= grid.budget.eps {
                best = Some((u, spec, curve, eps, alpha));
            }
        }
        Ok(())
    })?;
    let (usefulness, spec, curve, eps_total, argmin_alpha) =
        best.ok_or(SearchError::NoFeasibleCandidate)?;
    Ok(SearchResult {
        spec,
        curve,
        eps_total,
        argmin_alpha,
        usefulness,
        grid_fingerprint: grid.fingerprint(),
        seed: grid.seed,
    })
}
