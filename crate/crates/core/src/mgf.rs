//! Mixture components and moment-generating-function algebra for the
//! second-fold randomization of the inverse Laplace scale.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use libm::{exp, expm1, log, log1p};
use serde::{Deserialize, Serialize};

/// Argument outside the MGF's existence region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainError {
    pub t: f64,
    pub sup: f64,
}

impl fmt::Display for DomainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MGF undefined at t = {} (domain sup = {})", self.t, self.sup)
    }
}

/// Invalid component parameters or mixture structure.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecError(pub String);

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid mixture spec: {}", self.0)
    }
}

/// Safety margin at the domain boundary so we never evaluate at a pole.
const POLE_MARGIN: f64 = 1e-9;

/// One positively supported component of the second-fold distribution.
///
/// `Degenerate` is a point mass used to recover the plain Laplace mechanism
/// in tests and references; the searched space uses the other three.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ComponentDist {
    Gamma {
        #[serde(rename = "k")]
        shape: f64,
        #[serde(rename = "theta")]
        scale: f64,
    },
    Exp {
        #[serde(rename = "lambda")]
        rate: f64,
    },
    Uniform {
        #[serde(rename = "a")]
        lo: f64,
        #[serde(rename = "b")]
        hi: f64,
    },
    Degenerate {
        #[serde(rename = "c")]
        value: f64,
    },
}

impl ComponentDist {
    pub fn validate(&self) -> Result<(), SpecError> {
        let ok = match *self {
            ComponentDist::Gamma { shape, scale } => shape > 0.0 && scale > 0.0,
            ComponentDist::Exp { rate } => rate > 0.0,
            ComponentDist::Uniform { lo, hi } => lo >= 0.0 && hi > lo,
            ComponentDist::Degenerate { value } => value > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SpecError("component parameters out of range".to_owned()))
        }
    }

    /// Supremum of the MGF existence region.
    pub fn domain_sup(&self) -> f64 {
        match *self {
            ComponentDist::Gamma { scale, .. } => 1.0 / scale,
            ComponentDist::Exp { rate } => rate,
            ComponentDist::Uniform { .. } | ComponentDist::Degenerate { .. } => f64::INFINITY,
        }
    }

    fn in_domain(&self, t: f64) -> bool {
        let sup = self.domain_sup();
        sup.is_infinite() || t < sup * (1.0 - POLE_MARGIN)
    }

    /// log M(t); evaluated in log space so large uniform arguments do not
    /// overflow before the caller combines terms.
    pub fn ln_mgf(&self, t: f64) -> Result<f64, DomainError> {
        if !self.in_domain(t) {
            return Err(DomainError { t, sup: self.domain_sup() });
        }
        Ok(match *self {
            ComponentDist::Gamma { shape, scale } => -shape * log1p(-t * scale),
            ComponentDist::Exp { rate } => -log1p(-t / rate),
            ComponentDist::Uniform { lo, hi } => ln_mgf_uniform(lo, hi, t),
            ComponentDist::Degenerate { value } => value * t,
        })
    }

    pub fn mgf(&self, t: f64) -> Result<f64, DomainError> {
        self.ln_mgf(t).map(exp)
    }

    /// dM/dt from the analytic per-component forms.
    pub fn mgf_derivative(&self, t: f64) -> Result<f64, DomainError> {
        if !self.in_domain(t) {
            return Err(DomainError { t, sup: self.domain_sup() });
        }
        Ok(match *self {
            ComponentDist::Gamma { shape, scale } => {
                shape * scale * exp(-(shape + 1.0) * log1p(-t * scale))
            }
            ComponentDist::Exp { rate } => {
                let u = 1.0 - t / rate;
                1.0 / (rate * u * u)
            }
            ComponentDist::Uniform { lo, hi } => mgf_derivative_uniform(lo, hi, t),
            ComponentDist::Degenerate { value } => value * exp(value * t),
        })
    }

    /// Mean of the component, used for moment diagnostics.
    pub fn mean(&self) -> f64 {
        match *self {
            ComponentDist::Gamma { shape, scale } => shape * scale,
            ComponentDist::Exp { rate } => 1.0 / rate,
            ComponentDist::Uniform { lo, hi } => 0.5 * (lo + hi),
            ComponentDist::Degenerate { value } => value,
        }
    }
}

fn ln_mgf_uniform(lo: f64, hi: f64, t: f64) -> f64 {
    let width = hi - lo;
    let tw = t * width;
    if tw.abs() < 1e-9 {
        // series around t = 0: ln M = t(a+b)/2 + t^2 (b-a)^2 / 24 + O(t^4)
        return t * 0.5 * (lo + hi) + tw * tw / 24.0;
    }
    // (e^{tb} - e^{ta}) / (t (b-a)) factored through expm1 so the
    // cancellation near t = 0 stays fully precise
    if t > 0.0 {
        t * hi + log(-exp_m1(-tw) / tw)
    } else {
        t * lo + log(exp_m1(tw) / tw)
    }
}

fn mgf_derivative_uniform(lo: f64, hi: f64, t: f64) -> f64 {
    let width = hi - lo;
    if (t * width).abs() < 1e-6 {
        // E[Y] + t E[Y^2] + t^2 E[Y^3] / 2
        let m1 = 0.5 * (lo + hi);
        let m2 = (lo * lo + lo * hi + hi * hi) / 3.0;
        let m3 = (lo * lo * lo + lo * lo * hi + lo * hi * hi + hi * hi * hi) / 4.0;
        return m1 + t * m2 + 0.5 * t * t * m3;
    }
    let ea = exp(t * lo);
    let eb = exp(t * hi);
    ((hi * eb - lo * ea) * t - (eb - ea)) / (t * t * width)
}

/// How the weighted components combine into one random variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompositionMode {
    /// Draw one component with probability proportional to its weight.
    #[serde(rename = "mixture")]
    Mixture,
    /// Weighted sum of independent component draws; the MGF is the product
    /// of component MGFs at scaled arguments.
    #[serde(rename = "linear")]
    LinearCombination,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedComponent {
    pub weight: f64,
    pub dist: ComponentDist,
}

/// The second-fold distribution of the inverse Laplace scale `Y`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureSpec {
    mode: CompositionMode,
    components: Vec<WeightedComponent>,
}

pub const MAX_COMPONENTS: usize = 8;

impl MixtureSpec {
    pub fn new(
        mode: CompositionMode,
        components: Vec<WeightedComponent>,
    ) -> Result<Self, SpecError> {
        if components.is_empty() || components.len() > MAX_COMPONENTS {
            return Err(SpecError("between 1 and 8 components required".to_owned()));
        }
        for c in &components {
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(SpecError("weights must be positive and finite".to_owned()));
            }
            c.dist.validate()?;
        }
        Ok(MixtureSpec { mode, components })
    }

    pub fn degenerate(value: f64) -> Self {
        MixtureSpec::new(
            CompositionMode::Mixture,
            alloc::vec![WeightedComponent { weight: 1.0, dist: ComponentDist::Degenerate { value } }],
        )
        .expect("point mass is a valid spec")
    }

    pub fn mode(&self) -> CompositionMode {
        self.mode
    }

    pub fn components(&self) -> &[WeightedComponent] {
        &self.components
    }

    /// Mixture weights normalized to sum to one (evaluation-time view).
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        self.components.iter().map(|c| c.weight / total).collect()
    }

    /// Supremum t* of the set where the MGF is finite.
    pub fn domain_sup(&self) -> f64 {
        let mut sup = f64::INFINITY;
        for c in &self.components {
            let s = match self.mode {
                CompositionMode::Mixture => c.dist.domain_sup(),
                CompositionMode::LinearCombination => c.dist.domain_sup() / c.weight,
            };
            if s < sup {
                sup = s;
            }
        }
        sup
    }

    /// log M_Y(t).
    pub fn ln_mgf(&self, t: f64) -> Result<f64, DomainError> {
        match self.mode {
            CompositionMode::Mixture => {
                let weights = self.normalized_weights();
                let mut terms = Vec::with_capacity(self.components.len());
                for (c, w) in self.components.iter().zip(&weights) {
                    terms.push(log(*w) + c.dist.ln_mgf(t)?);
                }
                Ok(log_sum_exp(&terms))
            }
            CompositionMode::LinearCombination => {
                let mut acc = 0.0;
                for c in &self.components {
                    acc += c.dist.ln_mgf(c.weight * t)?;
                }
                Ok(acc)
            }
        }
    }

    /// M_Y(t) = E[e^{tY}].
    pub fn mgf(&self, t: f64) -> Result<f64, DomainError> {
        self.ln_mgf(t).map(exp)
    }

    /// dM_Y/dt at a point strictly inside the domain.
    pub fn mgf_derivative(&self, t: f64) -> Result<f64, DomainError> {
        match self.mode {
            CompositionMode::Mixture => {
                let weights = self.normalized_weights();
                let mut acc = 0.0;
                for (c, w) in self.components.iter().zip(&weights) {
                    acc += w * c.dist.mgf_derivative(t)?;
                }
                Ok(acc)
            }
            CompositionMode::LinearCombination => {
                // M(t) * sum_i a_i M_i'(a_i t) / M_i(a_i t)
                let m = self.mgf(t)?;
                let mut acc = 0.0;
                for c in &self.components {
                    let at = c.weight * t;
                    acc += c.weight * c.dist.mgf_derivative(at)? / c.dist.mgf(at)?;
                }
                Ok(m * acc)
            }
        }
    }

    /// E[Y].
    pub fn mean(&self) -> f64 {
        match self.mode {
            CompositionMode::Mixture => self
                .normalized_weights()
                .iter()
                .zip(&self.components)
                .map(|(w, c)| w * c.dist.mean())
                .sum(),
            CompositionMode::LinearCombination => {
                self.components.iter().map(|c| c.weight * c.dist.mean()).sum()
            }
        }
    }
}

impl<'de> Deserialize<'de> for MixtureSpec {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            mode: CompositionMode,
            components: Vec<WeightedComponent>,
        }
        let raw = Raw::deserialize(deserializer)?;
        MixtureSpec::new(raw.mode, raw.components).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|&t| exp(t - max)).sum();
    max + log(sum)
}

/// exp(x) - 1 with the libm name kept out of call sites.
pub(crate) fn exp_m1(x: f64) -> f64 {
    expm1(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol * b.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn gamma_mgf_closed_form() {
        let d = ComponentDist::Gamma { shape: 1.0, scale: 1.0 };
        close(d.mgf(0.5).unwrap(), 2.0, 1e-12);
    }

    #[test]
    fn uniform_mgf_at_zero_is_one() {
        let d = ComponentDist::Uniform { lo: 1.0, hi: 3.0 };
        close(d.mgf(0.0).unwrap(), 1.0, 1e-12);
    }

    #[test]
    fn exponential_mgf_closed_form() {
        let d = ComponentDist::Exp { rate: 2.0 };
        close(d.mgf(1.0).unwrap(), 2.0, 1e-12);
    }

    #[test]
    fn gamma_mgf_out_of_domain() {
        let d = ComponentDist::Gamma { shape: 2.0, scale: 0.5 };
        assert!(d.mgf(2.1).is_err());
        // just below the pole is fine
        assert!(d.mgf(1.9).is_ok());
    }

    #[test]
    fn mixture_degenerate_is_exponential_of_ct() {
        let spec = MixtureSpec::degenerate(1.0);
        close(spec.mgf(-1.0).unwrap(), libm::exp(-1.0), 1e-12);
    }

    #[test]
    fn mixture_of_identical_components() {
        let spec = MixtureSpec::new(
            CompositionMode::Mixture,
            vec![
                WeightedComponent { weight: 0.5, dist: ComponentDist::Exp { rate: 2.0 } },
                WeightedComponent { weight: 0.5, dist: ComponentDist::Exp { rate: 2.0 } },
            ],
        )
        .unwrap();
        close(spec.mgf(1.0).unwrap(), 2.0, 1e-12);
    }

    #[test]
    fn linear_combination_is_product_of_mgfs() {
        let spec = MixtureSpec::new(
            CompositionMode::LinearCombination,
            vec![
                WeightedComponent { weight: 1.0, dist: ComponentDist::Gamma { shape: 1.0, scale: 1.0 } },
                WeightedComponent { weight: 1.0, dist: ComponentDist::Degenerate { value: 1.0 } },
            ],
        )
        .unwrap();
        close(spec.mgf(0.5).unwrap(), 2.0 * libm::exp(0.5), 1e-12);
    }

    #[test]
    fn derivative_examples() {
        let spec = MixtureSpec::degenerate(1.0);
        close(spec.mgf_derivative(0.0).unwrap(), 1.0, 1e-12);

        let uni = MixtureSpec::new(
            CompositionMode::Mixture,
            vec![WeightedComponent { weight: 1.0, dist: ComponentDist::Uniform { lo: 1.0, hi: 3.0 } }],
        )
        .unwrap();
        close(uni.mgf_derivative(0.0).unwrap(), 2.0, 1e-12);

        let gamma = MixtureSpec::new(
            CompositionMode::Mixture,
            vec![WeightedComponent { weight: 1.0, dist: ComponentDist::Gamma { shape: 2.0, scale: 0.5 } }],
        )
        .unwrap();
        // k theta (1 - t theta)^{-k-1} at t = 0.5
        close(gamma.mgf_derivative(0.5).unwrap(), 1.0 / (0.75f64.powi(3)), 1e-10);
    }

    #[test]
    fn domain_sup_examples() {
        let g = MixtureSpec::new(
            CompositionMode::Mixture,
            vec![WeightedComponent { weight: 1.0, dist: ComponentDist::Gamma { shape: 1.0, scale: 0.25 } }],
        )
        .unwrap();
        assert_eq!(g.domain_sup(), 4.0);

        let u = MixtureSpec::new(
            CompositionMode::Mixture,
            vec![WeightedComponent { weight: 1.0, dist: ComponentDist::Uniform { lo: 0.0, hi: 1.0 } }],
        )
        .unwrap();
        assert!(u.domain_sup().is_infinite());

        let e = MixtureSpec::new(
            CompositionMode::LinearCombination,
            vec![WeightedComponent { weight: 2.0, dist: ComponentDist::Exp { rate: 3.0 } }],
        )
        .unwrap();
        close(e.domain_sup(), 1.5, 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(ComponentDist::Gamma { shape: 0.0, scale: 1.0 }.validate().is_err());
        assert!(ComponentDist::Uniform { lo: -0.5, hi: 1.0 }.validate().is_err());
        assert!(ComponentDist::Uniform { lo: 1.0, hi: 1.0 }.validate().is_err());
        assert!(MixtureSpec::new(CompositionMode::Mixture, vec![]).is_err());
        assert!(MixtureSpec::new(
            CompositionMode::Mixture,
            vec![WeightedComponent { weight: 0.0, dist: ComponentDist::Exp { rate: 1.0 } }],
        )
        .is_err());
    }

    #[test]
    fn uniform_small_t_series_is_continuous() {
        let d = ComponentDist::Uniform { lo: 0.5, hi: 2.5 };
        // compare series branch against the exact branch just above the cutoff
        let t_small = 4.0e-7; // |t (b-a)| < 1e-6, series
        let t_exact = 6.0e-7; // exact branch
        let m_small = d.mgf(t_small).unwrap();
        let m_exact = d.mgf(t_exact).unwrap();
        let slope = (m_exact - m_small) / (t_exact - t_small);
        close(slope, d.mean(), 1e-4);
    }

    #[test]
    fn serde_schema_round_trip() {
        let spec = MixtureSpec::new(
            CompositionMode::Mixture,
            vec![
                WeightedComponent { weight: 0.3, dist: ComponentDist::Gamma { shape: 2.0, scale: 0.1 } },
                WeightedComponent { weight: 0.7, dist: ComponentDist::Uniform { lo: 0.1, hi: 1.0 } },
            ],
        )
        .unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"mode\":\"mixture\""));
        assert!(json.contains("\"type\":\"gamma\""));
        assert!(json.contains("\"theta\":0.1"));
        let back: MixtureSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn serde_rejects_invalid() {
        let bad = r#"{"mode":"mixture","components":[{"weight":-1.0,"dist":{"type":"exp","lambda":1.0}}]}"#;
        assert!(serde_json::from_str::<MixtureSpec>(bad).is_err());
    }
}
