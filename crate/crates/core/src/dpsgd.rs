//! Desk-scale private training: multinomial logistic regression with
//! Poisson batching, per-sample l2 clipping, pluggable noise, and a
//! self-contained privacy ledger.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use libm::{exp, log, sqrt};
use serde::{Deserialize, Serialize};

use crate::accountant::{
    compose, gaussian_curve, lmo_curve, to_dp, AccountantError, RdpCurve,
};
use crate::mgf::MixtureSpec;
use crate::sampler::{sample_gaussian_noise, sample_lmo_noise, NoiseRng};

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    ShapeMismatch,
    InvalidConfig(String),
    /// The noise spec admits no finite Renyi order at the clip threshold.
    InfeasibleNoise,
    Accountant(AccountantError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::ShapeMismatch => write!(f, "parameter/dataset shapes disagree"),
            TrainError::InvalidConfig(msg) => write!(f, "invalid training config: {msg}"),
            TrainError::InfeasibleNoise => {
                write!(f, "noise spec has no finite Renyi order at this clip threshold")
            }
            TrainError::Accountant(e) => write!(f, "{e}"),
        }
    }
}

impl From<AccountantError> for TrainError {
    fn from(e: AccountantError) -> Self {
        TrainError::Accountant(e)
    }
}

/// Dense classification dataset: row-major features and integer labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n: usize,
    d: usize,
    classes: usize,
    pub tag: String,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        d: usize,
        tag: String,
    ) -> Result<Self, TrainError> {
        if d == 0 || labels.is_empty() || features.len() != labels.len() * d {
            return Err(TrainError::ShapeMismatch);
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::InvalidConfig(String::from("non-finite feature")));
        }
        let classes = labels.iter().max().unwrap() + 1;
        if classes < 2 {
            return Err(TrainError::InvalidConfig(String::from("need at least two classes")));
        }
        Ok(Dataset { n: labels.len(), features, labels, d, classes, tag })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn example(&self, i: usize) -> (&[f64], usize) {
        (&self.features[i * self.d..(i + 1) * self.d], self.labels[i])
    }
}

/// Two Gaussian blobs at `+/- offset * e1` with per-coordinate noise
/// `sigma`, alternating labels.
pub fn make_blobs(n: usize, d: usize, offset: f64, sigma: f64, seed: u64) -> Dataset {
    let mut rng = NoiseRng::new(seed, 0);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let center = if y == 0 { -offset } else { offset };
        for j in 0..d {
            let mu = if j == 0 { center } else { 0.0 };
            features.push(mu + sigma * rng.normal());
        }
        labels.push(y);
    }
    Dataset::new(features, labels, d, String::from("blobs")).expect("generator is well-formed")
}

/// What gets added to the summed clipped gradients each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseBackend {
    None,
    Lmo { spec: MixtureSpec },
    /// Standard deviation `clip * sigma`, the usual DP-SGD parameterization.
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    /// Expected batch size; each example joins a step's batch independently
    /// with probability `batch / n`.
    pub batch: usize,
    pub lr: f64,
    pub clip: f64,
    pub noise: NoiseBackend,
    pub delta: f64,
    pub alpha_max: u32,
    pub seed: u64,
    /// Charge steps with the Poisson-subsampling amplified curve instead of
    /// the unamplified one.
    #[serde(default)]
    pub amplified: bool,
}

/// Per-run privacy bookkeeping; `eps_total` is `None` for non-private runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLedger {
    /// Realized batch size per step; 0 marks a skipped step.
    pub batch_sizes: Vec<usize>,
    /// One curve per executed (non-skipped) step.
    pub per_step: Vec<RdpCurve>,
    pub composed: RdpCurve,
    pub eps_total: Option<f64>,
    pub argmin_alpha: Option<f64>,
    pub delta: f64,
}

/// Parameter count for a `classes`-way model on `d` features (+1 bias each).
pub fn param_len(d: usize, classes: usize) -> usize {
    classes * (d + 1)
}

fn softmax_logits(params: &[f64], x: &[f64], classes: usize) -> Vec<f64> {
    let d = x.len();
    let mut z = Vec::with_capacity(classes);
    for c in 0..classes {
        let row = &params[c * (d + 1)..(c + 1) * (d + 1)];
        let mut acc = row[d]; // bias
        for j in 0..d {
            acc += row[j] * x[j];
        }
        z.push(acc);
    }
    let top = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in &mut z {
        *v = exp(*v - top);
        total += *v;
    }
    for v in &mut z {
        *v /= total;
    }
    z
}

/// Analytic gradient of the cross-entropy loss of one example:
/// `(softmax(Wx + b) - onehot(y)) (x, 1)` laid out row-major per class.
pub fn per_sample_gradient(
    params: &[f64],
    x: &[f64],
    y: usize,
    classes: usize,
) -> Result<Vec<f64>, TrainError> {
    let d = x.len();
    if params.len() != param_len(d, classes) || y >= classes {
        return Err(TrainError::ShapeMismatch);
    }
    let p = softmax_logits(params, x, classes);
    let mut g = vec![0.0; params.len()];
    for c in 0..classes {
        let coeff = p[c] - if c == y { 1.0 } else { 0.0 };
        let row = &mut g[c * (d + 1)..(c + 1) * (d + 1)];
        for j in 0..d {
            row[j] = coeff * x[j];
        }
        row[d] = coeff;
    }
    Ok(g)
}

/// l2 clipping: `g / max(1, |g|_2 / c)`.
pub fn clip(g: &[f64], c: f64) -> Vec<f64> {
    let norm = sqrt(g.iter().map(|v| v * v).sum());
    let scale = 1.0 / (norm / c).max(1.0);
    g.iter().map(|v| v * scale).collect()
}

fn per_step_curve(config: &TrainConfig, q: f64) -> Result<Option<RdpCurve>, TrainError> {
    let base = match &config.noise {
        NoiseBackend::None => return Ok(None),
        NoiseBackend::Lmo { spec } => lmo_curve(spec, config.clip, config.alpha_max)?,
        NoiseBackend::Gaussian { sigma } => {
            gaussian_curve(*sigma, config.clip, config.alpha_max)?
        }
    };
    if to_dp(&base, config.delta).is_err() {
        return Err(TrainError::InfeasibleNoise);
    }
    if !config.amplified {
        return Ok(Some(base));
    }
    #[cfg(feature = "subsampling")]
    {
        let mut entries = Vec::new();
        for alpha in 2..=config.alpha_max {
            entries.push((
                alpha as f64,
                crate::accountant::poisson_amplified_rdp(&base, q, alpha)?,
            ));
        }
        return Ok(Some(RdpCurve::new(entries)?));
    }
    #[cfg(not(feature = "subsampling"))]
    {
        let _ = q;
        Err(TrainError::InvalidConfig(String::from(
            "amplified accounting requires the subsampling feature",
        )))
    }
}

/// Algorithm: for each step, Poisson-sample a batch, sum clipped per-sample
/// gradients, add one noise vector, normalize by the realized batch size and
/// take a gradient step. Steps with an empty batch are skipped and charge no
/// privacy.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(Vec<f64>, TrainLedger), TrainError> {
    train_traced(dataset, config, &mut |_, _| {})
}

/// [`train`] with an observer invoked after every step (skipped ones
/// included) with the step index and the current parameters; the noise and
/// batch traces are identical to the untraced run.
pub fn train_traced(
    dataset: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn FnMut(u64, &[f64]),
) -> Result<(Vec<f64>, TrainLedger), TrainError> {
    if config.steps == 0 || config.batch == 0 || config.batch > dataset.n {
        return Err(TrainError::InvalidConfig(String::from(
            "need 1 <= batch <= n and steps >= 1",
        )));
    }
    if !(config.lr > 0.0) || !(config.clip > 0.0) {
        return Err(TrainError::InvalidConfig(String::from("lr and clip must be > 0")));
    }
    if !(config.delta > 0.0 && config.delta < 1.0) {
        return Err(TrainError::InvalidConfig(String::from("delta must be in (0, 1)")));
    }
    let q = config.batch as f64 / dataset.n as f64;
    let step_curve = per_step_curve(config, q)?;

    let dim = param_len(dataset.d, dataset.classes);
    let mut params = vec![0.0_f64; dim];
    let mut batch_rng = NoiseRng::new(config.seed, 0);
    let mut noise_rng = NoiseRng::new(config.seed, 1);
    let mut ledger = TrainLedger {
        batch_sizes: Vec::with_capacity(config.steps as usize),
        per_step: Vec::new(),
        composed: RdpCurve::zero(config.alpha_max),
        eps_total: None,
        argmin_alpha: None,
        delta: config.delta,
    };

    for step in 0..config.steps {
        let batch: Vec<usize> =
            (0..dataset.n).filter(|_| batch_rng.uniform() < q).collect();
        ledger.batch_sizes.push(batch.len());
        if batch.is_empty() {
            observer(step, &params);
            continue; // no update, no privacy charge
        }
        let mut sum = vec![0.0_f64; dim];
        for &i in &batch {
            let (x, y) = dataset.example(i);
            let g = per_sample_gradient(&params, x, y, dataset.classes)?;
            let g = clip(&g, config.clip);
            debug_assert!(sqrt(g.iter().map(|v| v * v).sum::<f64>()) <= config.clip + 1e-9);
            for (s, v) in sum.iter_mut().zip(&g) {
                *s += v;
            }
        }
        let noise = match &config.noise {
            NoiseBackend::None => vec![0.0; dim],
            NoiseBackend::Lmo { spec } => sample_lmo_noise(spec, dim, &mut noise_rng),
            NoiseBackend::Gaussian { sigma } => {
                sample_gaussian_noise(config.clip * sigma, dim, &mut noise_rng)
            }
        };
        let inv_b = 1.0 / batch.len() as f64;
        for ((p, s), z) in params.iter_mut().zip(&sum).zip(&noise) {
            *p -= config.lr * (s + z) * inv_b;
        }
        if let Some(curve) = &step_curve {
            ledger.per_step.push(curve.clone());
        }
        observer(step, &params);
    }

    if !ledger.per_step.is_empty() {
        ledger.composed = compose(&ledger.per_step)?;
        let (eps, alpha) = to_dp(&ledger.composed, config.delta)?;
        ledger.eps_total = Some(eps);
        ledger.argmin_alpha = Some(alpha);
    }
    Ok((params, ledger))
}

/// Accuracy and mean cross-entropy loss of `params` on `dataset`.
pub fn evaluate(params: &[f64], dataset: &Dataset) -> Result<(f64, f64), TrainError> {
    if params.len() != param_len(dataset.d, dataset.classes) {
        return Err(TrainError::ShapeMismatch);
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for i in 0..dataset.n {
        let (x, y) = dataset.example(i);
        let p = softmax_logits(params, x, dataset.classes);
        let (argmax, _) = p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
        if argmax == y {
            correct += 1;
        }
        loss -= log(p[y].max(1e-300));
    }
    Ok((correct as f64 / dataset.n as f64, loss / dataset.n as f64))
}
