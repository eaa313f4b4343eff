//! Histogram distances (KL, l2, EMD) and histogram/entropy utilities shared
//! by the analysis harnesses.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use libm::{fabs, log, sqrt};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricError {
    EmptyInput,
    LengthMismatch,
    /// Fewer than two bins requested.
    TooFewBins,
}

impl fmt::Display for MetricError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricError::EmptyInput => write!(f, "empty input"),
            MetricError::LengthMismatch => write!(f, "histograms have different lengths"),
            MetricError::TooFewBins => write!(f, "at least two bins required"),
        }
    }
}

/// KL divergence sum p_i ln(p_i / q_i) between probability vectors.
/// Bins with p_i = 0 contribute nothing; p_i > 0 against q_i = 0 is `+inf`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64, MetricError> {
    if p.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if p.len() != q.len() {
        return Err(MetricError::LengthMismatch);
    }
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            acc += pi * log(pi / qi);
        }
    }
    Ok(acc.max(0.0))
}

/// Euclidean distance between probability vectors.
pub fn l2(p: &[f64], q: &[f64]) -> Result<f64, MetricError> {
    if p.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if p.len() != q.len() {
        return Err(MetricError::LengthMismatch);
    }
    Ok(sqrt(p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()))
}

/// 1-Wasserstein distance between histograms on a shared equal-width grid
/// whose support is normalized to [0, 1]: the l1 distance of the CDFs times
/// the bin width 1/k.
pub fn emd_1d(p: &[f64], q: &[f64]) -> Result<f64, MetricError> {
    if p.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if p.len() != q.len() {
        return Err(MetricError::LengthMismatch);
    }
    let width = 1.0 / p.len() as f64;
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        cp += pi;
        cq += qi;
        acc += fabs(cp - cq);
    }
    Ok(acc * width)
}

/// `bins + 1` equal-width edges over `[lo, hi]`.
pub fn bin_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let step = (hi - lo) / bins as f64;
    (0..=bins).map(|i| lo + step * i as f64).collect()
}

/// Normalized histogram of `samples` on equal-width `edges`; out-of-range
/// samples are clamped into the boundary bins so mass is conserved.
pub fn histogram(samples: &[f64], edges: &[f64]) -> Result<Vec<f64>, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let bins = edges.len().checked_sub(1).filter(|&b| b >= 2).ok_or(MetricError::TooFewBins)?;
    let lo = edges[0];
    let hi = edges[bins];
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0.0_f64; bins];
    for &x in samples {
        let idx = if width > 0.0 {
            (((x - lo) / width) as isize).clamp(0, bins as isize - 1) as usize
        } else {
            0
        };
        counts[idx] += 1.0;
    }
    let n = samples.len() as f64;
    for c in &mut counts {
        *c /= n;
    }
    Ok(counts)
}

/// Shannon entropy (natural log) of a probability vector.
pub fn entropy_of_pdf(pdf: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in pdf {
        if p > 0.0 {
            h -= p * log(p);
        }
    }
    h.max(0.0)
}

/// Entropy of the normalized histogram of `samples` on the given edges.
pub fn empirical_entropy_with_edges(samples: &[f64], edges: &[f64]) -> Result<f64, MetricError> {
    Ok(entropy_of_pdf(&histogram(samples, edges)?))
}

/// Entropy of the normalized histogram over `bins` equal-width bins spanning
/// the sample range. A point mass (zero range) has entropy 0.
pub fn empirical_entropy(samples: &[f64], bins: usize) -> Result<f64, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if bins < 2 {
        return Err(MetricError::TooFewBins);
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(0.0);
    }
    empirical_entropy_with_edges(samples, &bin_edges(lo, hi, bins))
}

/// Linear-interpolated percentile (`pct` in [0, 100]) of a sample set.
pub fn percentile(samples: &[f64], pct: f64) -> Result<f64, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN samples"));
    let pos = (pct / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos as usize;
    if i + 1 >= sorted.len() {
        return Ok(sorted[sorted.len() - 1]);
    }
    let frac = pos - i as f64;
    Ok(sorted[i] * (1.0 - frac) + sorted[i + 1] * frac)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn kl_hand_example() {
        let v = kl(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        close(v, 0.5 * (2.0_f64).ln() + 0.5 * (2.0_f64 / 3.0).ln(), 1e-15);
        close(v, 0.14384, 1e-5);
    }

    #[test]
    fn metrics_zero_on_identical() {
        let p = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
        assert_eq!(l2(&p, &p).unwrap(), 0.0);
        assert_eq!(emd_1d(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_infinite_on_unsupported_mass() {
        assert!(kl(&[0.5, 0.5], &[1.0, 0.0]).unwrap().is_infinite());
    }

    #[test]
    fn l2_and_emd_symmetric_nonnegative() {
        let p = [0.7, 0.2, 0.1];
        let q = [0.1, 0.3, 0.6];
        assert_eq!(l2(&p, &q).unwrap(), l2(&q, &p).unwrap());
        assert_eq!(emd_1d(&p, &q).unwrap(), emd_1d(&q, &p).unwrap());
        assert!(l2(&p, &q).unwrap() > 0.0);
        assert!(emd_1d(&p, &q).unwrap() > 0.0);
    }

    /// Independent transport oracle: greedily push mass left-to-right between
    /// sorted bin centers at positions i/k.
    fn transport_oracle(p: &[f64], q: &[f64]) -> f64 {
        let k = p.len();
        let width = 1.0 / k as f64;
        let mut surplus = 0.0; // mass carried from earlier bins (signed)
        let mut cost = 0.0;
        for i in 0..k {
            surplus += p[i] - q[i];
            // carrying |surplus| across one bin costs |surplus| * width
            cost += surplus.abs() * width;
        }
        cost
    }

    #[test]
    fn emd_matches_exhaustive_transport() {
        let cases: [(&[f64], &[f64]); 4] = [
            (&[1.0, 0.0], &[0.0, 1.0]),
            (&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5]),
            (&[0.2, 0.3, 0.1, 0.4], &[0.4, 0.1, 0.3, 0.2]),
            (
                &[0.05, 0.1, 0.15, 0.2, 0.2, 0.15, 0.1, 0.05, 0.0, 0.0],
                &[0.0, 0.0, 0.05, 0.1, 0.15, 0.2, 0.2, 0.15, 0.1, 0.05],
            ),
        ];
        for (p, q) in cases {
            close(emd_1d(p, q).unwrap(), transport_oracle(p, q), 1e-14);
        }
    }

    #[test]
    fn emd_unit_shift() {
        // full mass moving one of two bins: distance 1/2 in normalized units
        close(emd_1d(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.5, 1e-15);
    }

    #[test]
    fn entropy_point_mass_and_uniform() {
        let all_equal = [3.0; 100];
        assert_eq!(empirical_entropy(&all_equal, 16).unwrap(), 0.0);
        let uniform_pdf = [1.0 / 8.0; 8];
        close(entropy_of_pdf(&uniform_pdf), (8.0_f64).ln(), 1e-12);
    }

    #[test]
    fn entropy_bounded_by_log_bins() {
        let samples: Vec<f64> = (0..1000).map(|i| (i % 37) as f64).collect();
        let h = empirical_entropy(&samples, 64).unwrap();
        assert!(h >= 0.0 && h <= (64.0_f64).ln() + 1e-12);
    }

    #[test]
    fn histogram_conserves_mass_and_clamps() {
        let edges = bin_edges(0.0, 1.0, 4);
        let pdf = histogram(&[-5.0, 0.1, 0.3, 0.6, 0.9, 7.0], &edges).unwrap();
        close(pdf.iter().sum::<f64>(), 1.0, 1e-12);
        assert!(pdf[0] > 0.0 && pdf[3] > 0.0);
    }

    #[test]
    fn percentile_basics() {
        let xs: Vec<f64> = (0..101).map(|i| i as f64).collect();
        close(percentile(&xs, 0.0).unwrap(), 0.0, 1e-12);
        close(percentile(&xs, 50.0).unwrap(), 50.0, 1e-12);
        close(percentile(&xs, 100.0).unwrap(), 100.0, 1e-12);
        close(percentile(&xs, 99.9).unwrap(), 99.9, 1e-9);
    }

    #[test]
    fn errors() {
        assert_eq!(kl(&[], &[]), Err(MetricError::EmptyInput));
        assert_eq!(l2(&[0.5], &[0.5, 0.5]), Err(MetricError::LengthMismatch));
        assert_eq!(empirical_entropy(&[1.0], 1), Err(MetricError::TooFewBins));
        assert_eq!(percentile(&[], 50.0), Err(MetricError::EmptyInput));
    }
}
