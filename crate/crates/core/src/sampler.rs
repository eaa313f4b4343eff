//! Reproducible sampling of the two-fold Laplace noise and the Gaussian
//! baseline.
//!
//! Every draw goes through [`NoiseRng`], a ChaCha8 generator addressed by a
//! `(seed, stream)` pair. Distinct streams under one seed yield independent
//! sequences, so per-coordinate or per-step parallel use never shares state.

use alloc::vec::Vec;

use libm::{cos, fabs, log, pow, sin, sqrt};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::mgf::{ComponentDist, CompositionMode, MixtureSpec};

const TWO_PI: f64 = core::f64::consts::TAU;

/// Deterministic generator for all noise in the crate.
pub struct NoiseRng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl NoiseRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        NoiseRng { inner, spare_normal: None }
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            // 53 random mantissa bits
            let u = (self.inner.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0);
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Standard normal via Box-Muller; the second variate of each pair is
    /// cached so consecutive calls cost one transform per two draws.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = sqrt(-2.0 * log(u1));
        self.spare_normal = Some(r * sin(TWO_PI * u2));
        r * cos(TWO_PI * u2)
    }

    /// Exponential with rate `lambda` by CDF inversion.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -log(self.uniform()) / rate
    }

    /// Gamma(shape, scale) via Marsaglia-Tsang squeeze; shapes below one use
    /// the standard boost Gamma(shape + 1) * U^(1/shape).
    pub fn gamma(&mut self, shape: f64, scale: f64) -> f64 {
        if shape < 1.0 {
            let boosted = self.gamma(shape + 1.0, scale);
            return boosted * pow(self.uniform(), 1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (3.0 * sqrt(d));
        loop {
            let x = self.normal();
            let t = 1.0 + c * x;
            if t <= 0.0 {
                continue;
            }
            let v = t * t * t;
            let u = self.uniform();
            if log(u) < 0.5 * x * x + d - d * v + d * log(v) {
                return d * v * scale;
            }
        }
    }

    fn component(&mut self, dist: &ComponentDist) -> f64 {
        match *dist {
            ComponentDist::Gamma { shape, scale } => self.gamma(shape, scale),
            ComponentDist::Exp { rate } => self.exponential(rate),
            ComponentDist::Uniform { lo, hi } => lo + (hi - lo) * self.uniform(),
            ComponentDist::Degenerate { value } => value,
        }
    }

    /// One draw of the inverse scale `Y`.
    ///
    /// Mixture mode picks a component with the normalized weights; linear
    /// mode sums independent component draws scaled by their coefficients,
    /// matching the product form of the composed MGF.
    pub fn inverse_scale(&mut self, spec: &MixtureSpec) -> f64 {
        match spec.mode() {
            CompositionMode::Mixture => {
                if spec.components().len() == 1 {
                    return self.component(&spec.components()[0].dist);
                }
                let weights = spec.normalized_weights();
                let mut u = self.uniform();
                for (w, comp) in weights.iter().zip(spec.components()) {
                    u -= w;
                    if u <= 0.0 {
                        return self.component(&comp.dist);
                    }
                }
                // float round-off on the last boundary
                let last = spec.components().last().expect("spec is non-empty");
                self.component(&last.dist)
            }
            CompositionMode::LinearCombination => spec
                .components()
                .iter()
                .map(|c| c.weight * self.component(&c.dist))
                .sum(),
        }
    }

    /// Laplace with scale `b` by inversion of the symmetric CDF.
    pub fn laplace(&mut self, b: f64) -> f64 {
        let u = self.uniform() - 0.5;
        let mag = -b * log(1.0 - 2.0 * fabs(u));
        if u < 0.0 {
            -mag
        } else {
            mag
        }
    }
}

/// `n` coordinates of the two-fold noise; each coordinate draws its own
/// inverse scale.
pub fn sample_lmo_noise(spec: &MixtureSpec, n: usize, rng: &mut NoiseRng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let y = rng.inverse_scale(spec);
            rng.laplace(1.0 / y)
        })
        .collect()
}

/// `n` iid draws from N(0, sigma^2).
pub fn sample_gaussian_noise(sigma: f64, n: usize, rng: &mut NoiseRng) -> Vec<f64> {
    (0..n).map(|_| sigma * rng.normal()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mgf::WeightedComponent;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        (m, v)
    }

    #[test]
    fn streams_are_deterministic_and_disjoint() {
        let mut a = NoiseRng::new(7, 0);
        let mut b = NoiseRng::new(7, 0);
        let mut c = NoiseRng::new(7, 1);
        let xa: Vec<f64> = (0..16).map(|_| a.uniform()).collect();
        let xb: Vec<f64> = (0..16).map(|_| b.uniform()).collect();
        let xc: Vec<f64> = (0..16).map(|_| c.uniform()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn uniform_moments() {
        let mut rng = NoiseRng::new(1, 0);
        let xs: Vec<f64> = (0..200_000).map(|_| rng.uniform()).collect();
        let (m, v) = mean_var(&xs);
        assert!((m - 0.5).abs() < 3e-3, "mean {m}");
        assert!((v - 1.0 / 12.0).abs() < 2e-3, "var {v}");
        assert!(xs.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn normal_moments() {
        let mut rng = NoiseRng::new(2, 0);
        let xs: Vec<f64> = (0..200_000).map(|_| rng.normal()).collect();
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.01, "mean {m}");
        assert!((v - 1.0).abs() < 0.02, "var {v}");
    }

    #[test]
    fn exponential_moments() {
        let mut rng = NoiseRng::new(3, 0);
        let rate = 2.5;
        let xs: Vec<f64> = (0..200_000).map(|_| rng.exponential(rate)).collect();
        let (m, v) = mean_var(&xs);
        assert!((m - 1.0 / rate).abs() < 5e-3, "mean {m}");
        assert!((v - 1.0 / (rate * rate)).abs() < 5e-3, "var {v}");
    }

    #[test]
    fn gamma_moments_above_and_below_one() {
        for &(shape, scale) in &[(4.0_f64, 0.5_f64), (1.0, 2.0), (0.4, 1.5)] {
            let mut rng = NoiseRng::new(4, 0);
            let xs: Vec<f64> = (0..300_000).map(|_| rng.gamma(shape, scale)).collect();
            let (m, v) = mean_var(&xs);
            let em = shape * scale;
            let ev = shape * scale * scale;
            assert!((m - em).abs() < 0.02 * em.max(1.0), "shape {shape}: mean {m} vs {em}");
            assert!((v - ev).abs() < 0.05 * ev.max(1.0), "shape {shape}: var {v} vs {ev}");
            assert!(xs.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn laplace_moments() {
        let mut rng = NoiseRng::new(5, 0);
        let b = 1.7;
        let xs: Vec<f64> = (0..300_000).map(|_| rng.laplace(b)).collect();
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.02, "mean {m}");
        assert!((v - 2.0 * b * b).abs() < 0.1, "var {v}");
    }

    #[test]
    fn inverse_scale_matches_spec_mean_mixture() {
        let spec = MixtureSpec::new(
            CompositionMode::Mixture,
            vec![
                WeightedComponent { weight: 0.3, dist: ComponentDist::Gamma { shape: 2.0, scale: 0.5 } },
                WeightedComponent { weight: 0.7, dist: ComponentDist::Uniform { lo: 1.0, hi: 3.0 } },
            ],
        )
        .unwrap();
        let mut rng = NoiseRng::new(6, 0);
        let xs: Vec<f64> = (0..300_000).map(|_| rng.inverse_scale(&spec)).collect();
        let (m, _) = mean_var(&xs);
        assert!((m - spec.mean()).abs() < 0.01, "mean {m} vs {}", spec.mean());
    }

    #[test]
    fn inverse_scale_matches_spec_mean_linear() {
        let spec = MixtureSpec::new(
            CompositionMode::LinearCombination,
            vec![
                WeightedComponent { weight: 0.5, dist: ComponentDist::Exp { rate: 4.0 } },
                WeightedComponent { weight: 2.0, dist: ComponentDist::Uniform { lo: 0.5, hi: 1.5 } },
            ],
        )
        .unwrap();
        let mut rng = NoiseRng::new(7, 0);
        let xs: Vec<f64> = (0..300_000).map(|_| rng.inverse_scale(&spec)).collect();
        let (m, _) = mean_var(&xs);
        assert!((m - spec.mean()).abs() < 0.02, "mean {m} vs {}", spec.mean());
    }

    #[test]
    fn degenerate_noise_is_plain_laplace() {
        // with a point mass at y, the two-fold draw must equal Laplace(1/y):
        // check the second moment 2/y^2
        let spec = MixtureSpec::degenerate(0.5);
        let mut rng = NoiseRng::new(8, 0);
        let xs = sample_lmo_noise(&spec, 300_000, &mut rng);
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.03, "mean {m}");
        assert!((v - 8.0).abs() < 0.3, "var {v} vs 8");
    }

    #[test]
    fn gaussian_noise_scales() {
        let mut rng = NoiseRng::new(9, 0);
        let xs = sample_gaussian_noise(3.0, 200_000, &mut rng);
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.05, "mean {m}");
        assert!((v - 9.0).abs() < 0.2, "var {v}");
    }

    #[test]
    fn lmo_noise_mc_usefulness_agrees_with_mgf() {
        // P(|x| <= gamma) = 1 - M(-gamma) for the two-fold noise
        let spec = MixtureSpec::new(
            CompositionMode::Mixture,
            vec![
                WeightedComponent { weight: 0.4, dist: ComponentDist::Gamma { shape: 3.0, scale: 0.4 } },
                WeightedComponent { weight: 0.6, dist: ComponentDist::Uniform { lo: 0.5, hi: 2.0 } },
            ],
        )
        .unwrap();
        let gamma = 1.0;
        let expected = 1.0 - spec.mgf(-gamma).unwrap();
        let mut rng = NoiseRng::new(10, 0);
        let xs = sample_lmo_noise(&spec, 400_000, &mut rng);
        let frac = xs.iter().filter(|x| x.abs() <= gamma).count() as f64 / xs.len() as f64;
        assert!((frac - expected).abs() < 4e-3, "mc {frac} vs closed form {expected}");
    }
}
