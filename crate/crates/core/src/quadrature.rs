//! Numeric Renyi-divergence oracle for the two-fold noise, used to
//! cross-check the closed-form accountant through an independent code path.
//!
//! The accountant's quantity treats the inverse-scale draw `Y` as released
//! randomness: `exp((alpha-1) D_alpha) = E_Y[ int p_y(x)^alpha
//! p_y(x-c)^(1-alpha) dx ]` with `p_y` the Laplace density of scale `1/y`.
//! [`renyi_divergence_numeric`] reproduces exactly that object with nested
//! quadrature (inner x-integral, outer expectation over the component
//! densities), no MGF algebra involved.
//!
//! [`marginal_renyi_divergence_numeric`] instead integrates the marginal
//! mixture density `p(x) = (1/2) M'(-|x|)`; by data processing it is a lower
//! bound on the accountant's value (strictly below it for spread-out `Y`).

use alloc::vec::Vec;
use core::fmt;

use libm::{exp, fabs, lgamma, log, pow};

use crate::mgf::{ComponentDist, CompositionMode, MixtureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureError {
    /// Error estimate failed to drop below tolerance within the depth limit.
    NonConvergence,
    /// Renyi order must be > 1.
    InvalidOrder,
    /// The oracle handles mixture mode only.
    UnsupportedMode,
}

impl fmt::Display for QuadratureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuadratureError::NonConvergence => write!(f, "adaptive quadrature did not converge"),
            QuadratureError::InvalidOrder => write!(f, "Renyi order must exceed 1"),
            QuadratureError::UnsupportedMode => {
                write!(f, "numeric oracle supports mixture mode only")
            }
        }
    }
}

const MAX_DEPTH: u32 = 48;

fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, QuadratureError> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, fa, m, fm, flm);
    let right = simpson(m, fm, b, fb, frm);
    let delta = left + right - whole;
    if fabs(delta) <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(QuadratureError::NonConvergence);
    }
    let l = adaptive_step(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)?;
    let r = adaptive_step(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64, QuadratureError> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, fa, b, fb, fm);
    adaptive_step(&f, a, fa, b, fb, fm, whole, tol, MAX_DEPTH)
}

/// Quadrature over `[a, b]` split into geometric panels so integrands with
/// many orders of magnitude of variation stay cheap; relative tolerance.
fn panelled(
    f: &impl Fn(f64) -> f64,
    cuts: &[f64],
    rel_tol: f64,
) -> Result<f64, QuadratureError> {
    let mut coarse = 0.0;
    for w in cuts.windows(2) {
        let m = 0.5 * (w[0] + w[1]);
        coarse += simpson(w[0], f(w[0]), w[1], f(w[1]), f(m)).max(0.0);
    }
    let tol = coarse.max(1e-300) * rel_tol / cuts.len() as f64;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += adaptive_simpson(f, w[0], w[1], tol)?;
    }
    Ok(total)
}

/// Geometric cut sequence from `lo` to `hi` anchored at scale `r0`.
fn geometric_cuts(lo: f64, hi: f64, r0: f64) -> Vec<f64> {
    let mut cuts = alloc::vec![lo];
    let mut r = r0.max((hi - lo) * 1e-12);
    while lo + r < hi {
        cuts.push(lo + r);
        r *= 2.0;
    }
    cuts.push(hi);
    cuts
}

/// Two-fold noise density at `x` (center 0): `(1/2) M'(-|x|)`.
pub fn noise_density(spec: &MixtureSpec, x: f64) -> f64 {
    0.5 * spec.mgf_derivative(-fabs(x)).expect("negative arguments are always in-domain")
}

/// `exp(-y c (alpha-1)) * int Lap_{1/y}(x)^alpha Lap_{1/y}(x - c)^(1-alpha) dx`
/// by quadrature, split at the density kinks 0 and `c`. The prefactor
/// normalizes by the integrand's peak so nothing overflows even far from
/// the MGF pole; callers multiply the peak factor back in log space.
fn pair_integral_scaled(y: f64, c: f64, alpha: f64) -> Result<f64, QuadratureError> {
    // the unscaled value is 1 + O((y c)^2); below this threshold quadrature
    // ranges blow up for nothing
    if y * c * alpha < 1e-7 {
        return Ok(exp(-y * c * (alpha - 1.0)));
    }
    // phi(x) - phi(0) >= 0, with phi the pair exponent and phi(0) its minimum
    let psi = |x: f64| {
        let phi = alpha * fabs(x) + (1.0 - alpha) * fabs(x - c) + (alpha - 1.0) * c;
        0.5 * y * exp(-y * phi)
    };
    let lx = 45.0 / y;
    let r0 = (1.0 / y).min(c) / 8.0;
    let mut total = 0.0;
    // left tail grows toward 0; mirror the geometric cuts
    let mut left: Vec<f64> = geometric_cuts(0.0, lx, r0).iter().map(|&t| -t).collect();
    left.reverse();
    total += panelled(&psi, &left, 1e-11)?;
    total += panelled(&psi, &geometric_cuts(0.0, c, c / 8.0), 1e-11)?;
    let right: Vec<f64> = geometric_cuts(0.0, lx, r0).iter().map(|&t| c + t).collect();
    total += panelled(&psi, &right, 1e-11)?;
    Ok(total)
}

/// Lower incomplete gamma `int_0^x t^(a-1) e^-t dt` by the standard series;
/// accurate for the small `x` used here.
fn lower_incomplete_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut n = 1.0;
    while fabs(term) > 1e-17 * fabs(sum) && n < 500.0 {
        term *= x / (a + n);
        sum += term;
        n += 1.0;
    }
    pow(x, a) * exp(-x) * sum
}

/// `E_{Y ~ dist}[ laplace_pair_integral(Y) ]`, or `+inf` when the
/// expectation diverges (the accountant's infeasible-order case).
fn component_expectation(
    dist: &ComponentDist,
    c: f64,
    alpha: f64,
) -> Result<f64, QuadratureError> {
    // peak-scaled inner integral; the full value is exp(y c (alpha-1)) * ft
    let ft = |y: f64| pair_integral_scaled(y, c, alpha).unwrap_or(f64::NAN);
    let peak = c * (alpha - 1.0);
    match *dist {
        ComponentDist::Degenerate { value } => {
            if value * peak > 700.0 {
                return Ok(f64::INFINITY);
            }
            Ok(exp(value * peak) * pair_integral_scaled(value, c, alpha)?)
        }
        ComponentDist::Uniform { lo, hi } => {
            let f = |y: f64| exp(y * peak) * ft(y);
            let v = adaptive_simpson(&f, lo, hi, 1e-11 * (hi - lo) * f(hi).max(1.0))?;
            Ok(v / (hi - lo))
        }
        ComponentDist::Exp { rate } => {
            // integrand ~ rate * exp(-s y) with s the pole gap
            let s = rate - peak;
            if s <= 0.0 {
                return Ok(f64::INFINITY);
            }
            let r = 50.0 / s;
            let g = |y: f64| rate * exp(-s * y) * ft(y);
            panelled(&g, &geometric_cuts(0.0, r, (1.0 / rate).min(r) / 8.0), 1e-10)
        }
        ComponentDist::Gamma { shape, scale } => {
            let s = 1.0 / scale - peak;
            if s <= 0.0 {
                return Ok(f64::INFINITY);
            }
            // range: log-integrand ~55 nats below its scale at the cutoff
            let mut r = scale * (shape + 1.0);
            while (shape - 1.0) * log(r / scale) - s * r > -55.0 && r < 1e9 {
                r *= 1.4;
            }
            // head [0, y0]: the y^(shape-1) weight defeats quadrature near 0
            // for non-integer shapes, but the smooth inner factor is locally
            // a quadratic, whose Gamma-weighted moments are incomplete gamma
            // functions
            let y0 = (scale / 8.0).min(0.02 / (c * alpha)).min(r / 8.0);
            let t_at = |y: f64| exp(y * peak) * ft(y);
            let (t1, t2) = (t_at(0.5 * y0), t_at(y0));
            if t1.is_nan() || t2.is_nan() {
                return Err(QuadratureError::NonConvergence);
            }
            // quadratic through (0, 1), (y0/2, t1), (y0, t2)
            let a1 = (4.0 * t1 - t2 - 3.0) / y0;
            let a2 = (t2 - 2.0 * t1 + 1.0) * 2.0 / (y0 * y0);
            let x0 = y0 / scale;
            let lg = lgamma(shape);
            let head = (lower_incomplete_gamma(shape, x0)
                + a1 * scale * lower_incomplete_gamma(shape + 1.0, x0)
                + a2 * scale * scale * lower_incomplete_gamma(shape + 2.0, x0))
                / exp(lg);
            // tail [y0, r] in log space so the peak factor never overflows
            let g = |y: f64| exp((shape - 1.0) * log(y) - s * y - lg - shape * log(scale)) * ft(y);
            let tail = panelled(&g, &geometric_cuts(y0, r, y0), 1e-10)?;
            Ok(head + tail)
        }
    }
}

/// Order-`alpha` Renyi divergence of the (scale-releasing) two-fold
/// mechanism between centers 0 and `c`, by nested quadrature. Matches the
/// closed-form accountant; independent of the MGF algebra.
pub fn renyi_divergence_numeric(
    spec: &MixtureSpec,
    c: f64,
    alpha: f64,
) -> Result<f64, QuadratureError> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(QuadratureError::InvalidOrder);
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    if spec.mode() != CompositionMode::Mixture {
        return Err(QuadratureError::UnsupportedMode);
    }
    let c = fabs(c);
    let weights = spec.normalized_weights();
    let mut total = 0.0;
    for (w, comp) in weights.iter().zip(spec.components()) {
        let t = component_expectation(&comp.dist, c, alpha)?;
        if t.is_nan() {
            return Err(QuadratureError::NonConvergence);
        }
        total += w * t;
    }
    Ok((log(total) / (alpha - 1.0)).max(0.0))
}

/// Order-`alpha` Renyi divergence between the *marginal* noise densities at
/// centers 0 and `c`. A lower bound on [`renyi_divergence_numeric`] by data
/// processing; exposed for diagnostics, not used by the accountant.
pub fn marginal_renyi_divergence_numeric(
    spec: &MixtureSpec,
    c: f64,
    alpha: f64,
) -> Result<f64, QuadratureError> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(QuadratureError::InvalidOrder);
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    let c = fabs(c);
    // truncation radius: the tail mass of |noise| beyond l is exactly M(-l)
    let mut l = 8.0 * c.max(1.0);
    while spec.mgf(-l).expect("in-domain") > 1e-13 && l < 1e16 {
        l *= 2.0;
    }
    let integrand = |x: f64| {
        let lp0 = log(noise_density(spec, x));
        let lpc = log(noise_density(spec, x - c));
        exp(alpha * lp0 + (1.0 - alpha) * lpc)
    };
    let r0 = (c.max(1.0) / 8.0).min(1.0);
    let mut cuts: Vec<f64> = geometric_cuts(0.0, l, r0).iter().map(|&t| -t).collect();
    cuts.reverse();
    cuts.extend(geometric_cuts(0.0, c, c / 8.0).iter().skip(1));
    cuts.extend(geometric_cuts(0.0, l, r0).iter().skip(1).map(|&t| c + t));
    let total = panelled(&integrand, &cuts, 1e-10)?;
    Ok((log(total) / (alpha - 1.0)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accountant::lmo_rdp;
    use crate::mgf::{CompositionMode, WeightedComponent};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn simpson_polynomial_exact_and_smooth() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1e-12).unwrap();
        close(v, 2.0, 1e-10);
        let v = adaptive_simpson(|x| libm::exp(-x * x), -6.0, 6.0, 1e-12).unwrap();
        close(v, libm::sqrt(core::f64::consts::PI), 1e-9);
    }

    #[test]
    fn density_integrates_to_one() {
        let spec = MixtureSpec::new(
            CompositionMode::Mixture,
            vec![
                WeightedComponent { weight: 0.5, dist: ComponentDist::Gamma { shape: 2.0, scale: 0.5 } },
                WeightedComponent { weight: 0.5, dist: ComponentDist::Uniform { lo: 0.5, hi: 2.0 } },
            ],
        )
        .unwrap();
        let f = |x: f64| noise_density(&spec, x);
        let mass = adaptive_simpson(f, -200.0, 200.0, 1e-10).unwrap();
        // the mass beyond +/-200 is exactly M(-200)
        let tail = spec.mgf(-200.0).unwrap();
        close(mass + tail, 1.0, 1e-7);
    }

    #[test]
    fn degenerate_matches_closed_form() {
        let spec = MixtureSpec::degenerate(1.0);
        // hand evaluation: ln( (2/3) e + (1/3) e^-2 )
        let expect = (2.0 / 3.0 * libm::exp(1.0) + libm::exp(-2.0) / 3.0).ln();
        let v = renyi_divergence_numeric(&spec, 1.0, 2.0).unwrap();
        close(v, expect, 1e-7);
        for &alpha in &[2.0, 4.0, 8.0, 16.0, 32.0] {
            for &c in &[0.5, 1.0, 2.0] {
                let oracle = renyi_divergence_numeric(&spec, c, alpha).unwrap();
                close(oracle, lmo_rdp(&spec, c, alpha).unwrap(), 1e-6);
            }
        }
    }

    #[test]
    fn zero_gap_is_zero() {
        let spec = MixtureSpec::degenerate(2.0);
        assert!(renyi_divergence_numeric(&spec, 0.0, 2.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn mixture_matches_closed_form() {
        let spec = MixtureSpec::new(
            CompositionMode::Mixture,
            vec![
                WeightedComponent { weight: 0.3, dist: ComponentDist::Gamma { shape: 2.0, scale: 0.1 } },
                WeightedComponent { weight: 0.7, dist: ComponentDist::Uniform { lo: 0.4, hi: 1.2 } },
            ],
        )
        .unwrap();
        for &alpha in &[2.0, 4.0, 8.0] {
            let oracle = renyi_divergence_numeric(&spec, 1.0, alpha).unwrap();
            close(oracle, lmo_rdp(&spec, 1.0, alpha).unwrap(), 1e-5);
        }
    }

    #[test]
    fn exponential_component_matches_closed_form() {
        let spec = MixtureSpec::new(
            CompositionMode::Mixture,
            vec![WeightedComponent { weight: 1.0, dist: ComponentDist::Exp { rate: 2.0 } }],
        )
        .unwrap();
        // alpha = 2, c = 1: ln( (2/3) M(1) + (1/3) M(-2) ) = ln 1.5
        let v = renyi_divergence_numeric(&spec, 1.0, 2.0).unwrap();
        close(v, 1.5_f64.ln(), 1e-6);
        close(v, lmo_rdp(&spec, 1.0, 2.0).unwrap(), 1e-6);
    }

    #[test]
    fn small_shape_gamma_matches_closed_form() {
        let spec = MixtureSpec::new(
            CompositionMode::Mixture,
            vec![WeightedComponent { weight: 1.0, dist: ComponentDist::Gamma { shape: 0.5, scale: 0.2 } }],
        )
        .unwrap();
        let v = renyi_divergence_numeric(&spec, 1.0, 2.0).unwrap();
        close(v, lmo_rdp(&spec, 1.0, 2.0).unwrap(), 1e-5);
    }

    #[test]
    fn infeasible_order_is_infinite_in_both() {
        let spec = MixtureSpec::new(
            CompositionMode::Mixture,
            vec![WeightedComponent { weight: 1.0, dist: ComponentDist::Exp { rate: 1.0 } }],
        )
        .unwrap();
        // alpha = 4, c = 1 needs M(3) but the pole is at 1
        assert!(renyi_divergence_numeric(&spec, 1.0, 4.0).unwrap().is_infinite());
        assert!(lmo_rdp(&spec, 1.0, 4.0).unwrap().is_infinite());
    }

    #[test]
    fn marginal_is_a_lower_bound() {
        // hiding the scale draw cannot increase the divergence; for a spread
        // out Y the gap is strictly positive
        let spec = MixtureSpec::new(
            CompositionMode::Mixture,
            vec![WeightedComponent { weight: 1.0, dist: ComponentDist::Exp { rate: 2.0 } }],
        )
        .unwrap();
        let marginal = marginal_renyi_divergence_numeric(&spec, 1.0, 2.0).unwrap();
        let released = renyi_divergence_numeric(&spec, 1.0, 2.0).unwrap();
        assert!(marginal < released - 0.05, "{marginal} vs {released}");
        // for a point mass the two coincide
        let point = MixtureSpec::degenerate(1.0);
        let m = marginal_renyi_divergence_numeric(&point, 1.0, 2.0).unwrap();
        let r = renyi_divergence_numeric(&point, 1.0, 2.0).unwrap();
        close(m, r, 1e-6);
    }
}
