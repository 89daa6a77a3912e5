//! Privacy accounting for the slicing mechanism `(U, XU + V)`.
//!
//! The mechanism with `U_ij ~ N(0, 1/d)` and `V_ij ~ N(0, sigma^2)` is
//! `(alpha, m' alpha / (2 sigma^2 (d - gamma)))`-RDP whenever
//! `gamma = (alpha^2 - alpha) / sigma^2 < d`. Converting to `(epsilon, delta)`
//! adds `ln(1/delta) / (alpha - 1)`; the order is then optimized numerically.
//! Everything here is in nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Margin kept away from both ends of the feasible order interval.
pub const ORDER_MARGIN: f64 = 1e-9;
/// Initial noise bracket searched by [`calibrate_sigma`].
pub const SIGMA_FLOOR: f64 = 1e-3;
pub const SIGMA_CEILING: f64 = 1e6;
const CALIBRATION_ITERS: usize = 200;
const CALIBRATION_REL_TOL: f64 = 1e-4;
const GOLDEN_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MechanismDims {
    pub d: usize,
    pub k: usize,
    pub m: usize,
}

impl MechanismDims {
    pub fn new(d: usize, k: usize, m: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("d must be at least 1".into()));
        }
        if k == 0 || k > d {
            return Err(Error::InvalidConfig(format!(
                "slice dimension k = {k} must satisfy 1 <= k <= d = {d}"
            )));
        }
        if m == 0 {
            return Err(Error::InvalidConfig("number of slices m must be at least 1".into()));
        }
        Ok(MechanismDims { d, k, m })
    }

    /// Total number of projected columns, `k * m`.
    pub fn m_prime(&self) -> usize {
        self.k * self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenyiPoint {
    pub alpha: f64,
    pub eps_rdp: f64,
}

/// `gamma = (alpha^2 - alpha) / sigma^2`.
pub fn gamma(sigma: f64, alpha: f64) -> f64 {
    (alpha * alpha - alpha) / (sigma * sigma)
}

/// Largest admissible order: positive root of `alpha^2 - alpha = d sigma^2`.
pub fn alpha_max(sigma: f64, d: usize) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * d as f64 * sigma * sigma).sqrt())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::domain("sigma", sigma, "(0, inf)"))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 1.0 {
        Ok(())
    } else {
        Err(Error::domain("alpha", alpha, "(1, inf)"))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::domain("delta", delta, "(0, 1)"))
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain("subsampling rate", rate, "(0, 1]"))
    }
}

/// RDP bound for `m_prime` released columns of a `d`-dimensional table.
pub fn renyi_bound(sigma: f64, d: usize, m_prime: usize, alpha: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_alpha(alpha)?;
    let g = gamma(sigma, alpha);
    let d_f = d as f64;
    if g >= d_f {
        return Err(Error::InfeasibleOrder { gamma: g, d });
    }
    Ok(m_prime as f64 * alpha / (2.0 * sigma * sigma * (d_f - g)))
}

pub fn rdp_epsilon(sigma: f64, dims: MechanismDims, alpha: f64) -> Result<f64> {
    renyi_bound(sigma, dims.d, dims.m_prime(), alpha)
}

/// `(alpha, eps)`-RDP implies `(eps + ln(1/delta)/(alpha-1), delta)`-DP.
pub fn dp_from_rdp(point: RenyiPoint, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    check_alpha(point.alpha)?;
    Ok(point.eps_rdp + conversion_term(point.alpha, delta))
}

fn conversion_term(alpha: f64, delta: f64) -> f64 {
    (1.0 / delta).ln() / (alpha - 1.0)
}

/// `(epsilon, delta)` guarantee of the mechanism at a fixed order.
pub fn epsilon_at(sigma: f64, dims: MechanismDims, alpha: f64, delta: f64) -> Result<f64> {
    let eps_rdp = rdp_epsilon(sigma, dims, alpha)?;
    dp_from_rdp(RenyiPoint { alpha, eps_rdp }, delta)
}

/// Closed-form order `1 + sqrt(sigma^2 d ln(1/delta) / m')`, valid when `gamma <= d/2`.
pub fn approximate_alpha(sigma: f64, dims: MechanismDims, delta: f64) -> f64 {
    let log_inv_delta = (1.0 / delta).ln();
    1.0 + (sigma * sigma * dims.d as f64 * log_inv_delta / dims.m_prime() as f64).sqrt()
}

/// Open interval of admissible orders, shrunk by [`ORDER_MARGIN`] on each side.
pub fn feasible_orders(sigma: f64, d: usize) -> Result<(f64, f64)> {
    check_sigma(sigma)?;
    let lo = 1.0 + ORDER_MARGIN;
    let hi = alpha_max(sigma, d) - ORDER_MARGIN;
    if !(hi > lo) {
        return Err(Error::NoFeasibleOrder {
            d_sigma2: d as f64 * sigma * sigma,
        });
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalOrder {
    pub alpha_star: f64,
    pub epsilon_star: f64,
}

/// Minimizes the `(epsilon, delta)` bound over the order.
///
/// The objective is a sum of a convex increasing and a convex decreasing term
/// on the feasible interval, so a bracket grown outward from the closed-form
/// seed followed by golden-section search finds the minimum.
pub fn optimize_alpha(sigma: f64, dims: MechanismDims, delta: f64) -> Result<OptimalOrder> {
    check_delta(delta)?;
    let (lo, hi) = feasible_orders(sigma, dims.d)?;
    let eps = |a: f64| epsilon_at(sigma, dims, a, delta).unwrap_or(f64::INFINITY);

    if dims.m_prime() == 0 {
        return Ok(OptimalOrder {
            alpha_star: hi,
            epsilon_star: eps(hi),
        });
    }

    let seed = approximate_alpha(sigma, dims, delta).clamp(lo, hi);
    let f_seed = eps(seed);

    let mut step = 0.1 * (seed - 1.0).max(ORDER_MARGIN);
    let mut left = (seed - step).max(lo);
    while left > lo && eps(left) < f_seed {
        step *= 2.0;
        left = (seed - step).max(lo);
    }
    let mut step = 0.1 * (seed - 1.0).max(ORDER_MARGIN);
    let mut right = (seed + step).min(hi);
    while right < hi && eps(right) < f_seed {
        step *= 2.0;
        right = (seed + step).min(hi);
    }

    let (alpha, value) = golden_section(&eps, left, right);
    let (alpha_star, epsilon_star) = [(alpha, value), (seed, f_seed), (left, eps(left)), (right, eps(right))]
        .into_iter()
        .fold((seed, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
    Ok(OptimalOrder {
        alpha_star,
        epsilon_star,
    })
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..GOLDEN_ITERS {
        if (b - a).abs() <= 4.0 * f64::EPSILON * c.abs().max(1.0) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn optimal_epsilon(sigma: f64, dims: MechanismDims, delta: f64) -> f64 {
    optimize_alpha(sigma, dims, delta)
        .map(|o| o.epsilon_star)
        .unwrap_or(f64::INFINITY)
}

/// Smallest-noise `sigma` whose optimized epsilon stays within
/// `[target (1 - 1e-4), target]`.
pub fn calibrate_sigma(epsilon_target: f64, delta: f64, dims: MechanismDims) -> Result<f64> {
    if !(epsilon_target.is_finite() && epsilon_target > 0.0) {
        return Err(Error::domain("epsilon target", epsilon_target, "(0, inf)"));
    }
    check_delta(delta)?;
    let eps = |s: f64| optimal_epsilon(s, dims, delta);

    let mut hi = SIGMA_CEILING;
    let at_ceiling = eps(hi);
    if at_ceiling > epsilon_target {
        return Err(Error::UnreachableBudget {
            target: epsilon_target,
            floor: at_ceiling,
            sigma_ceiling: SIGMA_CEILING,
        });
    }
    let mut lo = SIGMA_FLOOR;
    while eps(lo) <= epsilon_target {
        if lo < 1e-12 {
            return Ok(lo);
        }
        hi = lo;
        lo /= 10.0;
    }

    let lower_edge = epsilon_target * (1.0 - CALIBRATION_REL_TOL);
    for _ in 0..CALIBRATION_ITERS {
        if eps(hi) >= lower_edge {
            break;
        }
        let mid = (lo * hi).sqrt();
        if eps(mid) > epsilon_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Poisson subsampling at `rate` turns `(eps, delta)` into
/// `(ln(1 + rate (e^eps - 1)), rate delta)`.
pub fn amplify(epsilon: f64, delta: f64, rate: f64) -> Result<(f64, f64)> {
    check_rate(rate)?;
    check_delta(delta)?;
    Ok(((rate * epsilon.exp_m1()).ln_1p(), rate * delta))
}

/// Inverse of [`amplify`]: the mechanism-level guarantee that amplifies to
/// `(epsilon, delta)` at `rate`.
pub fn deamplify(epsilon: f64, delta: f64, rate: f64) -> Result<(f64, f64)> {
    check_rate(rate)?;
    check_delta(delta)?;
    let eps = (epsilon.exp_m1() / rate).ln_1p();
    let del = delta / rate;
    if del >= 1.0 {
        return Err(Error::domain("delta / rate", del, "(0, 1)"));
    }
    Ok((eps, del))
}

/// RDP of a fixed (non-random) projection with orthonormal slice blocks:
/// `m alpha / (2 sigma^2)`.
pub fn deterministic_rdp(sigma: f64, m: usize, alpha: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_alpha(alpha)?;
    Ok(m as f64 * alpha / (2.0 * sigma * sigma))
}

/// [`deterministic_rdp`] converted to `(epsilon, delta)`.
pub fn deterministic_epsilon(sigma: f64, m: usize, alpha: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(deterministic_rdp(sigma, m, alpha)? + conversion_term(alpha, delta))
}

/// Full accounting trail for one release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    /// Final epsilon, after amplification when subsampling was applied.
    pub epsilon: f64,
    pub delta: f64,
    pub alpha_star: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub dims: MechanismDims,
    pub subsample_rate: Option<f64>,
    /// Guarantee of the mechanism on the rows it actually saw.
    pub mechanism_epsilon: f64,
    pub mechanism_delta: f64,
    pub rdp_epsilon: f64,
    pub approximate_alpha: f64,
    /// Same order and delta, fixed orthonormal projection instead of a random one.
    pub deterministic_epsilon: f64,
}

impl PrivacyReport {
    /// Accounting for a known `sigma`; `delta` is the mechanism-level delta.
    pub fn for_sigma(
        sigma: f64,
        dims: MechanismDims,
        delta: f64,
        subsample_rate: Option<f64>,
    ) -> Result<Self> {
        let opt = optimize_alpha(sigma, dims, delta)?;
        let (epsilon, final_delta) = match subsample_rate {
            Some(rate) => amplify(opt.epsilon_star, delta, rate)?,
            None => (opt.epsilon_star, delta),
        };
        Ok(PrivacyReport {
            epsilon,
            delta: final_delta,
            alpha_star: opt.alpha_star,
            sigma,
            gamma: gamma(sigma, opt.alpha_star),
            dims,
            subsample_rate,
            mechanism_epsilon: opt.epsilon_star,
            mechanism_delta: delta,
            rdp_epsilon: rdp_epsilon(sigma, dims, opt.alpha_star)?,
            approximate_alpha: approximate_alpha(sigma, dims, delta),
            deterministic_epsilon: deterministic_epsilon(sigma, dims.m, opt.alpha_star, delta)?,
        })
    }

    /// Calibrates `sigma` so the final (amplified) guarantee meets `(epsilon, delta)`.
    pub fn calibrate(
        epsilon: f64,
        delta: f64,
        dims: MechanismDims,
        subsample_rate: Option<f64>,
    ) -> Result<Self> {
        let (eps_mech, delta_mech) = match subsample_rate {
            Some(rate) => deamplify(epsilon, delta, rate)?,
            None => (epsilon, delta),
        };
        let sigma = calibrate_sigma(eps_mech, delta_mech, dims)?;
        Self::for_sigma(sigma, dims, delta_mech, subsample_rate)
    }
}
