//! Collision-free ellipsoid, safety cost and the moment-robust CVaR bound.
//!
//! The free set around the debris mean is the ellipsoid
//! `{r : (r − μ)ᵀE(r − μ) − 1 ≤ 0}`. For every distribution of the debris
//! position with mean `μ` and covariance `Σ`, the worst-case CVaR at level ε of
//! that safety cost is `−1 + tr(ΣE)/ε`; the constraint is that this is ≤ 0.
//!
//! [`empirical_var`] and [`empirical_cvar`] are sample estimators used to check
//! the bound from the outside.

use crate::dynamics::{Mat3, Vec3};
use crate::error::{Error, Result};

/// Smallest admissible sphere radius, km.
pub const RHO_MIN: f64 = 1e-6;
/// Per-step risk charged when no admissible ellipsoid exists.
pub const INFEASIBLE_RISK: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafeEllipsoid {
    /// Shape matrix, km⁻².
    pub shape: Mat3,
    /// km
    pub center: Vec3,
}

impl SafeEllipsoid {
    pub fn new(shape: Mat3, center: Vec3) -> Result<Self> {
        if (shape - shape.transpose()).abs().max() > 1e-12 * shape.abs().max() {
            return Err(Error::Domain("ellipsoid shape must be symmetric".into()));
        }
        if shape.cholesky().is_none() {
            return Err(Error::Domain("ellipsoid shape must be positive definite".into()));
        }
        Ok(SafeEllipsoid { shape, center })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FreeSet {
    Ellipsoid(SafeEllipsoid),
    /// The satellite is within `d_thres + RHO_MIN` of the debris mean.
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskParams {
    /// Allowed collision probability.
    pub epsilon: f64,
    /// Collision distance, km.
    pub d_thres: f64,
    /// Discount in the trajectory risk.
    pub gamma: f64,
}

impl RiskParams {
    pub const DEFAULT_GAMMA: f64 = 0.95;

    pub fn new(epsilon: f64, d_thres: f64, gamma: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Domain(format!("epsilon must be in (0, 1), got {epsilon}")));
        }
        if !(d_thres.is_finite() && d_thres > 0.0) {
            return Err(Error::Domain(format!("d_thres must be positive, got {d_thres}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Domain(format!("gamma must be in (0, 1], got {gamma}")));
        }
        Ok(RiskParams {
            epsilon,
            d_thres,
            gamma,
        })
    }
}

/// Largest sphere about `mu_d` that stays clear of the `d_thres`-ball around the
/// satellite: `E = I/ρ²` with `ρ = ‖r_s − μ_d‖ − d_thres`.
pub fn build_safe_ellipsoid(r_s: &Vec3, mu_d: &Vec3, d_thres: f64) -> FreeSet {
    let separation = (r_s - mu_d).norm();
    if !(separation > d_thres + RHO_MIN) {
        return FreeSet::Infeasible;
    }
    let rho = separation - d_thres;
    FreeSet::Ellipsoid(SafeEllipsoid {
        shape: Mat3::identity() / (rho * rho),
        center: *mu_d,
    })
}

/// `(r − c)ᵀE(r − c) − 1`; non-positive inside the free set.
pub fn safety_cost(r: &Vec3, ell: &SafeEllipsoid) -> f64 {
    let d = r - ell.center;
    d.dot(&(ell.shape * d)) - 1.0
}

/// Worst-case CVaR over the moment ambiguity set: `−1 + tr(ΣE)/ε`.
pub fn dr_cvar_value(sigma: &Mat3, ell: &SafeEllipsoid, epsilon: f64) -> f64 {
    -1.0 + (sigma * ell.shape).trace() / epsilon
}

/// Per-step risk for the optimizer: the closed form, or [`INFEASIBLE_RISK`].
pub fn step_risk(r_s: &Vec3, mu_d: &Vec3, sigma: &Mat3, risk: &RiskParams) -> f64 {
    match build_safe_ellipsoid(r_s, mu_d, risk.d_thres) {
        FreeSet::Ellipsoid(ell) => dr_cvar_value(sigma, &ell, risk.epsilon),
        FreeSet::Infeasible => INFEASIBLE_RISK,
    }
}

/// Discounted sum `Σ_{k=1}^{K} γ^k·risk_k`.
pub fn trajectory_risk(risks: &[f64], gamma: f64) -> f64 {
    let mut weight = 1.0;
    risks
        .iter()
        .map(|r| {
            weight *= gamma;
            weight * r
        })
        .sum()
}

fn tail_setup(samples: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Domain(format!("epsilon must be in (0, 1], got {epsilon}")));
    }
    let needed = (1.0 / epsilon - 1e-9).ceil() as usize;
    if samples.len() < needed.max(1) {
        return Err(Error::Domain(format!(
            "need at least {needed} samples at epsilon {epsilon}, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("samples contain NaN".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

/// Smallest `γ` such that at most `ε·N` samples exceed it.
pub fn empirical_var(samples: &[f64], epsilon: f64) -> Result<f64> {
    let sorted = tail_setup(samples, epsilon)?;
    let n = sorted.len();
    let allowed = ((epsilon * n as f64) * (1.0 + 1e-12)).floor() as usize;
    Ok(sorted[n - 1 - allowed.min(n - 1)])
}

/// Mean of the worst `⌈ε·N⌉` samples.
pub fn empirical_cvar(samples: &[f64], epsilon: f64) -> Result<f64> {
    let sorted = tail_setup(samples, epsilon)?;
    let n = sorted.len();
    let tail = (((epsilon * n as f64) * (1.0 - 1e-12)).ceil() as usize).clamp(1, n);
    Ok(sorted[n - tail..].iter().sum::<f64>() / tail as f64)
}
