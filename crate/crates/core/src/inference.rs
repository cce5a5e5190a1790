//! Gaussian prediction intervals, their exact conditional coverage, and the
//! total-variation distance between two centred normal laws.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{normal_cdf, normal_quantile, Vector};
use crate::shrinkage::{predict, BlockJsFit};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PredictionInterval {
    pub center: f64,
    pub half_width: f64,
    pub alpha: f64,
}

impl PredictionInterval {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn contains(&self, y: f64) -> bool {
        (y - self.center).abs() <= self.half_width
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// `ŷ ± Φ⁻¹(1 − α/2)·ρ̂`.
pub fn build_interval(
    fit: &BlockJsFit,
    x0: &Vector,
    rho_hat_sq: f64,
    alpha: f64,
) -> Result<PredictionInterval> {
    check_alpha(alpha)?;
    if !(rho_hat_sq >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rho_hat_sq must be >= 0, got {rho_hat_sq}"
        )));
    }
    Ok(PredictionInterval {
        center: predict(fit, x0)?,
        half_width: normal_quantile(1.0 - alpha / 2.0) * rho_hat_sq.sqrt(),
        alpha,
    })
}

/// Probability that a `N(0, ρ²)` prediction error lands inside `±Q·ρ̂`.
pub fn conditional_coverage(rho_hat_sq: f64, rho_sq_true: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(rho_sq_true > 0.0) || !(rho_hat_sq >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need rho_sq_true > 0 and rho_hat_sq >= 0, got {rho_sq_true} and {rho_hat_sq}"
        )));
    }
    let q = normal_quantile(1.0 - alpha / 2.0);
    Ok(2.0 * normal_cdf(q * (rho_hat_sq / rho_sq_true).sqrt()) - 1.0)
}

/// Exact total-variation distance between `N(0, v1)` and `N(0, v2)`.
///
/// The densities cross at `±x*` with
/// `x*² = v< v> ln(v>/v<) / (v> − v<)`; the distance is the mass the narrower
/// law puts on `[−x*, x*]` minus the mass the wider law puts there.
pub fn tv_centered_normals(v1: f64, v2: f64) -> Result<f64> {
    if !(v1 > 0.0 && v2 > 0.0) || !v1.is_finite() || !v2.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "variances must be positive, got {v1} and {v2}"
        )));
    }
    if v1 == v2 {
        return Ok(0.0);
    }
    // Scale-free form: only the ratio matters.
    let t = v1.max(v2) / v1.min(v2);
    let x_sq = t * t.ln() / (t - 1.0);
    let x = x_sq.sqrt();
    Ok((2.0 * (normal_cdf(x) - normal_cdf(x / t.sqrt()))).clamp(0.0, 1.0))
}
