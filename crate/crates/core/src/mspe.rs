//! Conditional mean-squared prediction error of a fitted model: the oracle
//! value, its term-by-term expansion, the data-driven estimator and the
//! deterministic normaliser used by the concentration lemmas.

use serde::Serialize;

use crate::dgp::{schur_complement, CandidateModel, ConditionalParams, TrainingSample};
use crate::error::{Error, Result};
use crate::numerics::{
    least_squares_matrix, projection_complement, quad_form, select_columns, spd_inverse, Matrix,
};
use crate::shrinkage::BlockJsFit;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MspeReport {
    pub rho_sq_true: f64,
    pub rho_sq_hat: f64,
    /// `ln(ρ̂²/ρ²)`; `+∞` when `ρ̂² = 0`.
    pub log_ratio: f64,
}

impl MspeReport {
    pub fn new(rho_sq_true: f64, rho_sq_hat: f64) -> Self {
        let log_ratio = if rho_sq_hat == 0.0 {
            f64::INFINITY
        } else {
            (rho_sq_hat / rho_sq_true).ln()
        };
        Self {
            rho_sq_true,
            rho_sq_hat,
            log_ratio,
        }
    }
}

/// `ρ² = (θ̂ − θ)'S(θ̂ − θ) + σ²(m)`.
pub fn true_mspe(fit: &BlockJsFit, cp: &ConditionalParams) -> Result<f64> {
    if fit.theta_bjs.len() != cp.theta.len() {
        return Err(Error::Dimension(
            "fit and conditional parameters disagree on |m|".into(),
        ));
    }
    let e = &fit.theta_bjs - &cp.theta;
    Ok(quad_form(&e, &cp.s, &e) + cp.cond_var)
}

/// The same quantity assembled from its eleven shrinkage-weighted pieces
/// plus the noise term, written in terms of the OLS error, the block-1
/// projection error and the Schur-complement part of the signal.
pub fn true_mspe_expanded(
    fit: &BlockJsFit,
    cp: &ConditionalParams,
    sample: &TrainingSample,
    m: &CandidateModel,
) -> Result<f64> {
    let (k1, k2) = (m.size1(), m.size2());
    let s = &cp.s;
    let s11 = s.view((0, 0), (k1, k1)).into_owned();
    let s12 = s.view((0, k1), (k1, k2)).into_owned();
    let s11_inv = spd_inverse(&s11)?;
    let schur = schur_complement(s, k1)?;

    let theta1 = cp.theta.rows(0, k1).into_owned();
    let theta2 = cp.theta.rows(k1, k2).into_owned();
    let z1 = select_columns(&sample.x, &m.block1);
    let z2 = select_columns(&sample.x, &m.block2);
    let z2_tilde = &z2 - &z1 * (&s11_inv * &s12);
    // H = (Z₁'Z₁)⁻¹Z₁'Z̃₂
    let h = least_squares_matrix(&z1, &z2_tilde)?;
    let h_theta2 = &h * &theta2;
    let theta1_star = &theta1 + &fit.cross * &theta2;
    let v = &s11 * &theta1 + &s12 * &theta2;

    let ols = fit.theta_ols();
    let e = &ols - &cp.theta;
    let e1s = &fit.theta1_star_ls - &theta1_star;
    let e2 = &fit.theta2_ls - &theta2;
    let (a1, a2, s2) = (fit.a1, fit.a2, cp.cond_var);
    let signal = quad_form(&cp.theta, s, &cp.theta);
    let signal2 = quad_form(&theta2, &schur, &theta2);
    let ht_v = h.transpose() * &v;
    let ht_s11_h_theta2 = h.transpose() * (&s11 * &h_theta2);
    let s11_h_e2 = &s11 * (&h * &e2);

    let terms = [
        (1.0 - a2).powi(2) * quad_form(&e, s, &e) + s2,
        (a2 - a1) * (2.0 - a1 - a2) * quad_form(&e1s, &s11, &e1s),
        (a2 - a1).powi(2) * quad_form(&h_theta2, &s11, &h_theta2),
        a1 * a1 * (signal - signal2) + a2 * a2 * signal2,
        2.0 * a1 * (a1 - a2) * v.dot(&h_theta2),
        2.0 * a1 * (a1 - 1.0) * e1s.dot(&v),
        2.0 * (1.0 - a1) * (a2 - a1) * quad_form(&e1s, &s11, &h_theta2),
        2.0 * a2 * (a2 - 1.0) * quad_form(&e2, &schur, &theta2),
        2.0 * a1 * (1.0 - a2) * e2.dot(&ht_v),
        2.0 * (1.0 - a2) * (a1 - a2) * e2.dot(&ht_s11_h_theta2),
        2.0 * (1.0 - a2) * (a1 - a2) * e1s.dot(&s11_h_e2),
    ];
    Ok(terms.iter().sum())
}

/// The three weights of the empirical estimator.
pub fn empirical_weights(
    a1: f64,
    a2: f64,
    n: usize,
    m_size: usize,
    m1_size: usize,
) -> (f64, f64, f64) {
    let (n, k, k1) = (n as f64, m_size as f64, m1_size as f64);
    let r = k / (n - k + 1.0);
    let r1 = k1 / (n - k1 + 1.0);
    let w1 = (1.0 - a2).powi(2) * r + 1.0 - a2 * a2 - (a1 - a2).powi(2) * r1
        + (a2 - a1) * (2.0 - a1 - a2) * r1;
    let w2 = a1 * a1;
    let w3 = a2 * a2 - a1 * a1 * k1 / n + (a2 - a1).powi(2) * r1;
    (w1, w2, w3)
}

/// `ρ̂² = w₁σ̂² + w₂·Y'P₁Y/n + w₃·Y'M₁Y/(n − |m₁|)`.
///
/// A negative value is reported as an error rather than clamped.
pub fn empirical_mspe(
    sample: &TrainingSample,
    m: &CandidateModel,
    fit: &BlockJsFit,
) -> Result<f64> {
    let n = sample.n();
    let (w1, w2, w3) = empirical_weights(fit.a1, fit.a2, n, m.size(), m.size1());
    let value = w1 * fit.sigma_hat_sq
        + w2 * fit.quad1 / n as f64
        + w3 * fit.resid1_sq / (n - m.size1()) as f64;
    if value < 0.0 {
        eprintln!(
            "warning: negative MSPE estimate {value:e} (a1 = {}, a2 = {})",
            fit.a1, fit.a2
        );
        return Err(Error::NegativeEstimate(value));
    }
    Ok(value)
}

/// Deterministic centring value `r` that `ρ̂²` and `ρ²` concentrate around.
pub fn normalizer_r(
    fit: &BlockJsFit,
    cp: &ConditionalParams,
    n: usize,
    m_size: usize,
    m1_size: usize,
) -> f64 {
    normalizer_r_raw(
        fit.a1,
        fit.a2,
        cp.cond_var,
        cp.mu,
        cp.mu2,
        n,
        m_size,
        m1_size,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn normalizer_r_raw(
    a1: f64,
    a2: f64,
    s2: f64,
    mu: f64,
    mu2: f64,
    n: usize,
    m_size: usize,
    m1_size: usize,
) -> f64 {
    let (n, k, k1) = (n as f64, m_size as f64, m1_size as f64);
    let r = k / (n - k + 1.0);
    let r1 = k1 / (n - k1 + 1.0);
    s2 * ((1.0 - a2).powi(2) * r
        + (a2 - a1) * (2.0 - a1 - a2) * r1
        + 1.0
        + a1 * a1 * (mu - mu2)
        + a2 * a2 * mu2
        + (a1 - a2).powi(2) * mu2 * r1)
}

/// Convenience: both MSPE values for one fitted model.
pub fn report(
    sample: &TrainingSample,
    m: &CandidateModel,
    fit: &BlockJsFit,
    cp: &ConditionalParams,
) -> Result<MspeReport> {
    Ok(MspeReport::new(
        true_mspe(fit, cp)?,
        empirical_mspe(sample, m, fit)?,
    ))
}

/// `Y'P₁Y` recomputed from a dense projector; used to cross-check the
/// factored evaluation in tests and diagnostics.
pub fn projected_norm_dense(sample: &TrainingSample, m: &CandidateModel) -> f64 {
    let x1 = select_columns(&sample.x, &m.block1);
    let n = sample.n();
    let p1 = Matrix::identity(n, n) - projection_complement(&x1);
    quad_form(&sample.y, &p1, &sample.y)
}
