//! Positive-part block James-Stein fit for one candidate model.
//!
//! Block 1 is shrunk towards zero on its own least-squares fit; block 2 is
//! shrunk after being residualised on block 1, and the block-1 coefficients
//! are then corrected for the shrunken block-2 contribution.

use serde::{Deserialize, Serialize};

use crate::dgp::{CandidateModel, TrainingSample};
use crate::error::{Error, Result};
use crate::numerics::{least_squares, pseudo_inverse, select_columns, Matrix, Vector};

/// Tuning constants `c1`, `c2` of the two shrinkage factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShrinkageConfig {
    pub c1: f64,
    pub c2: f64,
}

impl ShrinkageConfig {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !(c1 >= 0.0 && c2 >= 0.0 && c1.is_finite() && c2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "c1 = {c1}, c2 = {c2} must be finite and >= 0"
            )));
        }
        Ok(Self { c1, c2 })
    }

    /// No shrinkage: the fit reduces to OLS.
    pub fn ols() -> Self {
        Self { c1: 0.0, c2: 0.0 }
    }

    /// Classical `(k − 2)/k` constant for each block of `m`.
    pub fn james_stein_default(m: &CandidateModel) -> Self {
        let c = |k: usize| (k as f64 - 2.0) / k as f64;
        Self {
            c1: c(m.size1()),
            c2: c(m.size2()),
        }
    }
}

/// Either explicit constants or the per-model James-Stein default.
///
/// Serialized as `{"c1": .., "c2": ..}` or as the string `"default"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChoiceRepr", into = "ChoiceRepr")]
pub enum ShrinkageChoice {
    Fixed(ShrinkageConfig),
    Default,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ChoiceRepr {
    Named(String),
    Fixed(ShrinkageConfig),
}

impl From<ShrinkageChoice> for ChoiceRepr {
    fn from(c: ShrinkageChoice) -> Self {
        match c {
            ShrinkageChoice::Fixed(cfg) => ChoiceRepr::Fixed(cfg),
            ShrinkageChoice::Default => ChoiceRepr::Named("default".into()),
        }
    }
}

impl TryFrom<ChoiceRepr> for ShrinkageChoice {
    type Error = Error;

    fn try_from(r: ChoiceRepr) -> Result<Self> {
        match r {
            ChoiceRepr::Named(s) if s == "default" => Ok(ShrinkageChoice::Default),
            ChoiceRepr::Named(s) => Err(Error::Config(format!(
                "unknown shrinkage '{s}' (expected \"default\" or {{c1, c2}})"
            ))),
            ChoiceRepr::Fixed(cfg) => Ok(ShrinkageChoice::Fixed(ShrinkageConfig::new(
                cfg.c1, cfg.c2,
            )?)),
        }
    }
}

impl ShrinkageChoice {
    pub fn for_model(&self, m: &CandidateModel) -> ShrinkageConfig {
        match self {
            ShrinkageChoice::Fixed(c) => *c,
            ShrinkageChoice::Default => ShrinkageConfig::james_stein_default(m),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockJsFit {
    pub model: CandidateModel,
    /// `θ̂₁*`: block-1 least squares ignoring block 2.
    pub theta1_star_ls: Vector,
    /// `θ̂₂`: block-2 least squares after residualising on block 1.
    pub theta2_ls: Vector,
    pub sigma_hat_sq: f64,
    pub a1: f64,
    pub a2: f64,
    /// Shrunken coefficients in block order.
    pub theta_bjs: Vector,
    /// Shrunken coefficients scattered to length `p`.
    pub beta_hat: Vector,
    /// `‖X₁θ̂₁*‖²`, which is also `Y'P₁Y`.
    pub quad1: f64,
    /// `‖M₁X₂θ̂₂‖²`.
    pub quad2: f64,
    /// `Y'M₁Y`.
    pub resid1_sq: f64,
    /// `(X₁'X₁)⁻X₁'X₂`.
    pub cross: Matrix,
    pub n: usize,
}

impl BlockJsFit {
    /// OLS coefficients of the model, in block order.
    pub fn theta_ols(&self) -> Vector {
        let k1 = self.model.size1();
        let mut t = Vector::zeros(self.model.size());
        let t1 = &self.theta1_star_ls - &self.cross * &self.theta2_ls;
        t.rows_mut(0, k1).copy_from(&t1);
        t.rows_mut(k1, self.model.size2())
            .copy_from(&self.theta2_ls);
        t
    }
}

fn shrink_factor(c: f64, sigma_hat_sq: f64, k: usize, quad: f64) -> f64 {
    if quad <= 0.0 {
        return 1.0;
    }
    (c * sigma_hat_sq * k as f64 / quad).min(1.0)
}

pub fn fit(
    sample: &TrainingSample,
    m: &CandidateModel,
    cfg: &ShrinkageConfig,
) -> Result<BlockJsFit> {
    let n = sample.n();
    m.validate_for_fit(sample.p(), n)?;
    let (k1, k2) = (m.size1(), m.size2());
    let x1 = select_columns(&sample.x, &m.block1);
    let x2 = select_columns(&sample.x, &m.block2);

    let x1_pinv = pseudo_inverse(&x1);
    let theta1_star_ls = &x1_pinv * &sample.y;
    let fitted1 = &x1 * &theta1_star_ls;
    let m1y = &sample.y - &fitted1;
    let cross = &x1_pinv * &x2;
    let x2_star = &x2 - &x1 * &cross;
    let theta2_ls = least_squares(&x2_star, &m1y)?;
    let fitted2 = &x2_star * &theta2_ls;

    let rss = (&m1y - &fitted2).norm_squared();
    let sigma_hat_sq = rss / (n - m.size()) as f64;
    let quad1 = fitted1.norm_squared();
    let quad2 = fitted2.norm_squared();
    let a1 = shrink_factor(cfg.c1, sigma_hat_sq, k1, quad1);
    let a2 = shrink_factor(cfg.c2, sigma_hat_sq, k2, quad2);

    let theta2_js = &theta2_ls * (1.0 - a2);
    let theta1_js = &theta1_star_ls * (1.0 - a1) - &cross * &theta2_js;
    let mut theta_bjs = Vector::zeros(k1 + k2);
    theta_bjs.rows_mut(0, k1).copy_from(&theta1_js);
    theta_bjs.rows_mut(k1, k2).copy_from(&theta2_js);
    let mut beta_hat = Vector::zeros(sample.p());
    for (j, &i) in m.indices().iter().enumerate() {
        beta_hat[i] = theta_bjs[j];
    }

    Ok(BlockJsFit {
        model: m.clone(),
        theta1_star_ls,
        theta2_ls,
        sigma_hat_sq,
        a1,
        a2,
        theta_bjs,
        beta_hat,
        quad1,
        quad2,
        resid1_sq: m1y.norm_squared(),
        cross,
        n,
    })
}

/// Point prediction `x0'β̂`.
pub fn predict(fit: &BlockJsFit, x0: &Vector) -> Result<f64> {
    if x0.len() != fit.beta_hat.len() {
        return Err(Error::Dimension(format!(
            "x0 has length {} but the fit has p = {}",
            x0.len(),
            fit.beta_hat.len()
        )));
    }
    Ok(x0.dot(&fit.beta_hat))
}

/// Prediction through the block coefficients, `x0(m)'θ̂`.
pub fn predict_blockwise(fit: &BlockJsFit, x0: &Vector) -> Result<f64> {
    if x0.len() != fit.beta_hat.len() {
        return Err(Error::Dimension("x0 length does not match the fit".into()));
    }
    Ok(fit
        .model
        .indices()
        .iter()
        .zip(fit.theta_bjs.iter())
        .map(|(&i, t)| x0[i] * t)
        .sum())
}

/// Largest componentwise gap between the shrunken coefficients and
/// `(1 − a2)θ̂ + (a2 − a1)(θ̂₁*', 0')'`, with `θ̂` the OLS fit of `m`
/// computed independently on the full model design.
pub fn rewrite_identity_check(
    fit: &BlockJsFit,
    sample: &TrainingSample,
    m: &CandidateModel,
) -> Result<f64> {
    let xm = select_columns(&sample.x, &m.indices());
    let ols = least_squares(&xm, &sample.y)?;
    let mut rewritten = ols * (1.0 - fit.a2);
    for j in 0..m.size1() {
        rewritten[j] += (fit.a2 - fit.a1) * fit.theta1_star_ls[j];
    }
    Ok((rewritten - &fit.theta_bjs).amax())
}
