//! Closed-form finite-sample probability bounds and the deterministic
//! inequalities they rest on.
//!
//! Every bound is returned raw as a [`BoundValue`] (it may exceed one); use
//! [`clip_probability`] for a probability reading. Bounds of the form
//! `prefactor · exp(−E)` are evaluated as `exp(ln prefactor − E)`, and the
//! natural logarithm is carried alongside the value. The logarithm is exact to
//! f64 rounding at any exponent size, so comparisons remain meaningful where
//! the value itself underflows (`E` beyond roughly 745).

use serde::{Deserialize, Serialize};

use crate::dgp::{CandidateModel, TrainingSample};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::selection::CollectionSummary;
use crate::shrinkage::BlockJsFit;

/// Exponent magnitude beyond which the value is reported through its logarithm.
pub const LOG_SPACE_THRESHOLD: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub value: f64,
    pub ln_value: f64,
}

impl BoundValue {
    /// `prefactor · exp(−exponent)`.
    pub fn from_exponent(prefactor: f64, exponent: f64) -> Self {
        let ln_value = prefactor.ln() - exponent;
        let value = if exponent.abs() > LOG_SPACE_THRESHOLD {
            ln_value.exp()
        } else {
            prefactor * (-exponent).exp()
        };
        Self { value, ln_value }
    }

    pub fn zero() -> Self {
        Self {
            value: 0.0,
            ln_value: f64::NEG_INFINITY,
        }
    }

    fn sum(terms: &[BoundValue]) -> Self {
        let m = terms
            .iter()
            .map(|t| t.ln_value)
            .fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Self::zero();
        }
        let ln_value = m + terms
            .iter()
            .map(|t| (t.ln_value - m).exp())
            .sum::<f64>()
            .ln();
        Self {
            value: terms.iter().map(|t| t.value).sum(),
            ln_value,
        }
    }

    pub fn clipped(&self) -> f64 {
        clip_probability(self.value)
    }
}

pub fn clip_probability(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Quantities the headline bounds are written in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundInput {
    pub n: usize,
    pub m_size: usize,
    pub m1_size: usize,
    pub epsilon: f64,
    pub mu: Option<f64>,
    pub d: Option<f64>,
    pub collection: Option<CollectionSummary>,
}

impl BoundInput {
    pub fn per_model(n: usize, m_size: usize, m1_size: usize, epsilon: f64) -> Self {
        Self {
            n,
            m_size,
            m1_size,
            epsilon,
            ..Self::default()
        }
    }

    pub fn uniform(n: usize, collection: CollectionSummary, epsilon: f64) -> Self {
        Self {
            n,
            m_size: collection.s_n,
            m1_size: collection.r_n,
            epsilon,
            collection: Some(collection),
            ..Self::default()
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = Some(mu);
        self
    }

    pub fn with_d(mut self, d: f64) -> Self {
        self.d = Some(d);
        self
    }

    fn validate_sizes(n: usize, size: usize, size1: usize) -> Result<()> {
        if size < 6 || size >= n || size1 < 3 || size1 + 3 > size {
            return Err(Error::InvalidArgument(format!(
                "need 6 <= |m| < n and 3 <= |m1| <= |m| - 3, got n = {n}, |m| = {size}, |m1| = {size1}"
            )));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if let Some(mu) = self.mu {
            if !(mu >= 0.0) || !mu.is_finite() {
                return Err(Error::InvalidArgument(format!("mu must be >= 0, got {mu}")));
            }
        }
        if let Some(d) = self.d {
            if !(d >= 1.0) || !d.is_finite() {
                return Err(Error::InvalidArgument(format!("d must be >= 1, got {d}")));
            }
        }
        Self::validate_sizes(self.n, self.m_size, self.m1_size)
    }

    fn collection(&self) -> Result<CollectionSummary> {
        let c = self.collection.ok_or_else(|| {
            Error::InvalidArgument(
                "uniform bound needs collection summary (|M_n|, r_n, s_n)".into(),
            )
        })?;
        if c.count == 0 {
            return Err(Error::InvalidArgument("collection is empty".into()));
        }
        Self::validate_sizes(self.n, c.s_n, c.r_n)?;
        Ok(c)
    }

    fn d_value(&self) -> Result<f64> {
        self.d.ok_or_else(|| {
            Error::InvalidArgument("signal bound d is required for this variant".into())
        })
    }
}

/// `G(x, y) = y/x − ln((x + y)/x)`.
pub fn g_function(x: f64, y: f64) -> Result<f64> {
    if !(x > 0.0) || !(x + y > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "G needs x > 0 and x + y > 0, got x = {x}, y = {y}"
        )));
    }
    let t = y / x;
    // y/x − ln(1 + y/x), written to stay accurate for small |y/x|.
    Ok(t - t.ln_1p())
}

/// `ε² / (c0 + c1·ε)²`, the shared ε-dependence of the headline bounds.
pub fn epsilon_kernel(epsilon: f64, c0: f64, c1: f64) -> f64 {
    (epsilon / (c0 + c1 * epsilon)).powi(2)
}

/// `prefactor · exp(−n · ratio² · (1 − size/n)⁵ · kernel / (constant · signal²))`.
#[allow(clippy::too_many_arguments)]
fn headline(
    prefactor: f64,
    n: usize,
    ratio: Option<(usize, usize)>,
    size: usize,
    kernel: f64,
    constant: f64,
    signal: f64,
) -> BoundValue {
    let nf = n as f64;
    let ratio_sq = ratio.map_or(1.0, |(a, b)| (a as f64 / b as f64).powi(2));
    let exponent =
        nf * ratio_sq * (1.0 - size as f64 / nf).powi(5) * kernel / (constant * signal * signal);
    BoundValue::from_exponent(prefactor, exponent)
}

/// Per-model log-ratio bound; the signal-adaptive form is used when `mu` is set.
pub fn bound_theorem1(inp: &BoundInput) -> Result<BoundValue> {
    inp.validate()?;
    let pre = 31.0 * inp.m_size as f64;
    let kernel = epsilon_kernel(inp.epsilon, 1.0, 1.0);
    Ok(match inp.mu {
        None => headline(
            pre,
            inp.n,
            Some((inp.m1_size, inp.n)),
            inp.m_size,
            kernel,
            14397.0,
            1.0,
        ),
        Some(mu) => headline(pre, inp.n, None, inp.m_size, kernel, 28279.0, 1.0 + mu),
    })
}

fn uniform_family(
    inp: &BoundInput,
    d_variant: bool,
    kernel: f64,
    c_free: f64,
    c_signal: f64,
) -> Result<BoundValue> {
    inp.validate()?;
    let c = inp.collection()?;
    let pre = 31.0 * c.count as f64 * c.s_n as f64;
    Ok(if d_variant {
        headline(pre, inp.n, None, c.s_n, kernel, c_signal, inp.d_value()?)
    } else {
        headline(pre, inp.n, Some((c.r_n, inp.n)), c.s_n, kernel, c_free, 1.0)
    })
}

/// Uniform-over-collection log-ratio bound.
pub fn bound_uniform(inp: &BoundInput, d_variant: bool) -> Result<BoundValue> {
    uniform_family(
        inp,
        d_variant,
        epsilon_kernel(inp.epsilon, 1.0, 1.0),
        14397.0,
        28279.0,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerfKind {
    /// `|ln(ρ²(m̂*)/ρ²(m*))| ≥ ε`.
    TruePerf,
    /// `|ln(ρ̂²(m̂*)/ρ²(m̂*))| ≥ ε`.
    EstPerf,
}

/// Bounds on how far the selected model is from the best one.
pub fn bound_corollary3(inp: &BoundInput, which: PerfKind, d_variant: bool) -> Result<BoundValue> {
    let kernel = match which {
        PerfKind::TruePerf => epsilon_kernel(inp.epsilon, 2.0, 1.0),
        PerfKind::EstPerf => epsilon_kernel(inp.epsilon, 1.0, 1.0),
    };
    uniform_family(inp, d_variant, kernel, 14397.0, 28279.0)
}

/// Total-variation bound between the true and estimated prediction-error laws;
/// per model (signal form uses `mu`) or uniform (signal form uses `d`).
pub fn bound_tv(inp: &BoundInput, uniform: bool, signal_variant: bool) -> Result<BoundValue> {
    let kernel = epsilon_kernel(inp.epsilon, 1.0, 4.0);
    if uniform {
        return uniform_family(inp, signal_variant, kernel, 900.0, 1768.0);
    }
    inp.validate()?;
    let pre = 31.0 * inp.m_size as f64;
    Ok(if signal_variant {
        let mu = inp
            .mu
            .ok_or_else(|| Error::InvalidArgument("mu is required for this variant".into()))?;
        headline(pre, inp.n, None, inp.m_size, kernel, 1768.0, 1.0 + mu)
    } else {
        headline(
            pre,
            inp.n,
            Some((inp.m1_size, inp.n)),
            inp.m_size,
            kernel,
            900.0,
            1.0,
        )
    })
}

/// Probability that the selected interval's coverage misses `1 − α` by ε.
pub fn bound_pi_valid(inp: &BoundInput, d_variant: bool) -> Result<BoundValue> {
    bound_tv(inp, true, d_variant)
}

/// Bound on `|ln(ρ̂(m̂*)/ρ(m*))| ≥ ε`.
pub fn bound_pi_short(inp: &BoundInput, d_variant: bool) -> Result<BoundValue> {
    uniform_family(
        inp,
        d_variant,
        epsilon_kernel(inp.epsilon, 1.0, 2.0),
        3600.0,
        7070.0,
    )
}

/// Elementary concentration results, each with the parameters it needs.
///
/// Eigenvalue arguments follow the ascending convention: `lambda_max` is the
/// largest eigenvalue, `lambda_min` the smallest. For the Wishart
/// eigenvalue kinds the `epsilon` argument of [`elementary_tail_bounds`]
/// carries `γ₁` (lower branch) or `γ₂` (upper branch).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailKind {
    /// `P(v'Av − tr A ≥ ε)`, `A` positive semidefinite.
    QuadFormUpper { d: usize, lambda_max: f64 },
    /// `P(v'Av − tr A ≤ −ε)`.
    QuadFormLower {
        d: usize,
        lambda_max: f64,
        trace: f64,
    },
    /// `P(|v'Av − tr A| ≥ ε)`.
    QuadFormTwoSided { d: usize, lambda_max: f64 },
    /// `P(|v'Av| ≥ ε)` for symmetric traceless `A`.
    Traceless {
        d: usize,
        lambda_max: f64,
        lambda_min: f64,
    },
    /// `P(|v'Av| ≥ ε)` for traceless `A` with `AA = 0`; `lambda_max_ata` is the
    /// top eigenvalue of `A'A`, `symmetric_part_positive` whether `A + A'` has a
    /// positive eigenvalue.
    Nilpotent {
        d: usize,
        lambda_max_ata: f64,
        symmetric_part_positive: bool,
    },
    /// Closed-form relaxation of [`TailKind::Nilpotent`].
    NilpotentTwoSided {
        d: usize,
        lambda_max_ata: f64,
        symmetric_part_positive: bool,
    },
    /// `P(|w| ≥ ε)`, `w ~ N(0, τ²)`.
    NormalTail { tau_sq: f64 },
    /// `P(χ²_k/k − 1 ≥ ε)`.
    ChiSqUpper { k: usize },
    /// `P(|χ²_k/k − 1| ≥ ε)`.
    ChiSqTwoSided { k: usize },
    /// Noncentral balance bound at a fixed noncentrality `b`.
    NoncentralBalance {
        d: usize,
        k: usize,
        b: f64,
        two_sided: bool,
    },
    /// `P(λ_min(W/d) ≤ γ₁²(1 − √(k/d))²)`, `W ~ W_k(I, d)`.
    WishartLower { d: usize, k: usize },
    /// `P(λ_max(W/d) ≥ (1 + √(k/d) + ε)²)`.
    WishartUpperShift { d: usize, k: usize },
    /// `P(λ_max(W/d) ≥ (1 + γ₂)²(1 + √(k/d))²)`.
    WishartUpper { d: usize, k: usize },
    /// `P(|tr((V'V)⁻¹)/(k/(d−k+1)) − 1| ≥ ε)`.
    TraceRelative { d: usize, k: usize },
    /// `P(|tr((V'V)⁻¹) − k/(d−k+1)| ≥ ε)`.
    TraceAbsolute { d: usize, k: usize },
}

fn exp_bound(prefactor: f64, exponent: f64) -> BoundValue {
    BoundValue::from_exponent(prefactor, exponent)
}

fn need(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidArgument(msg.to_string()))
    }
}

fn check_wishart(d: usize, k: usize) -> Result<()> {
    need(k >= 2 && d >= k, "Wishart bounds need d >= k >= 2")
}

pub fn elementary_tail_bounds(kind: &TailKind, epsilon: f64) -> Result<BoundValue> {
    need(
        epsilon > 0.0 && epsilon.is_finite(),
        "epsilon must be positive",
    )?;
    let eps = epsilon;
    match *kind {
        TailKind::QuadFormUpper { d, lambda_max } => {
            need(
                d >= 1 && lambda_max >= 0.0,
                "need d >= 1 and lambda_max >= 0",
            )?;
            if lambda_max == 0.0 {
                return Ok(BoundValue::zero());
            }
            let df = d as f64;
            Ok(exp_bound(1.0, df / 2.0 * g_function(df * lambda_max, eps)?))
        }
        TailKind::QuadFormLower {
            d,
            lambda_max,
            trace,
        } => {
            need(
                d >= 1 && lambda_max >= 0.0 && trace >= 0.0,
                "need d >= 1, lambda_max >= 0, trace >= 0",
            )?;
            if eps >= trace {
                return Ok(BoundValue::zero());
            }
            let df = d as f64;
            Ok(exp_bound(
                1.0,
                df / 2.0 * g_function(df * lambda_max, -eps)?,
            ))
        }
        TailKind::QuadFormTwoSided { d, lambda_max } => {
            need(
                d >= 1 && lambda_max >= 0.0,
                "need d >= 1 and lambda_max >= 0",
            )?;
            if lambda_max == 0.0 {
                return Ok(BoundValue::zero());
            }
            let dl = d as f64 * lambda_max;
            Ok(exp_bound(
                2.0,
                d as f64 * eps * eps / (4.0 * dl * (eps + dl)),
            ))
        }
        TailKind::Traceless {
            d,
            lambda_max,
            lambda_min,
        } => {
            need(
                d >= 1 && lambda_max >= 0.0 && lambda_min <= 0.0,
                "need lambda_min <= 0 <= lambda_max",
            )?;
            if lambda_max == 0.0 {
                return Ok(BoundValue::zero());
            }
            let df = d as f64;
            let a = exp_bound(2.0, df / 2.0 * g_function(df * lambda_max, eps / 2.0)?);
            let b = exp_bound(2.0, df / 2.0 * g_function(-df * lambda_min, eps / 2.0)?);
            Ok(BoundValue::sum(&[a, b]))
        }
        TailKind::Nilpotent {
            d,
            lambda_max_ata,
            symmetric_part_positive,
        } => {
            need(
                d >= 1 && lambda_max_ata >= 0.0,
                "need d >= 1 and lambda_max_ata >= 0",
            )?;
            if !symmetric_part_positive {
                return Ok(BoundValue::zero());
            }
            let df = d as f64;
            Ok(exp_bound(
                4.0,
                df / 2.0 * g_function(df * (lambda_max_ata / 2.0).sqrt(), eps / 2.0)?,
            ))
        }
        TailKind::NilpotentTwoSided {
            d,
            lambda_max_ata,
            symmetric_part_positive,
        } => {
            need(
                d >= 1 && lambda_max_ata >= 0.0,
                "need d >= 1 and lambda_max_ata >= 0",
            )?;
            if !symmetric_part_positive {
                return Ok(BoundValue::zero());
            }
            let df = d as f64;
            let s = df * (2.0 * lambda_max_ata).sqrt();
            Ok(exp_bound(4.0, df * eps * eps / (4.0 * s * (eps + s))))
        }
        TailKind::NormalTail { tau_sq } => {
            need(tau_sq > 0.0, "tau^2 must be positive")?;
            Ok(exp_bound(2.0, eps * eps / (2.0 * tau_sq)))
        }
        TailKind::ChiSqUpper { k } => {
            need(k >= 1, "k must be >= 1")?;
            Ok(exp_bound(1.0, k as f64 * eps * eps / (4.0 * (eps + 1.0))))
        }
        TailKind::ChiSqTwoSided { k } => {
            need(k >= 1, "k must be >= 1")?;
            Ok(exp_bound(2.0, k as f64 * eps * eps / (4.0 * (eps + 1.0))))
        }
        TailKind::NoncentralBalance { d, k, b, two_sided } => {
            need(d >= k && k >= 1 && b >= 0.0, "need d >= k >= 1 and b >= 0")?;
            let df = d as f64;
            let e = df * eps * eps / (4.0 * (eps + 2.0 * (k as f64 / df + b / df)));
            Ok(exp_bound(if two_sided { 2.0 } else { 1.0 }, e))
        }
        TailKind::WishartLower { d, k } => {
            check_wishart(d, k)?;
            need(eps < 1.0, "gamma1 must lie in [0, 1)")?;
            let (df, r) = (d as f64, (k as f64 / d as f64).sqrt());
            Ok(exp_bound(
                1.0,
                df * (1.0 - eps).powi(2) * (1.0 - r).powi(2) / 2.0,
            ))
        }
        TailKind::WishartUpperShift { d, k } => {
            check_wishart(d, k)?;
            Ok(exp_bound(1.0, d as f64 * eps * eps / 2.0))
        }
        TailKind::WishartUpper { d, k } => {
            check_wishart(d, k)?;
            let (df, r) = (d as f64, (k as f64 / d as f64).sqrt());
            Ok(exp_bound(1.0, df * eps * eps * (1.0 + r) / 2.0))
        }
        TailKind::TraceRelative { d, k } => {
            need(d >= k && k >= 1, "need d >= k >= 1")?;
            Ok(exp_bound(
                2.0 * k as f64,
                (d - k) as f64 * eps * eps / (8.0 * (eps + 1.0).powi(2)),
            ))
        }
        TailKind::TraceAbsolute { d, k } => {
            need(d >= k && k >= 1, "need d >= k >= 1")?;
            let c = 1.0 - k as f64 / d as f64;
            Ok(exp_bound(
                2.0 * k as f64,
                (d - k) as f64 * eps * eps * c * c / (8.0 * (eps * c + 1.0).powi(2)),
            ))
        }
    }
}

/// Which concentration statement about `ρ̂²/r` or `ρ²/r` to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntermediateKind {
    RhohatPos,
    RhohatNeg,
    RhohatMuPos,
    RhohatMuNeg,
    RhoPos,
    RhoNeg,
    RhoMuPos,
    RhoMuNeg,
}

impl IntermediateKind {
    pub const ALL: [IntermediateKind; 8] = [
        IntermediateKind::RhohatPos,
        IntermediateKind::RhohatNeg,
        IntermediateKind::RhohatMuPos,
        IntermediateKind::RhohatMuNeg,
        IntermediateKind::RhoPos,
        IntermediateKind::RhoNeg,
        IntermediateKind::RhoMuPos,
        IntermediateKind::RhoMuNeg,
    ];

    pub fn needs_mu(self) -> bool {
        matches!(
            self,
            IntermediateKind::RhohatMuPos
                | IntermediateKind::RhohatMuNeg
                | IntermediateKind::RhoMuPos
                | IntermediateKind::RhoMuNeg
        )
    }

    /// True for the upper-tail (`> e^δ`) statements.
    pub fn is_upper(self) -> bool {
        matches!(
            self,
            IntermediateKind::RhohatPos
                | IntermediateKind::RhohatMuPos
                | IntermediateKind::RhoPos
                | IntermediateKind::RhoMuPos
        )
    }

    /// True for statements about the estimator `ρ̂²`.
    pub fn is_estimate(self) -> bool {
        matches!(
            self,
            IntermediateKind::RhohatPos
                | IntermediateKind::RhohatNeg
                | IntermediateKind::RhohatMuPos
                | IntermediateKind::RhohatMuNeg
        )
    }
}

/// Bounds on `P(X/r > e^δ)` / `P(X/r < e^{−δ})` for `X` either `ρ̂²` or `ρ²`.
pub fn intermediate_lemma_bounds(
    kind: IntermediateKind,
    n: usize,
    m_size: usize,
    m1_size: usize,
    delta: f64,
    mu: Option<f64>,
) -> Result<BoundValue> {
    need(delta > 0.0 && delta.is_finite(), "delta must be positive")?;
    BoundInput::validate_sizes(n, m_size, m1_size)?;
    let mu = if kind.needs_mu() {
        let mu = mu.ok_or_else(|| Error::InvalidArgument("mu is required for this kind".into()))?;
        need(mu >= 0.0, "mu must be >= 0")?;
        mu
    } else {
        0.0
    };
    let (nf, k, k1) = (n as f64, m_size as f64, m1_size as f64);
    let ed = delta.exp();
    let em1_sq = delta.exp_m1().powi(2);
    let slack3 = (1.0 - k / nf).powi(3);
    let slack5 = (1.0 - k / nf).powi(5);
    let rho_pre = 58.0 + 2.0 * k1;
    let (pre, exponent) = match kind {
        IntermediateKind::RhohatPos => (22.0, k1 * slack3 * em1_sq / (210.0 * ed)),
        IntermediateKind::RhohatNeg => (22.0, k1 * slack3 * em1_sq / (840.0 * ed * ed)),
        IntermediateKind::RhohatMuPos => (22.0, nf * slack3 * em1_sq / (210.0 * ed * (1.0 + mu))),
        IntermediateKind::RhohatMuNeg => {
            (22.0, nf * slack3 * em1_sq / (840.0 * ed * ed * (1.0 + mu)))
        }
        IntermediateKind::RhoPos => (
            rho_pre,
            k1 * (k1 / nf) * slack5 * em1_sq / (10477.0 * ed * ed),
        ),
        IntermediateKind::RhoNeg => (
            rho_pre,
            k1 * (k1 / nf) * slack5 * em1_sq / (13089.0 * ed * ed),
        ),
        IntermediateKind::RhoMuPos => (
            rho_pre,
            nf * slack5 * em1_sq / (19371.0 * (1.0 + mu).powi(2) * ed * ed),
        ),
        IntermediateKind::RhoMuNeg => (
            rho_pre,
            nf * slack5 * em1_sq / (22534.0 * (1.0 + mu).powi(2) * ed * ed),
        ),
    };
    Ok(BoundValue::from_exponent(pre, exponent))
}

/// Plug-in signal-to-noise estimate `(Y'Y/n)/σ̂² − 1`.
pub fn plugin_mu_estimate(
    sample: &TrainingSample,
    _m: &CandidateModel,
    fit: &BlockJsFit,
) -> Result<f64> {
    if !(fit.sigma_hat_sq > 0.0) {
        return Err(Error::InvalidArgument(
            "degenerate variance estimate: sigma_hat_sq = 0".into(),
        ));
    }
    Ok(sample.y.norm_squared() / sample.n() as f64 / fit.sigma_hat_sq - 1.0)
}

/// One point of the grid for the shrinkage-weight inequalities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightPoint {
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
    pub k1: usize,
    pub k2: usize,
    pub d: usize,
}

/// One point of the grid for the polynomial inequalities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitPoint {
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug)]
pub enum PropGrid {
    Weights(Vec<WeightPoint>),
    Unit(Vec<UnitPoint>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropViolation {
    pub inequality: &'static str,
    pub point: usize,
    pub lhs: f64,
    pub rhs: f64,
}

/// Names of the checked inequalities; chained statements `a ≤ b ≤ c`
/// contribute one entry per link.
pub const WEIGHT_INEQUALITIES: [&str; 5] =
    ["ineq1", "ineq2", "ineq2_chain", "ineq3", "ineq3_chain"];
pub const UNIT_INEQUALITIES: [&str; 7] = [
    "prop1", "prop2", "propxy1", "propxy2", "propxy3", "propxy4", "propxy5",
];

pub const PROP_TOLERANCE: f64 = 1e-12;

fn weight_sides(p: &WeightPoint) -> [(f64, f64); 5] {
    let (x1, x2, y1, y2) = (p.x1, p.x2, p.y1, p.y2);
    let k1 = p.k1 as f64;
    let k = (p.k1 + p.k2) as f64;
    let d = p.d as f64;
    let r = k / (d - k + 1.0);
    let r1 = k1 / (d - k1 + 1.0);
    let q = (1.0 - x2).powi(2) * r
        + (x2 - x1) * (2.0 - x1 - x2) * r1
        + 1.0
        + x1 * x1 * y1
        + x2 * x2 * y2
        + (x1 - x2).powi(2) * r1 * y2;
    let lhs1 = ((1.0 - x2).powi(2) * r + (x2 - x1) * (2.0 - x1 - x2) * r1 + 1.0
        - x2 * x2
        - (x1 - x2).powi(2) * r1)
        .abs()
        / q;
    let mid2 = 1.0 / (1.0 + y1 + y2 * (k1 / d) * (1.0 - k1 / d));
    let lhs3 = (x2 * x2 - x1 * x1 * k1 / d + (x1 - x2).powi(2) * r1).abs() / q;
    let mid3 = 1.0 / ((1.0 - k1 / d) * (1.0 + y2));
    [
        (lhs1, 1.0 / (1.0 - k / d)),
        (x1 * x1 / q, mid2),
        (mid2, 1.0),
        (lhs3, mid3),
        (mid3, 1.0 / (1.0 - k1 / d)),
    ]
}

fn unit_sides(p: &UnitPoint) -> [(f64, f64); 7] {
    let (x, y) = (p.x, p.y);
    let sx = 1.0 - x.sqrt();
    let u = 1.0 - (y / (1.0 - x)).sqrt();
    let t5 = (1.0 - x - y).powi(5);
    [
        (2.0 * (1.0 - x).powi(5) / 9.0, sx.powi(4)),
        (3.0 * (1.0 - x).powi(5) / 4.0, sx.powi(2)),
        (3.0 * t5 / 4.0, u * u * (1.0 - x)),
        (t5 / 2.0, u * u * sx * sx * (1.0 - x)),
        (8.0 * t5 / 45.0, u * u * sx.powi(4)),
        (8.0 * t5 / 165.0, u * u * sx.powi(4) * (1.0 - x)),
        (3.0 * t5 / 4.0, u * u),
    ]
}

/// Evaluates both sides of every inequality at every grid point and returns
/// the points where the left side exceeds the right by more than
/// [`PROP_TOLERANCE`].
pub fn prop_inequality_check(grid: &PropGrid) -> Result<Vec<PropViolation>> {
    let mut out = Vec::new();
    match grid {
        PropGrid::Weights(points) => {
            for (i, p) in points.iter().enumerate() {
                let ok = (0.0..=1.0).contains(&p.x1)
                    && (0.0..=1.0).contains(&p.x2)
                    && p.y1 >= 0.0
                    && p.y2 >= 0.0
                    && p.k1 >= 1
                    && p.k2 >= 1
                    && p.k1 + p.k2 < p.d;
                need(ok, &format!("grid point {i} outside the domain: {p:?}"))?;
                for (name, (lhs, rhs)) in WEIGHT_INEQUALITIES.iter().zip(weight_sides(p)) {
                    if lhs - rhs > PROP_TOLERANCE {
                        out.push(PropViolation {
                            inequality: name,
                            point: i,
                            lhs,
                            rhs,
                        });
                    }
                }
            }
        }
        PropGrid::Unit(points) => {
            for (i, p) in points.iter().enumerate() {
                let ok = p.x > 0.0 && p.x < 1.0 && p.y > 0.0 && p.y < 1.0 && p.x + p.y <= 1.0;
                need(ok, &format!("grid point {i} outside the domain: {p:?}"))?;
                for (name, (lhs, rhs)) in UNIT_INEQUALITIES.iter().zip(unit_sides(p)) {
                    if lhs - rhs > PROP_TOLERANCE {
                        out.push(PropViolation {
                            inequality: name,
                            point: i,
                            lhs,
                            rhs,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Shuffled stratified coordinates in `(0, 1)`: one column of a Latin hypercube.
fn lhs_column(points: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut perm: Vec<usize> = (0..points).collect();
    for i in (1..points).rev() {
        perm.swap(i, rng.below(i + 1));
    }
    perm.into_iter()
        .map(|s| (s as f64 + rng.uniform()) / points as f64)
        .collect()
}

/// Maps `u ∈ (0, 1)` onto `[0, ∞)` with a heavy tail so large signal ratios
/// are exercised alongside small ones.
fn to_half_line(u: f64) -> f64 {
    u / (1.0 - u)
}

/// Latin-hypercube grid for the shrinkage-weight inequalities, with `d` up to `max_d`.
pub fn latin_hypercube_weights(points: usize, max_d: usize, seed: u64) -> Vec<WeightPoint> {
    let mut rng = RngStream::new(seed, 0);
    let cols: Vec<Vec<f64>> = (0..7).map(|_| lhs_column(points, &mut rng)).collect();
    (0..points)
        .map(|i| {
            let d = 3 + (cols[4][i] * (max_d - 2) as f64) as usize;
            let k = 2 + (cols[5][i] * (d - 2) as f64) as usize;
            let k = k.min(d - 1);
            let k1 = (1 + (cols[6][i] * (k - 1) as f64) as usize).min(k - 1);
            WeightPoint {
                x1: cols[0][i],
                x2: cols[1][i],
                y1: to_half_line(cols[2][i]),
                y2: to_half_line(cols[3][i]),
                k1,
                k2: k - k1,
                d,
            }
        })
        .collect()
}

/// Latin-hypercube grid on the triangle `x, y ∈ (0,1)`, `x + y ≤ 1`.
pub fn latin_hypercube_unit(points: usize, seed: u64) -> Vec<UnitPoint> {
    let mut rng = RngStream::new(seed, 1);
    let a = lhs_column(points, &mut rng);
    let b = lhs_column(points, &mut rng);
    a.into_iter()
        .zip(b)
        .map(|(x, v)| UnitPoint {
            x,
            y: (v * (1.0 - x)).max(f64::MIN_POSITIVE),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn g_function_values() {
        assert_eq!(g_function(3.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(
            g_function(1.0, 1.0).unwrap(),
            1.0 - 2f64.ln(),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            g_function(2.0, -1.0).unwrap(),
            -0.5 + 2f64.ln(),
            epsilon = 1e-15
        );
        assert!(g_function(0.0, 1.0).is_err());
        assert!(g_function(1.0, -1.0).is_err());
    }

    #[test]
    fn g_function_is_convex_in_y() {
        let h = 1e-3;
        for i in 0..100 {
            let y = -0.9 + 0.05 * i as f64;
            let second = g_function(1.0, y + h).unwrap() - 2.0 * g_function(1.0, y).unwrap()
                + g_function(1.0, y - h).unwrap();
            assert!(second >= -1e-10);
        }
    }

    #[test]
    fn theorem1_limits_and_monotonicity() {
        let tiny = bound_theorem1(&BoundInput::per_model(100, 10, 5, 1e-12)).unwrap();
        assert_relative_eq!(tiny.value, 310.0, max_relative = 1e-12);
        let mut last = f64::INFINITY;
        for n in [1_000, 10_000, 100_000, 1_000_000] {
            let v = bound_theorem1(&BoundInput::per_model(n, 10, 5, 0.5).with_mu(1.0))
                .unwrap()
                .value;
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn uniform_bound_scales_with_collection_size() {
        let c = CollectionSummary {
            r_n: 5,
            s_n: 10,
            count: 1,
        };
        let one = bound_uniform(&BoundInput::uniform(100, c, 0.5), false).unwrap();
        let per = bound_theorem1(&BoundInput::per_model(100, 10, 5, 0.5)).unwrap();
        assert_relative_eq!(one.value, per.value, max_relative = 1e-14);
        let two = bound_uniform(
            &BoundInput::uniform(100, CollectionSummary { count: 2, ..c }, 0.5),
            false,
        )
        .unwrap();
        assert_relative_eq!(two.value, 2.0 * one.value, max_relative = 1e-14);
        assert!(bound_uniform(&BoundInput::uniform(100, c, 0.5), true).is_err());
    }

    #[test]
    fn corollary3_ordering() {
        let c = CollectionSummary {
            r_n: 20,
            s_n: 50,
            count: 7,
        };
        let inp = BoundInput::uniform(300, c, 0.7).with_d(3.0);
        for dv in [false, true] {
            let t = bound_corollary3(&inp, PerfKind::TruePerf, dv)
                .unwrap()
                .value;
            let e = bound_corollary3(&inp, PerfKind::EstPerf, dv).unwrap().value;
            assert!(t >= e);
        }
    }

    #[test]
    fn kernel_substitution_identity() {
        for &eps in &[0.01, 0.1, 0.5, 2.0, 13.0] {
            assert_eq!(
                epsilon_kernel(4.0 * eps, 1.0, 1.0),
                (4.0 * eps / (1.0 + 4.0 * eps)).powi(2)
            );
            assert_eq!(
                epsilon_kernel(eps, 1.0, 4.0) * 16.0,
                epsilon_kernel(4.0 * eps, 1.0, 1.0)
            );
            assert_relative_eq!(
                epsilon_kernel(eps, 1.0, 2.0) * 4.0,
                epsilon_kernel(2.0 * eps, 1.0, 1.0),
                max_relative = 1e-15
            );
        }
    }

    #[test]
    fn elementary_examples() {
        let zero = elementary_tail_bounds(
            &TailKind::QuadFormTwoSided {
                d: 5,
                lambda_max: 0.0,
            },
            0.5,
        )
        .unwrap();
        assert_eq!(zero.value, 0.0);
        let chi = elementary_tail_bounds(&TailKind::ChiSqUpper { k: 200 }, 0.3).unwrap();
        assert_relative_eq!(
            chi.value,
            (-200.0 * 0.09 / (4.0 * 1.3f64)).exp(),
            max_relative = 1e-14
        );
        let nt = elementary_tail_bounds(&TailKind::NormalTail { tau_sq: 1.0 }, 2.0).unwrap();
        assert_relative_eq!(nt.value, 2.0 * (-2.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn quadform_lower_branch_vanishes_beyond_trace() {
        let k = TailKind::QuadFormLower {
            d: 5,
            lambda_max: 0.2,
            trace: 1.0,
        };
        assert_eq!(elementary_tail_bounds(&k, 1.0).unwrap().value, 0.0);
        assert!(elementary_tail_bounds(&k, 0.5).unwrap().value > 0.0);
    }

    #[test]
    fn intermediate_limits_and_ordering() {
        for kind in IntermediateKind::ALL {
            let v = intermediate_lemma_bounds(kind, 200, 20, 10, 1e-9, Some(1.0))
                .unwrap()
                .value;
            let lead = if kind.is_estimate() { 22.0 } else { 78.0 };
            assert_relative_eq!(v, lead, max_relative = 1e-9);
        }
        let pos =
            intermediate_lemma_bounds(IntermediateKind::RhohatPos, 200, 20, 10, 0.4, None).unwrap();
        let neg =
            intermediate_lemma_bounds(IntermediateKind::RhohatNeg, 200, 20, 10, 0.4, None).unwrap();
        assert!(neg.value >= pos.value);
        assert!(
            intermediate_lemma_bounds(IntermediateKind::RhoMuPos, 200, 20, 10, 0.4, None).is_err()
        );
    }

    #[test]
    fn huge_exponents_keep_their_logarithm() {
        let b = bound_theorem1(&BoundInput::per_model(10_000_000_000, 20, 10, 1.0).with_mu(0.0))
            .unwrap();
        assert!(b.ln_value < -LOG_SPACE_THRESHOLD);
        assert!(b.ln_value.is_finite());
        let b =
            bound_theorem1(&BoundInput::per_model(10_000_000_000_000, 20, 10, 1.0).with_mu(0.0))
                .unwrap();
        assert_eq!(b.value, 0.0);
        assert!(b.ln_value.is_finite());
    }

    #[test]
    fn prop_endpoints() {
        let weights = PropGrid::Weights(vec![WeightPoint {
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
            k1: 1,
            k2: 1,
            d: 3,
        }]);
        assert!(prop_inequality_check(&weights).unwrap().is_empty());
        let unit = PropGrid::Unit(vec![UnitPoint { x: 1e-12, y: 1e-12 }]);
        assert!(prop_inequality_check(&unit).unwrap().is_empty());
        let bad = PropGrid::Unit(vec![UnitPoint { x: 0.7, y: 0.7 }]);
        assert!(prop_inequality_check(&bad).is_err());
    }

    #[test]
    fn clip() {
        assert_eq!(clip_probability(3.0), 1.0);
        assert_eq!(clip_probability(0.25), 0.25);
    }
}
