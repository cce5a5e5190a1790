//! Monte Carlo verification: distributional identities, empirical tail
//! frequencies against the closed-form bounds, and the headline experiments.
//!
//! Replication `i` always draws from `RngStream::new(master_seed, i)` (with a
//! fixed high-bit tag for reference draws), and results are reduced in
//! replication order, so a report is bit-identical at any parallelism.

use std::collections::BTreeMap;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bounds::{
    bound_corollary3, bound_pi_short, bound_pi_valid, bound_theorem1, bound_tv, bound_uniform,
    elementary_tail_bounds, intermediate_lemma_bounds, BoundInput, BoundValue, IntermediateKind,
    PerfKind, TailKind,
};
use crate::dgp::{
    conditional_params, generate_sample, schur_complement, variance_of_y, CandidateModel,
    ConditionalParams, Dgp,
};
use crate::error::{Error, Result};
use crate::inference::{conditional_coverage, tv_centered_normals};
use crate::mspe::{empirical_mspe, normalizer_r, true_mspe, true_mspe_expanded};
use crate::numerics::{
    cholesky_spd, least_squares_matrix, normal_quantile, sample_chisq, select_columns, Matrix,
    RngStream,
};
use crate::selection::{collection_summary, select, ModelCollection};
use crate::shrinkage::{fit, ShrinkageChoice, ShrinkageConfig};

/// Stream tag for draws from a claimed reference law.
const REFERENCE_STREAM: u64 = 1 << 40;

/// KS p-value threshold for distribution checks.
pub const KS_PASS_THRESHOLD: f64 = 0.001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub reps: usize,
    pub master_seed: u64,
    pub epsilon_grid: Vec<f64>,
    pub confidence: f64,
    /// Worker threads; 0 uses all available cores.
    pub parallelism: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            reps: 10_000,
            master_seed: 1,
            epsilon_grid: vec![0.25, 0.5, 1.0],
            confidence: 0.999,
            parallelism: 0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be >= 1".into()));
        }
        if self.epsilon_grid.is_empty()
            || self
                .epsilon_grid
                .iter()
                .any(|e| !(*e > 0.0) || !e.is_finite())
        {
            return Err(Error::Config(
                "epsilon_grid must be non-empty with positive entries".into(),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        Ok(())
    }

    /// The JSON `config` block of a report: everything except parallelism,
    /// which cannot change results and is recorded in metadata instead.
    fn describe(&self) -> Value {
        json!({
            "reps": self.reps,
            "master_seed": self.master_seed,
            "epsilon_grid": self.epsilon_grid,
            "confidence": self.confidence,
        })
    }
}

/// Runs `f` once per replication on the configured pool; results come back
/// in replication order.
fn run_reps<T, F>(cfg: &McConfig, stream_tag: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut RngStream) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(|| {
        (0..cfg.reps)
            .into_par_iter()
            .map(|i| {
                let mut rng = RngStream::new(cfg.master_seed, stream_tag | i as u64);
                f(i, &mut rng)
            })
            .collect()
    })
}

/// Upper end of the two-sided Wilson score interval for `events / trials`.
pub fn wilson_upper(events: usize, trials: usize, confidence: f64) -> f64 {
    let n = trials as f64;
    let p = events as f64 / n;
    let z = normal_quantile(1.0 - (1.0 - confidence) / 2.0);
    let z2 = z * z;
    let centre = p + z2 / (2.0 * n);
    let spread = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre + spread) / (1.0 + z2 / n)).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailVerdict {
    pub epsilon: f64,
    pub empirical_freq: f64,
    pub wilson_upper: f64,
    pub bound_value: f64,
    /// Natural log of the raw bound; finite even when `bound_value` underflows.
    pub bound_ln: f64,
    pub clipped_bound: f64,
    pub pass: bool,
    pub vacuous: bool,
}

impl TailVerdict {
    pub fn new(
        epsilon: f64,
        events: usize,
        trials: usize,
        bound: BoundValue,
        confidence: f64,
    ) -> Self {
        let upper = wilson_upper(events, trials, confidence);
        let clipped = bound.clipped();
        let vacuous = clipped >= 1.0;
        Self {
            epsilon,
            empirical_freq: events as f64 / trials as f64,
            wilson_upper: upper,
            bound_value: bound.value,
            bound_ln: bound.ln_value,
            clipped_bound: clipped,
            pass: vacuous || upper <= clipped,
            vacuous,
        }
    }
}

/// A verdict tagged with the bound it tests and, for per-model bounds, the model index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledVerdict {
    pub bound: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub model: Option<usize>,
    #[serde(flatten)]
    pub verdict: TailVerdict,
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() || a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "KS test needs two non-empty finite samples".into(),
        ));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    Ok((d, kolmogorov_survival((en + 0.12 + 0.11 / en) * d)))
}

/// `Q_KS(λ) = 2 Σ (−1)^{k−1} exp(−2k²λ²)`.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_error(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len().max(2) - 1) as f64;
    (var / v.len() as f64).sqrt()
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Distributional identities that can be checked by simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    /// `(θ̂ − θ)'S(θ̂ − θ)` vs `s²χ²_{|m|}/χ²_{n−|m|+1}`.
    HotRatio,
    /// The block-1 analogue with `|m₁|` and the block-1 conditional variance.
    HotRatioBlock1,
    /// `σ̂²` vs `s²χ²_{n−|m|}/(n − |m|)`.
    SigmaHat,
    /// `tr(Z₂'M₁Z₂)` vs the trace of `W_{|m₂|}(schur, n − |m₁|)`.
    WishartSchur,
    /// `θ'Z'M₁Zθ` vs `b₂χ²_{n−|m₁|}`.
    Tzm1,
    /// `θ̃₁'Z₁'Z₁θ̃₁` vs `(b − b₂)χ²_n`.
    Tt1z1,
    /// First diagonal entry of `(V'V)⁻¹`, `V` a `d × k` standard normal matrix, vs `1/χ²_{d−k+1}`.
    InvChisqDiag,
}

impl DistributionKind {
    pub const ALL: [DistributionKind; 7] = [
        DistributionKind::HotRatio,
        DistributionKind::HotRatioBlock1,
        DistributionKind::SigmaHat,
        DistributionKind::WishartSchur,
        DistributionKind::Tzm1,
        DistributionKind::Tt1z1,
        DistributionKind::InvChisqDiag,
    ];
}

#[derive(Clone, Debug)]
pub enum DistributionParams {
    Regression {
        dgp: Dgp,
        model: CandidateModel,
        n: usize,
    },
    Gaussian {
        d: usize,
        k: usize,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct DistributionReport {
    pub kind: DistributionKind,
    pub reps: usize,
    pub ks_statistic: f64,
    pub p_value: f64,
    pub statistic_mean: f64,
    pub statistic_se: f64,
    pub reference_mean: f64,
    pub pass: bool,
}

struct RegressionParts {
    cp: ConditionalParams,
    /// `s₁²`, the conditional variance of `y` given the block-1 regressors.
    s1_sq: f64,
    /// `b₂ = θ₂'·schur·θ₂`.
    b2: f64,
    /// `b − b₂`.
    b1: f64,
    theta1_tilde: nalgebra::DVector<f64>,
    theta1_star: nalgebra::DVector<f64>,
    schur_chol: Matrix,
}

fn regression_parts(dgp: &Dgp, m: &CandidateModel, n: usize) -> Result<RegressionParts> {
    m.validate_for_fit(dgp.p(), n)?;
    let cp = conditional_params(dgp, m)?;
    let (k1, k2) = (m.size1(), m.size2());
    let s11 = cp.s.view((0, 0), (k1, k1)).into_owned();
    let s12 = cp.s.view((0, k1), (k1, k2)).into_owned();
    let shift = crate::numerics::spd_inverse(&s11)? * &s12;
    let theta1 = cp.theta.rows(0, k1).into_owned();
    let theta2 = cp.theta.rows(k1, k2).into_owned();
    let theta1_tilde = &theta1 + &shift * &theta2;
    let schur = schur_complement(&cp.s, k1)?;
    let b2 = crate::numerics::quad_form(&theta2, &schur, &theta2);
    let b = crate::numerics::quad_form(&cp.theta, &cp.s, &cp.theta);
    Ok(RegressionParts {
        s1_sq: cp.cond_var + b2,
        b2,
        b1: b - b2,
        theta1_star: theta1_tilde.clone(),
        theta1_tilde,
        schur_chol: cholesky_spd(&schur)?,
        cp,
    })
}

fn inverse_diag0(v: &Matrix) -> f64 {
    let g = v.transpose() * v;
    match g.try_inverse() {
        Some(inv) => inv[(0, 0)],
        None => f64::INFINITY,
    }
}

/// Draws `reps` values of a statistic from full simulations and `reps`
/// from its claimed law, then compares them with a two-sample KS test.
pub fn verify_distribution(
    kind: DistributionKind,
    params: &DistributionParams,
    cfg: &McConfig,
) -> Result<DistributionReport> {
    cfg.validate()?;
    let (stat, reference): (Vec<f64>, Vec<f64>) = match (kind, params) {
        (DistributionKind::InvChisqDiag, DistributionParams::Gaussian { d, k }) => {
            let (d, k) = (*d, *k);
            if !(k >= 1 && d > k) {
                return Err(Error::InvalidArgument(format!(
                    "need d > k >= 1, got d = {d}, k = {k}"
                )));
            }
            let stat = run_reps(cfg, 0, |_, rng| Ok(inverse_diag0(&rng.normal_matrix(d, k))))?;
            let reference = run_reps(cfg, REFERENCE_STREAM, |_, rng| {
                Ok(1.0 / sample_chisq(rng, d - k + 1, 0.0)?)
            })?;
            (stat, reference)
        }
        (DistributionKind::InvChisqDiag, _) => {
            return Err(Error::InvalidArgument(
                "inv_chisq_diag needs Gaussian {d, k} parameters".into(),
            ))
        }
        (_, DistributionParams::Gaussian { .. }) => {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} needs regression parameters"
            )))
        }
        (kind, DistributionParams::Regression { dgp, model, n }) => {
            let n = *n;
            let parts = regression_parts(dgp, model, n)?;
            let (k, k1, k2) = (model.size(), model.size1(), model.size2());
            let s2 = parts.cp.cond_var;
            match kind {
                DistributionKind::Tzm1 if !(parts.b2 > 0.0) => {
                    return Err(Error::InvalidArgument(
                        "degenerate parameters: b2 = 0 (point mass)".into(),
                    ))
                }
                DistributionKind::Tt1z1 if !(parts.b1 > 0.0) => {
                    return Err(Error::InvalidArgument(
                        "degenerate parameters: b - b2 = 0 (point mass)".into(),
                    ))
                }
                _ => {}
            }
            let stat = run_reps(cfg, 0, |_, rng| {
                let sample = generate_sample(dgp, n, rng)?;
                let z = select_columns(&sample.x, &model.indices());
                let z1 = z.columns(0, k1).into_owned();
                Ok(match kind {
                    DistributionKind::HotRatio | DistributionKind::SigmaHat => {
                        let f = fit(&sample, model, &ShrinkageConfig::ols())?;
                        if kind == DistributionKind::SigmaHat {
                            f.sigma_hat_sq
                        } else {
                            let e = f.theta_ols() - &parts.cp.theta;
                            crate::numerics::quad_form(&e, &parts.cp.s, &e)
                        }
                    }
                    DistributionKind::HotRatioBlock1 => {
                        let f = fit(&sample, model, &ShrinkageConfig::ols())?;
                        let e = &f.theta1_star_ls - &parts.theta1_star;
                        let s11 = parts.cp.s.view((0, 0), (k1, k1)).into_owned();
                        crate::numerics::quad_form(&e, &s11, &e)
                    }
                    DistributionKind::WishartSchur => {
                        let z2 = z.columns(k1, k2).into_owned();
                        let resid = &z2 - &z1 * least_squares_matrix(&z1, &z2)?;
                        resid.norm_squared()
                    }
                    DistributionKind::Tzm1 => {
                        let signal =
                            Matrix::from_column_slice(n, 1, (&z * &parts.cp.theta).as_slice());
                        let resid = &signal - &z1 * least_squares_matrix(&z1, &signal)?;
                        resid.norm_squared()
                    }
                    DistributionKind::Tt1z1 => (&z1 * &parts.theta1_tilde).norm_squared(),
                    DistributionKind::InvChisqDiag => unreachable!("handled above"),
                })
            })?;
            let reference = run_reps(cfg, REFERENCE_STREAM, |_, rng| {
                Ok(match kind {
                    DistributionKind::HotRatio => {
                        s2 * sample_chisq(rng, k, 0.0)? / sample_chisq(rng, n - k + 1, 0.0)?
                    }
                    DistributionKind::HotRatioBlock1 => {
                        parts.s1_sq * sample_chisq(rng, k1, 0.0)?
                            / sample_chisq(rng, n - k1 + 1, 0.0)?
                    }
                    DistributionKind::SigmaHat => {
                        s2 * sample_chisq(rng, n - k, 0.0)? / (n - k) as f64
                    }
                    DistributionKind::WishartSchur => (0..n - k1)
                        .map(|_| (&parts.schur_chol * rng.normal_vector(k2)).norm_squared())
                        .sum(),
                    DistributionKind::Tzm1 => parts.b2 * sample_chisq(rng, n - k1, 0.0)?,
                    DistributionKind::Tt1z1 => parts.b1 * sample_chisq(rng, n, 0.0)?,
                    DistributionKind::InvChisqDiag => unreachable!("handled above"),
                })
            })?;
            (stat, reference)
        }
    };
    let (ks_statistic, p_value) = ks_two_sample(&stat, &reference)?;
    Ok(DistributionReport {
        kind,
        reps: cfg.reps,
        ks_statistic,
        p_value,
        statistic_mean: mean(&stat),
        statistic_se: std_error(&stat),
        reference_mean: mean(&reference),
        pass: p_value > KS_PASS_THRESHOLD,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upper,
    Lower,
    TwoSided,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WishartBranch {
    Lower,
    UpperShift,
    Upper,
}

/// A tail event together with a sampler for the statistic it concerns.
#[derive(Clone, Debug)]
pub enum TailCheck {
    /// `χ²_k/k − 1`.
    ChiSq { k: usize, two_sided: bool },
    /// `v'Av − tr A`, `A` symmetric positive semidefinite.
    QuadForm { a: Matrix, side: Side },
    /// `|v'Av|`, `A` symmetric and traceless.
    Traceless { a: Matrix },
    /// `|v'Av|`, `A` traceless with `AA = 0`; `relaxed` selects the closed-form corollary.
    Nilpotent { a: Matrix, relaxed: bool },
    /// `|w|`, `w ~ N(0, τ²)`.
    NormalTail { tau_sq: f64 },
    /// `χ²_k(b)/d − (k + b)/d` at fixed noncentrality `b`.
    NoncentralBalance {
        d: usize,
        k: usize,
        b: f64,
        two_sided: bool,
    },
    /// Extreme eigenvalues of `W/d`, `W ~ W_k(I, d)`.
    Wishart {
        d: usize,
        k: usize,
        branch: WishartBranch,
    },
    /// `tr((V'V)⁻¹)` for a `d × k` standard normal `V`.
    Trace { d: usize, k: usize, relative: bool },
    /// `ρ̂²/r` or `ρ²/r` from full regression simulations.
    Intermediate {
        kind: IntermediateKind,
        dgp: Dgp,
        model: CandidateModel,
        n: usize,
        shrink: ShrinkageChoice,
    },
}

fn symmetric_eigenvalues(a: &Matrix) -> Result<(f64, f64)> {
    if !a.is_square() || (a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
        return Err(Error::InvalidArgument(
            "matrix must be square and symmetric".into(),
        ));
    }
    let e = SymmetricEigen::new(a.clone()).eigenvalues;
    Ok((e.min(), e.max()))
}

impl TailCheck {
    pub fn name(&self) -> String {
        match self {
            TailCheck::ChiSq {
                two_sided: false, ..
            } => "chisq_tail".into(),
            TailCheck::ChiSq {
                two_sided: true, ..
            } => "chisq_two_sided".into(),
            TailCheck::QuadForm {
                side: Side::Upper, ..
            } => "quadform_upper".into(),
            TailCheck::QuadForm {
                side: Side::Lower, ..
            } => "quadform_lower".into(),
            TailCheck::QuadForm {
                side: Side::TwoSided,
                ..
            } => "quadform_two_sided".into(),
            TailCheck::Traceless { .. } => "traceless".into(),
            TailCheck::Nilpotent { relaxed: false, .. } => "nilpotent".into(),
            TailCheck::Nilpotent { relaxed: true, .. } => "nilpotent_two_sided".into(),
            TailCheck::NormalTail { .. } => "normal_tail".into(),
            TailCheck::NoncentralBalance { .. } => "noncentral_balance".into(),
            TailCheck::Wishart {
                branch: WishartBranch::Lower,
                ..
            } => "wishart_lower".into(),
            TailCheck::Wishart {
                branch: WishartBranch::UpperShift,
                ..
            } => "wishart_upper_shift".into(),
            TailCheck::Wishart {
                branch: WishartBranch::Upper,
                ..
            } => "wishart_upper".into(),
            TailCheck::Trace { relative: true, .. } => "trace_relative".into(),
            TailCheck::Trace {
                relative: false, ..
            } => "trace_absolute".into(),
            TailCheck::Intermediate { kind, .. } => serde_json::to_value(kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
        }
    }

    /// The bound kind matching this check, for the elementary results.
    pub fn tail_kind(&self) -> Result<Option<TailKind>> {
        Ok(Some(match self {
            TailCheck::ChiSq {
                k,
                two_sided: false,
            } => TailKind::ChiSqUpper { k: *k },
            TailCheck::ChiSq { k, two_sided: true } => TailKind::ChiSqTwoSided { k: *k },
            TailCheck::QuadForm { a, side } => {
                let (lo, hi) = symmetric_eigenvalues(a)?;
                if lo < -1e-12 * hi.abs().max(1.0) {
                    return Err(Error::InvalidArgument(
                        "matrix must be positive semidefinite".into(),
                    ));
                }
                let d = a.nrows();
                let lambda_max = hi.max(0.0);
                match side {
                    Side::Upper => TailKind::QuadFormUpper { d, lambda_max },
                    Side::Lower => TailKind::QuadFormLower {
                        d,
                        lambda_max,
                        trace: a.trace(),
                    },
                    Side::TwoSided => TailKind::QuadFormTwoSided { d, lambda_max },
                }
            }
            TailCheck::Traceless { a } => {
                let (lo, hi) = symmetric_eigenvalues(a)?;
                if a.trace().abs() > 1e-10 * a.amax().max(1.0) {
                    return Err(Error::InvalidArgument("matrix must be traceless".into()));
                }
                TailKind::Traceless {
                    d: a.nrows(),
                    lambda_max: hi.max(0.0),
                    lambda_min: lo.min(0.0),
                }
            }
            TailCheck::Nilpotent { a, relaxed } => {
                if !a.is_square()
                    || a.trace().abs() > 1e-10 * a.amax().max(1.0)
                    || (a * a).amax() > 1e-10 * a.amax().powi(2).max(1.0)
                {
                    return Err(Error::InvalidArgument(
                        "matrix must be square, traceless and square to zero".into(),
                    ));
                }
                let (_, ata_max) = symmetric_eigenvalues(&(a.transpose() * a))?;
                let (_, sym_max) = symmetric_eigenvalues(&(a + a.transpose()))?;
                let (d, positive) = (a.nrows(), sym_max > 1e-12);
                if *relaxed {
                    TailKind::NilpotentTwoSided {
                        d,
                        lambda_max_ata: ata_max.max(0.0),
                        symmetric_part_positive: positive,
                    }
                } else {
                    TailKind::Nilpotent {
                        d,
                        lambda_max_ata: ata_max.max(0.0),
                        symmetric_part_positive: positive,
                    }
                }
            }
            TailCheck::NormalTail { tau_sq } => TailKind::NormalTail { tau_sq: *tau_sq },
            TailCheck::NoncentralBalance { d, k, b, two_sided } => TailKind::NoncentralBalance {
                d: *d,
                k: *k,
                b: *b,
                two_sided: *two_sided,
            },
            TailCheck::Wishart { d, k, branch } => match branch {
                WishartBranch::Lower => TailKind::WishartLower { d: *d, k: *k },
                WishartBranch::UpperShift => TailKind::WishartUpperShift { d: *d, k: *k },
                WishartBranch::Upper => TailKind::WishartUpper { d: *d, k: *k },
            },
            TailCheck::Trace {
                d,
                k,
                relative: true,
            } => TailKind::TraceRelative { d: *d, k: *k },
            TailCheck::Trace {
                d,
                k,
                relative: false,
            } => TailKind::TraceAbsolute { d: *d, k: *k },
            TailCheck::Intermediate { .. } => return Ok(None),
        }))
    }
}

/// Compares the empirical frequency of each tail event on the grid with
/// its bound.
pub fn verify_tail_bound(check: &TailCheck, cfg: &McConfig) -> Result<Vec<TailVerdict>> {
    cfg.validate()?;
    let kind = check.tail_kind()?;
    let bounds: Vec<BoundValue> = match (&kind, check) {
        (Some(kind), _) => cfg
            .epsilon_grid
            .iter()
            .map(|&e| elementary_tail_bounds(kind, e))
            .collect::<Result<_>>()?,
        (
            None,
            TailCheck::Intermediate {
                kind,
                dgp,
                model,
                n,
                ..
            },
        ) => {
            model.validate_for_fit(dgp.p(), *n)?;
            let mu = conditional_params(dgp, model)?.mu;
            cfg.epsilon_grid
                .iter()
                .map(|&d| {
                    intermediate_lemma_bounds(*kind, *n, model.size(), model.size1(), d, Some(mu))
                })
                .collect::<Result<_>>()?
        }
        (None, _) => unreachable!("only intermediate checks lack an elementary kind"),
    };

    // Precomputed pieces shared across replications.
    let cp = match check {
        TailCheck::Intermediate { dgp, model, .. } => Some(conditional_params(dgp, model)?),
        _ => None,
    };
    let chol = match check {
        TailCheck::QuadForm { a, .. }
        | TailCheck::Traceless { a }
        | TailCheck::Nilpotent { a, .. } => Some(a.clone()),
        _ => None,
    };

    let stats: Vec<f64> = run_reps(cfg, 0, |_, rng| {
        Ok(match check {
            TailCheck::ChiSq { k, .. } => sample_chisq(rng, *k, 0.0)? / *k as f64 - 1.0,
            TailCheck::QuadForm { a, .. }
            | TailCheck::Traceless { a }
            | TailCheck::Nilpotent { a, .. } => {
                let a = chol.as_ref().unwrap_or(a);
                let v = rng.normal_vector(a.nrows());
                let q = crate::numerics::quad_form(&v, a, &v);
                if matches!(check, TailCheck::QuadForm { .. }) {
                    q - a.trace()
                } else {
                    q
                }
            }
            TailCheck::NormalTail { tau_sq } => tau_sq.sqrt() * rng.standard_normal(),
            TailCheck::NoncentralBalance { d, k, b, .. } => {
                let df = *d as f64;
                sample_chisq(rng, *k, *b)? / df - (*k as f64 + b) / df
            }
            TailCheck::Wishart { d, k, branch } => {
                let v = rng.normal_matrix(*d, *k);
                let e = SymmetricEigen::new(v.transpose() * v / *d as f64).eigenvalues;
                if *branch == WishartBranch::Lower {
                    e.min()
                } else {
                    e.max()
                }
            }
            TailCheck::Trace { d, k, .. } => {
                let v = rng.normal_matrix(*d, *k);
                (v.transpose() * v)
                    .try_inverse()
                    .map_or(1.0, |inv| inv.trace())
            }
            TailCheck::Intermediate {
                kind,
                dgp,
                model,
                n,
                shrink,
            } => {
                let cp = cp.as_ref().expect("computed above");
                let sample = generate_sample(dgp, *n, rng)?;
                let f = fit(&sample, model, &shrink.for_model(model))?;
                let value = if kind.is_estimate() {
                    empirical_mspe(&sample, model, &f)?
                } else {
                    true_mspe(&f, cp)?
                };
                value / normalizer_r(&f, cp, *n, model.size(), model.size1())
            }
        })
    })?;

    Ok(cfg
        .epsilon_grid
        .iter()
        .zip(bounds)
        .map(|(&eps, bound)| {
            let events = stats.iter().filter(|&&s| tail_event(check, s, eps)).count();
            TailVerdict::new(eps, events, cfg.reps, bound, cfg.confidence)
        })
        .collect())
}

fn tail_event(check: &TailCheck, s: f64, eps: f64) -> bool {
    match check {
        TailCheck::ChiSq { two_sided, .. } | TailCheck::NoncentralBalance { two_sided, .. } => {
            if *two_sided {
                s.abs() >= eps
            } else {
                s >= eps
            }
        }
        TailCheck::QuadForm { side, .. } => match side {
            Side::Upper => s >= eps,
            Side::Lower => s <= -eps,
            Side::TwoSided => s.abs() >= eps,
        },
        TailCheck::Traceless { .. }
        | TailCheck::Nilpotent { .. }
        | TailCheck::NormalTail { .. } => s.abs() >= eps,
        TailCheck::Wishart { d, k, branch } => {
            let r = (*k as f64 / *d as f64).sqrt();
            match branch {
                WishartBranch::Lower => s <= eps * eps * (1.0 - r).powi(2),
                WishartBranch::UpperShift => s >= (1.0 + r + eps).powi(2),
                WishartBranch::Upper => s >= (1.0 + eps).powi(2) * (1.0 + r).powi(2),
            }
        }
        TailCheck::Trace { d, k, relative } => {
            let centre = *k as f64 / (*d - *k + 1) as f64;
            if *relative {
                (s / centre - 1.0).abs() >= eps
            } else {
                (s - centre).abs() >= eps
            }
        }
        TailCheck::Intermediate { kind, .. } => {
            if kind.is_upper() {
                s > eps.exp()
            } else {
                s < (-eps).exp()
            }
        }
    }
}

/// A finished experiment. `metadata` is the only part that may differ
/// between reruns with the same configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: Value,
    pub per_epsilon: Vec<LabeledVerdict>,
    pub summaries: BTreeMap<String, Value>,
    pub metadata: Value,
}

impl ExperimentReport {
    /// Verdicts that are substantive (non-vacuous) and failed.
    pub fn failures(&self) -> Vec<&LabeledVerdict> {
        self.per_epsilon
            .iter()
            .filter(|v| !v.verdict.pass)
            .collect()
    }

    /// The report without its metadata block, for reproducibility comparisons.
    pub fn payload_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("metadata");
        }
        Ok(serde_json::to_string(&v)?)
    }
}

fn metadata(cfg: &McConfig, started: Instant) -> Value {
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    json!({
        "crate_version": env!("CARGO_PKG_VERSION"),
        "parallelism": cfg.parallelism,
        "elapsed_seconds": started.elapsed().as_secs_f64(),
        "timestamp_unix": timestamp,
    })
}

/// Shared inputs of the three headline experiments.
#[derive(Clone, Debug)]
pub struct ExperimentSetup<'a> {
    pub dgp: &'a Dgp,
    pub collection: &'a ModelCollection,
    pub n: usize,
    pub shrink: &'a ShrinkageChoice,
}

impl ExperimentSetup<'_> {
    fn validate(&self) -> Result<()> {
        for (i, m) in self.collection.models.iter().enumerate() {
            m.validate_for_fit(self.dgp.p(), self.n).map_err(|e| {
                Error::InvalidModel(format!("model {i} of '{}': {e}", self.collection.name))
            })?;
        }
        Ok(())
    }

    fn describe(&self, cfg: &McConfig) -> Value {
        let mut c = cfg.describe();
        let obj = c.as_object_mut().expect("object");
        obj.insert("n".into(), json!(self.n));
        obj.insert("p".into(), json!(self.dgp.p()));
        obj.insert("collection".into(), json!(self.collection));
        obj.insert("shrinkage".into(), json!(self.shrink));
        obj.insert("var_y_over_noise".into(), json!(self.signal_bound()));
        c
    }

    /// `d = Var(y)/σ²`, the tightest admissible signal bound.
    fn signal_bound(&self) -> f64 {
        variance_of_y(self.dgp) / self.dgp.noise_var()
    }

    fn params(&self) -> Result<Vec<ConditionalParams>> {
        self.collection
            .models
            .iter()
            .map(|m| conditional_params(self.dgp, m))
            .collect()
    }
}

fn verdicts_for(
    label: &str,
    model: Option<usize>,
    cfg: &McConfig,
    events: impl Fn(f64) -> usize,
    bound: impl Fn(f64) -> Result<BoundValue>,
) -> Result<Vec<LabeledVerdict>> {
    cfg.epsilon_grid
        .iter()
        .map(|&eps| {
            Ok(LabeledVerdict {
                bound: label.to_string(),
                model,
                verdict: TailVerdict::new(eps, events(eps), cfg.reps, bound(eps)?, cfg.confidence),
            })
        })
        .collect()
}

fn count(values: &[f64], pred: impl Fn(f64) -> bool) -> usize {
    values.iter().filter(|&&v| pred(v)).count()
}

struct RatioRep {
    log_ratio: Vec<f64>,
    expansion_dev: f64,
    collapse_dev: Option<f64>,
}

/// Per replication: fresh training sample, every model fitted, `ln(ρ̂²/ρ²)`
/// recorded. Verdicts for the per-model and uniform log-ratio bounds.
pub fn experiment_ratio(setup: &ExperimentSetup, cfg: &McConfig) -> Result<ExperimentReport> {
    let started = Instant::now();
    cfg.validate()?;
    setup.validate()?;
    let params = setup.params()?;
    let models = &setup.collection.models;
    let n = setup.n;
    let collapse = matches!(setup.shrink, ShrinkageChoice::Fixed(c) if c.c1 == 0.0 && c.c2 == 0.0);

    let reps = run_reps(cfg, 0, |_, rng| {
        let sample = generate_sample(setup.dgp, n, rng)?;
        let mut rep = RatioRep {
            log_ratio: Vec::with_capacity(models.len()),
            expansion_dev: 0.0,
            collapse_dev: None,
        };
        for (m, cp) in models.iter().zip(&params) {
            let f = fit(&sample, m, &setup.shrink.for_model(m))?;
            let rho = true_mspe(&f, cp)?;
            let expanded = true_mspe_expanded(&f, cp, &sample, m)?;
            rep.expansion_dev = rep.expansion_dev.max((rho - expanded).abs() / rho);
            let hat = empirical_mspe(&sample, m, &f)?;
            if collapse {
                let k = m.size() as f64;
                let expected = f.sigma_hat_sq * (1.0 + k / (n as f64 - k + 1.0));
                let dev = (hat - expected).abs() / expected;
                rep.collapse_dev = Some(rep.collapse_dev.unwrap_or(0.0).max(dev));
            }
            rep.log_ratio.push((hat / rho).ln());
        }
        Ok(rep)
    })?;

    let mut per_epsilon = Vec::new();
    let mut summaries = BTreeMap::new();
    let mut medians = Vec::new();
    let mut iqrs = Vec::new();
    for (j, (m, cp)) in models.iter().zip(&params).enumerate() {
        let abs: Vec<f64> = reps.iter().map(|r| r.log_ratio[j].abs()).collect();
        medians.push(quantile(&abs, 0.5));
        iqrs.push(quantile(&abs, 0.75) - quantile(&abs, 0.25));
        let base = BoundInput::per_model(n, m.size(), m.size1(), 1.0);
        let events = |eps: f64| count(&abs, |v| v >= eps);
        per_epsilon.extend(verdicts_for("theorem1", Some(j), cfg, events, |e| {
            bound_theorem1(&BoundInput { epsilon: e, ..base })
        })?);
        per_epsilon.extend(verdicts_for("theorem1_mu", Some(j), cfg, events, |e| {
            bound_theorem1(&BoundInput { epsilon: e, ..base }.with_mu(cp.mu))
        })?);
    }
    let summary = collection_summary(setup.collection)?;
    let sup: Vec<f64> = reps
        .iter()
        .map(|r| r.log_ratio.iter().fold(0.0f64, |a, v| a.max(v.abs())))
        .collect();
    let events = |eps: f64| count(&sup, |v| v >= eps);
    let d = setup.signal_bound();
    per_epsilon.extend(verdicts_for("uniform", None, cfg, events, |e| {
        bound_uniform(&BoundInput::uniform(n, summary, e), false)
    })?);
    per_epsilon.extend(verdicts_for("uniform_d", None, cfg, events, |e| {
        bound_uniform(&BoundInput::uniform(n, summary, e).with_d(d), true)
    })?);

    summaries.insert("median_abs_log_ratio".into(), json!(medians));
    summaries.insert("iqr_abs_log_ratio".into(), json!(iqrs));
    summaries.insert(
        "mu".into(),
        json!(params.iter().map(|c| c.mu).collect::<Vec<_>>()),
    );
    summaries.insert(
        "expansion_max_rel_dev".into(),
        json!(reps.iter().map(|r| r.expansion_dev).fold(0.0f64, f64::max)),
    );
    if collapse {
        let dev = reps
            .iter()
            .filter_map(|r| r.collapse_dev)
            .fold(0.0f64, f64::max);
        summaries.insert("collapse_max_rel_dev".into(), json!(dev));
    }
    Ok(ExperimentReport {
        experiment: "ratio".into(),
        config: setup.describe(cfg),
        per_epsilon,
        summaries,
        metadata: metadata(cfg, started),
    })
}

/// Per replication: select the empirically best model and compare it with
/// the truly best one. Verdicts for the selection bounds.
pub fn experiment_selection(setup: &ExperimentSetup, cfg: &McConfig) -> Result<ExperimentReport> {
    let started = Instant::now();
    cfg.validate()?;
    setup.validate()?;
    let n = setup.n;
    let reps = run_reps(cfg, 0, |_, rng| {
        let sample = generate_sample(setup.dgp, n, rng)?;
        let r = select(&sample, setup.collection, setup.shrink, Some(setup.dgp))?;
        let stats = r.ratio_stats.expect("oracle supplied");
        Ok((
            r.selected_empirical,
            r.selected_oracle.expect("oracle supplied"),
            stats.log_true_ratio,
            stats.log_hat_ratio,
        ))
    })?;
    let true_ratio: Vec<f64> = reps.iter().map(|r| r.2).collect();
    let hat_ratio: Vec<f64> = reps.iter().map(|r| r.3.abs()).collect();
    let summary = collection_summary(setup.collection)?;
    let d = setup.signal_bound();

    let mut per_epsilon = Vec::new();
    for (label, which, d_variant) in [
        ("true_perf", PerfKind::TruePerf, false),
        ("true_perf_d", PerfKind::TruePerf, true),
        ("est_perf", PerfKind::EstPerf, false),
        ("est_perf_d", PerfKind::EstPerf, true),
    ] {
        let values = if which == PerfKind::TruePerf {
            &true_ratio
        } else {
            &hat_ratio
        };
        per_epsilon.extend(verdicts_for(
            label,
            None,
            cfg,
            |e| count(values, |v| v >= e),
            |e| {
                bound_corollary3(
                    &BoundInput::uniform(n, summary, e).with_d(d),
                    which,
                    d_variant,
                )
            },
        )?);
    }

    let hits = reps.iter().filter(|r| r.0 == r.1).count();
    let mut counts = vec![0usize; setup.collection.len()];
    for r in &reps {
        counts[r.0] += 1;
    }
    let mut summaries = BTreeMap::new();
    summaries.insert(
        "freq_selected_equals_best".into(),
        json!(hits as f64 / cfg.reps as f64),
    );
    summaries.insert(
        "median_log_true_ratio".into(),
        json!(quantile(&true_ratio, 0.5)),
    );
    summaries.insert("mean_log_true_ratio".into(), json!(mean(&true_ratio)));
    summaries.insert(
        "median_abs_log_hat_ratio".into(),
        json!(quantile(&hat_ratio, 0.5)),
    );
    summaries.insert("selection_counts".into(), json!(counts));
    Ok(ExperimentReport {
        experiment: "selection".into(),
        config: setup.describe(cfg),
        per_epsilon,
        summaries,
        metadata: metadata(cfg, started),
    })
}

/// Options specific to the coverage experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageOptions {
    pub alpha: f64,
    /// Replace every `ρ̂²` by the true `ρ²`; coverage is then exactly `1 − α`.
    pub oracle_injection: bool,
}

struct CoverageRep {
    coverage: f64,
    tv: Vec<f64>,
    short_log: f64,
    tv_violations: usize,
}

/// Per replication: conditional coverage of the selected interval, TV
/// distances for every model and the interval-length ratio.
pub fn experiment_coverage(
    setup: &ExperimentSetup,
    cfg: &McConfig,
    opts: CoverageOptions,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    cfg.validate()?;
    setup.validate()?;
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::Config(format!(
            "alpha must lie in (0, 1), got {}",
            opts.alpha
        )));
    }
    let n = setup.n;
    let params = setup.params()?;
    let reps = run_reps(cfg, 0, |_, rng| {
        let sample = generate_sample(setup.dgp, n, rng)?;
        let r = select(&sample, setup.collection, setup.shrink, Some(setup.dgp))?;
        let truth: Vec<f64> = r
            .per_model
            .iter()
            .map(|o| o.oracle.expect("oracle").rho_sq_true)
            .collect();
        let hat: Vec<f64> = if opts.oracle_injection {
            truth.clone()
        } else {
            r.per_model.iter().map(|o| o.rho_sq_hat).collect()
        };
        let sel = if opts.oracle_injection {
            r.selected_oracle.expect("oracle")
        } else {
            r.selected_empirical
        };
        let best = r.selected_oracle.expect("oracle");
        let mut tv = Vec::with_capacity(truth.len());
        let mut tv_violations = 0;
        for (h, t) in hat.iter().zip(&truth) {
            let d = tv_centered_normals(*h, *t)?;
            if d > (h / t).ln().abs() / 4.0 + 1e-15 {
                tv_violations += 1;
            }
            tv.push(d);
        }
        Ok(CoverageRep {
            coverage: conditional_coverage(hat[sel], truth[sel], opts.alpha)?,
            tv,
            short_log: 0.5 * (hat[sel] / truth[best]).ln(),
            tv_violations,
        })
    })?;

    let summary = collection_summary(setup.collection)?;
    let d = setup.signal_bound();
    let gap: Vec<f64> = reps
        .iter()
        .map(|r| ((1.0 - opts.alpha) - r.coverage).abs())
        .collect();
    let sup_tv: Vec<f64> = reps
        .iter()
        .map(|r| r.tv.iter().copied().fold(0.0, f64::max))
        .collect();
    let short: Vec<f64> = reps.iter().map(|r| r.short_log.abs()).collect();

    let mut per_epsilon = Vec::new();
    for (label, d_variant) in [("pi_valid", false), ("pi_valid_d", true)] {
        per_epsilon.extend(verdicts_for(
            label,
            None,
            cfg,
            |e| count(&gap, |v| v > e),
            |e| bound_pi_valid(&BoundInput::uniform(n, summary, e).with_d(d), d_variant),
        )?);
    }
    for (label, d_variant) in [("tv_uniform", false), ("tv_uniform_d", true)] {
        per_epsilon.extend(verdicts_for(
            label,
            None,
            cfg,
            |e| count(&sup_tv, |v| v >= e),
            |e| {
                bound_tv(
                    &BoundInput::uniform(n, summary, e).with_d(d),
                    true,
                    d_variant,
                )
            },
        )?);
    }
    for (j, (m, cp)) in setup.collection.models.iter().zip(&params).enumerate() {
        let tv: Vec<f64> = reps.iter().map(|r| r.tv[j]).collect();
        let base = BoundInput::per_model(n, m.size(), m.size1(), 1.0).with_mu(cp.mu);
        for (label, signal) in [("tv", false), ("tv_mu", true)] {
            per_epsilon.extend(verdicts_for(
                label,
                Some(j),
                cfg,
                |e| count(&tv, |v| v >= e),
                |e| bound_tv(&BoundInput { epsilon: e, ..base }, false, signal),
            )?);
        }
    }
    for (label, d_variant) in [("pi_short", false), ("pi_short_d", true)] {
        per_epsilon.extend(verdicts_for(
            label,
            None,
            cfg,
            |e| count(&short, |v| v >= e),
            |e| bound_pi_short(&BoundInput::uniform(n, summary, e).with_d(d), d_variant),
        )?);
    }

    let coverage: Vec<f64> = reps.iter().map(|r| r.coverage).collect();
    let mut summaries = BTreeMap::new();
    summaries.insert("alpha".into(), json!(opts.alpha));
    summaries.insert("oracle_injection".into(), json!(opts.oracle_injection));
    summaries.insert("median_coverage".into(), json!(quantile(&coverage, 0.5)));
    summaries.insert("mean_coverage".into(), json!(mean(&coverage)));
    summaries.insert("median_abs_coverage_gap".into(), json!(quantile(&gap, 0.5)));
    summaries.insert(
        "max_abs_coverage_gap".into(),
        json!(gap.iter().copied().fold(0.0, f64::max)),
    );
    summaries.insert("median_sup_tv".into(), json!(quantile(&sup_tv, 0.5)));
    summaries.insert(
        "max_sup_tv".into(),
        json!(sup_tv.iter().copied().fold(0.0, f64::max)),
    );
    summaries.insert(
        "median_abs_log_length_ratio".into(),
        json!(quantile(&short, 0.5)),
    );
    summaries.insert(
        "tv_log_ratio_violations".into(),
        json!(reps.iter().map(|r| r.tv_violations).sum::<usize>()),
    );
    Ok(ExperimentReport {
        experiment: "coverage".into(),
        config: {
            let mut c = setup.describe(cfg);
            c.as_object_mut()
                .expect("object")
                .insert("alpha".into(), json!(opts.alpha));
            c
        },
        per_epsilon,
        summaries,
        metadata: metadata(cfg, started),
    })
}
