//! Fit every model of an explicit collection on the same sample and pick the
//! one with the smallest estimated MSPE (and, given the true process, the one
//! with the smallest true MSPE).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{conditional_params, CandidateModel, Dgp, TrainingSample};
use crate::error::{Error, Result};
use crate::mspe::{empirical_mspe, true_mspe, MspeReport};
use crate::shrinkage::{fit, BlockJsFit, ShrinkageChoice};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelCollection {
    pub name: String,
    pub models: Vec<CandidateModel>,
}

impl ModelCollection {
    pub fn new(name: impl Into<String>, models: Vec<CandidateModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidArgument("model collection is empty".into()));
        }
        Ok(Self {
            name: name.into(),
            models,
        })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// `(r_n, s_n, |M_n|)`: smallest block-1 size, largest model size, count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionSummary {
    pub r_n: usize,
    pub s_n: usize,
    pub count: usize,
}

pub fn collection_summary(collection: &ModelCollection) -> Result<CollectionSummary> {
    let models = &collection.models;
    if models.is_empty() {
        return Err(Error::InvalidArgument("model collection is empty".into()));
    }
    Ok(CollectionSummary {
        r_n: models.iter().map(CandidateModel::size1).min().unwrap_or(0),
        s_n: models.iter().map(CandidateModel::size).max().unwrap_or(0),
        count: models.len(),
    })
}

/// Per-model line of a selection report.
#[derive(Clone, Debug, Serialize)]
pub struct ModelOutcome {
    pub a1: f64,
    pub a2: f64,
    pub sigma_hat_sq: f64,
    pub rho_sq_hat: f64,
    /// Present only when the true process was supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<MspeReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioStats {
    /// `ln(ρ²(m̂*)/ρ²(m*))`, always ≥ 0.
    pub log_true_ratio: f64,
    /// `ln(ρ̂²(m̂*)/ρ²(m̂*))`.
    pub log_hat_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelectionResult {
    pub per_model: Vec<ModelOutcome>,
    pub selected_empirical: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_oracle: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio_stats: Option<RatioStats>,
    #[serde(skip)]
    pub fits: Vec<BlockJsFit>,
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if !(v < b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn select(
    sample: &TrainingSample,
    collection: &ModelCollection,
    shrink: &ShrinkageChoice,
    oracle: Option<&Dgp>,
) -> Result<SelectionResult> {
    if collection.is_empty() {
        return Err(Error::InvalidArgument("model collection is empty".into()));
    }
    for (i, m) in collection.models.iter().enumerate() {
        m.validate_for_fit(sample.p(), sample.n())
            .map_err(|e| Error::InvalidModel(format!("model {i} of '{}': {e}", collection.name)))?;
    }
    let fitted: Vec<(BlockJsFit, ModelOutcome)> = collection
        .models
        .par_iter()
        .map(|m| -> Result<_> {
            let f = fit(sample, m, &shrink.for_model(m))?;
            let rho_sq_hat = empirical_mspe(sample, m, &f)?;
            let oracle = match oracle {
                Some(dgp) => {
                    let cp = conditional_params(dgp, m)?;
                    Some(MspeReport::new(true_mspe(&f, &cp)?, rho_sq_hat))
                }
                None => None,
            };
            let outcome = ModelOutcome {
                a1: f.a1,
                a2: f.a2,
                sigma_hat_sq: f.sigma_hat_sq,
                rho_sq_hat,
                oracle,
            };
            Ok((f, outcome))
        })
        .collect::<Result<_>>()?;
    let (fits, per_model): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();

    let selected_empirical = argmin(per_model.iter().map(|o| o.rho_sq_hat)).expect("non-empty");
    let (selected_oracle, ratio_stats) = if oracle.is_some() {
        let truth: Vec<f64> = per_model
            .iter()
            .map(|o| o.oracle.expect("oracle present").rho_sq_true)
            .collect();
        let best = argmin(truth.iter().copied()).expect("non-empty");
        let chosen = &per_model[selected_empirical];
        let stats = RatioStats {
            log_true_ratio: (truth[selected_empirical] / truth[best]).ln(),
            log_hat_ratio: chosen.oracle.expect("oracle present").log_ratio,
        };
        (Some(best), Some(stats))
    } else {
        (None, None)
    };
    Ok(SelectionResult {
        per_model,
        selected_empirical,
        selected_oracle,
        ratio_stats,
        fits,
    })
}
