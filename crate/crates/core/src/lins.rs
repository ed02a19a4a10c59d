//! Generalized Lin's (machine-learning regression adjustment) estimator with
//! debiasing shifts and two-fold cross-fitting.
//!
//! For each fold `k` the arm models are trained on the other fold and then
//! shifted so their mean residual over fold `k`'s units of that arm is zero.
//! Fold `k` then imputes the missing potential outcome of each of its units:
//!
//! ```text
//! tau_k = (1/|I_k|) sum_{i in I_k} [Z Y + (1-Z) mu1~(X)] - [(1-Z) Y + Z mu0~(X)]
//! V_k   = s2(1)/n1_k + s2(0)/n0_k + s2(tau)/|I_k|
//! tau   = (|I_1|/n) tau_1 + (|I_2|/n) tau_2
//! V     = (|I_1|/n)^2 V_1 + (|I_2|/n)^2 V_2
//! ```

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::{split_random_min, Dataset, EstimateResult, FoldSplit};
use crate::error::{Error, Result};
use crate::models::{Arm, ModelKind, RegressionModel};
use crate::stats::{mean, pooled_sd};

pub const METHOD: &str = "Generalized Lin's";

/// Normalized covariate-mean difference above which the design is flagged
/// as too imbalanced for regression adjustment to be trusted.
pub const IMBALANCE_THRESHOLD: f64 = 0.25;

/// A base model plus a constant shift.
#[derive(Debug, Clone, PartialEq)]
pub struct DebiasedModel {
    pub base: RegressionModel,
    pub shift: f64,
    pub arm: Arm,
}

impl DebiasedModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.base.predict(x)?.into_iter().map(|p| p + self.shift).collect())
    }
}

/// Shift `model` by the mean residual over the `arm` units of `shift_data`.
pub fn debias_model(model: RegressionModel, shift_data: &Dataset, arm: Arm) -> Result<DebiasedModel> {
    let units: Vec<usize> = (0..shift_data.n())
        .filter(|&i| shift_data.treatment[i] == arm.indicator())
        .collect();
    if units.is_empty() {
        return Err(Error::EmptyArm(format!("no {arm:?} units to compute the shift")));
    }
    let pred = model.predict(&shift_data.rows(&units))?;
    let residuals: Vec<f64> = units
        .iter()
        .zip(&pred)
        .map(|(&i, p)| shift_data.outcome[i] - p)
        .collect();
    Ok(DebiasedModel {
        base: model,
        shift: mean(&residuals),
        arm,
    })
}

/// Per-fold quantities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldEstimate {
    pub size: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub tau: f64,
    pub var: f64,
    pub sigma2_1: f64,
    pub sigma2_0: f64,
    pub sigma2_tau: f64,
    pub shift_treated: f64,
    pub shift_control: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinsResult {
    pub estimate: EstimateResult,
    pub folds: [FoldEstimate; 2],
}

/// Random split (re-drawn until each fold has two units per arm), then
/// [`lins_on_split`].
pub fn crossfit_lins(ds: &Dataset, kind: &ModelKind, seed: u64) -> Result<LinsResult> {
    let split = split_random_min(ds, seed, 2)?;
    lins_on_split(ds, &split, kind)
}

/// Cross-fitted estimate on a given split. Each fold needs one unit per arm
/// for the point estimate; with fewer than two units of an arm in a fold the
/// variance is undefined and reported as NaN.
pub fn lins_on_split(ds: &Dataset, split: &FoldSplit, kind: &ModelKind) -> Result<LinsResult> {
    let n = ds.n();
    let folds = split.folds();
    let data: Vec<Dataset> = folds.iter().map(|f| ds.subset(f)).collect();
    for (k, fold) in data.iter().enumerate() {
        if fold.n_treated() == 0 || fold.n_control() == 0 {
            return Err(Error::EmptyArm(format!(
                "fold {} has {} treated and {} control units; need both arms",
                k + 1,
                fold.n_treated(),
                fold.n_control()
            )));
        }
    }

    // models[k] = (mu1, mu0) trained on fold k
    let mut models = Vec::with_capacity(2);
    for (k, fold) in data.iter().enumerate() {
        let mut pair = Vec::with_capacity(2);
        for arm in [Arm::Treated, Arm::Control] {
            let units: Vec<usize> = (0..fold.n())
                .filter(|&i| fold.treatment[i] == arm.indicator())
                .collect();
            let y: Vec<f64> = units.iter().map(|&i| fold.outcome[i]).collect();
            let stream = (k as u64) * 2 + u64::from(arm.indicator());
            pair.push(kind.fit_stream(&fold.rows(&units), &y, stream)?.for_arm(arm));
        }
        models.push(pair);
    }

    let mut estimates = Vec::with_capacity(2);
    for k in 0..2 {
        let fold = &data[k];
        let other = &models[1 - k];
        let mu1 = debias_model(other[0].clone(), fold, Arm::Treated)?;
        let mu0 = debias_model(other[1].clone(), fold, Arm::Control)?;
        estimates.push(fold_estimate(fold, &mu1, &mu0)?);
    }

    let w1 = folds[0].len() as f64 / n as f64;
    let w2 = folds[1].len() as f64 / n as f64;
    let tau = w1 * estimates[0].tau + w2 * estimates[1].tau;
    let var = w1 * w1 * estimates[0].var + w2 * w2 * estimates[1].var;

    let max_smd = max_abs_smd(ds);
    let mut estimate = EstimateResult::normal(METHOD, tau, var, ds.n_treated(), ds.n_control())
        .with_diagnostic("max_abs_smd", max_smd)
        .with_diagnostic("imbalance_flag", f64::from(u8::from(max_smd > IMBALANCE_THRESHOLD)));
    for (k, f) in estimates.iter().enumerate() {
        let tag = k + 1;
        estimate = estimate
            .with_diagnostic(&format!("tau_fold{tag}"), f.tau)
            .with_diagnostic(&format!("var_fold{tag}"), f.var)
            .with_diagnostic(&format!("sigma2_1_fold{tag}"), f.sigma2_1)
            .with_diagnostic(&format!("sigma2_0_fold{tag}"), f.sigma2_0)
            .with_diagnostic(&format!("sigma2_tau_fold{tag}"), f.sigma2_tau);
    }

    let second = estimates.pop().expect("two folds");
    let first = estimates.pop().expect("two folds");
    Ok(LinsResult {
        estimate,
        folds: [first, second],
    })
}

fn fold_estimate(fold: &Dataset, mu1: &DebiasedModel, mu0: &DebiasedModel) -> Result<FoldEstimate> {
    let all: Vec<usize> = (0..fold.n()).collect();
    let x = fold.rows(&all);
    let m1 = mu1.predict(&x)?;
    let m0 = mu0.predict(&x)?;
    let size = fold.n();
    let n_treated = fold.n_treated();
    let n_control = size - n_treated;

    let mut treated_side = 0.0;
    let mut control_side = 0.0;
    let mut ss1 = 0.0;
    let mut ss0 = 0.0;
    for i in 0..size {
        let y = fold.outcome[i];
        if fold.is_treated(i) {
            treated_side += y;
            control_side += m0[i];
            ss1 += (y - m1[i]).powi(2);
        } else {
            treated_side += m1[i];
            control_side += y;
            ss0 += (y - m0[i]).powi(2);
        }
    }
    let tau = (treated_side - control_side) / size as f64;

    let bar1 = mean(&m1);
    let bar0 = mean(&m0);
    let ss_tau: f64 = m1
        .iter()
        .zip(&m0)
        .map(|(a, b)| (a - b - (bar1 - bar0)).powi(2))
        .sum();
    let unbiased = |ss: f64, count: usize| {
        if count < 2 {
            f64::NAN
        } else {
            ss / (count - 1) as f64
        }
    };
    let sigma2_1 = unbiased(ss1, n_treated);
    let sigma2_0 = unbiased(ss0, n_control);
    let sigma2_tau = ss_tau / (size - 1) as f64;
    let var = sigma2_1 / n_treated as f64 + sigma2_0 / n_control as f64 + sigma2_tau / size as f64;

    Ok(FoldEstimate {
        size,
        n_treated,
        n_control,
        tau,
        var,
        sigma2_1,
        sigma2_0,
        sigma2_tau,
        shift_treated: mu1.shift,
        shift_control: mu0.shift,
    })
}

/// Largest |mean_t - mean_c| / pooled sd over covariates; constant
/// covariates are skipped.
fn max_abs_smd(ds: &Dataset) -> f64 {
    let treated = ds.treated_indices();
    let control = ds.control_indices();
    (0..ds.d())
        .filter_map(|j| {
            let col = ds.covariates.column(j);
            let t: Vec<f64> = treated.iter().map(|&i| col[i]).collect();
            let c: Vec<f64> = control.iter().map(|&i| col[i]).collect();
            let sd = pooled_sd(&t, &c);
            (sd > 0.0).then(|| ((mean(&t) - mean(&c)) / sd).abs())
        })
        .fold(0.0, f64::max)
}
