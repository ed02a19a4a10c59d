//! Synthetic studies with a known effect, Monte Carlo replication of the
//! estimators, and the propensity-score identities checked empirically.
//!
//! Covariates are iid standard normal, assignment is logistic in `X beta`
//! and both potential outcomes share one noise draw, so every unit's effect
//! is exactly `tau`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EstimateResult, Oracle};
use crate::error::{Error, Result};
use crate::lins::crossfit_lins;
use crate::matching::estimate_matching;
use crate::models::{fit_logistic, logistic, predict_propensity, LogisticConfig, ModelKind};
use crate::seed::{derive_seed, rng_for};
use crate::stats::{mean, pooled_sd, sample_sd, sample_variance};
use crate::weighting::{
    estimate_aipw_with_scores, estimate_hajek, estimate_ht, Scores, VarianceMethod, WeightingConfig,
};

pub const MIN_UNITS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Misspecification {
    #[default]
    None,
    /// The propensity model does not see `hidden_covariate`.
    HideCovariateFromPropensity,
    /// Outcome models (and matching) do not see `hidden_covariate`.
    HideCovariateFromOutcome,
    /// Adds `X_h^2` to both potential outcomes, `h = hidden_covariate`.
    NonlinearOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub n: usize,
    pub d: usize,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub alpha: f64,
    pub tau: f64,
    #[serde(default = "one")]
    pub noise_sd: f64,
    #[serde(default)]
    pub misspec: Misspecification,
    #[serde(default)]
    pub hidden_covariate: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_UNITS {
            return Err(Error::Config(format!("n must be at least {MIN_UNITS}, got {}", self.n)));
        }
        if self.d == 0 || self.beta.len() != self.d || self.gamma.len() != self.d {
            return Err(Error::Config(format!(
                "beta and gamma must both have length d = {}",
                self.d
            )));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config("noise_sd must be nonnegative".to_string()));
        }
        if self.hidden_covariate >= self.d {
            return Err(Error::Config("hidden_covariate out of range".to_string()));
        }
        let hides = matches!(
            self.misspec,
            Misspecification::HideCovariateFromPropensity | Misspecification::HideCovariateFromOutcome
        );
        if hides && self.d < 2 {
            return Err(Error::Config("hiding a covariate needs d >= 2".to_string()));
        }
        Ok(())
    }

    /// Covariate columns visible to the propensity model.
    pub fn propensity_columns(&self) -> Vec<usize> {
        self.visible(Misspecification::HideCovariateFromPropensity)
    }

    /// Covariate columns visible to outcome models and matching.
    pub fn outcome_columns(&self) -> Vec<usize> {
        self.visible(Misspecification::HideCovariateFromOutcome)
    }

    fn visible(&self, hiding: Misspecification) -> Vec<usize> {
        (0..self.d)
            .filter(|&j| self.misspec != hiding || j != self.hidden_covariate)
            .collect()
    }
}

/// Draw one study. The oracle carries both potential outcomes and the true
/// propensity scores.
pub fn generate_dgp(cfg: &DgpConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (n, d) = (cfg.n, cfg.d);
    let mut rng = rng_for(cfg.seed, 0);
    let x = DMatrix::<f64>::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
    let mut treatment = Vec::with_capacity(n);
    let mut propensity = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let eta: f64 = (0..d).map(|j| row[j] * cfg.beta[j]).sum();
        let e = logistic(eta);
        let z = u8::from(rng.random::<f64>() < e);
        let noise: f64 = StandardNormal.sample(&mut rng);
        let mut base = cfg.alpha + (0..d).map(|j| row[j] * cfg.gamma[j]).sum::<f64>() + cfg.noise_sd * noise;
        if cfg.misspec == Misspecification::NonlinearOutcome {
            base += row[cfg.hidden_covariate].powi(2);
        }
        treatment.push(z);
        propensity.push(e);
        y0.push(base);
        y1.push(base + cfg.tau);
    }
    let outcome = treatment
        .iter()
        .enumerate()
        .map(|(i, &z)| if z == 1 { y1[i] } else { y0[i] })
        .collect();
    let names = (0..d).map(|j| format!("x{j}")).collect();
    Dataset::new(x, treatment, outcome, names)?.with_oracle(Oracle {
        y0,
        y1,
        propensity: Some(propensity),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum SimEstimator {
    Lins {
        #[serde(default = "ols")]
        model: ModelKind,
    },
    HorvitzThompson,
    Hajek,
    Aipw,
    Matching {
        caliper: f64,
    },
}

fn ols() -> ModelKind {
    ModelKind::Ols
}

impl SimEstimator {
    /// Generalized Lin's (OLS), HT, Hajek, AIPW and matching at caliper 0.1.
    pub fn default_set() -> Vec<SimEstimator> {
        vec![
            SimEstimator::Lins { model: ModelKind::Ols },
            SimEstimator::HorvitzThompson,
            SimEstimator::Hajek,
            SimEstimator::Aipw,
            SimEstimator::Matching { caliper: 0.1 },
        ]
    }

    pub fn label(&self) -> String {
        match self {
            SimEstimator::Lins { model } => format!("{} ({})", crate::lins::METHOD, model.label()),
            SimEstimator::HorvitzThompson => "Horvitz-Thompson".to_string(),
            SimEstimator::Hajek => "Hajek".to_string(),
            SimEstimator::Aipw => "AIPW".to_string(),
            SimEstimator::Matching { caliper } => crate::matching::matching_label(*caliper),
        }
    }

    fn needs_propensity(&self) -> bool {
        !matches!(self, SimEstimator::Lins { .. })
    }
}

/// Run one estimator on a study. Outcome models and matching see
/// `outcome_view`; weighting uses the scores and the propensity view.
fn run_one(
    est: &SimEstimator,
    outcome_view: &Dataset,
    propensity: Option<(&Dataset, &[f64])>,
    weighting: &WeightingConfig,
    seed: u64,
) -> Result<EstimateResult> {
    let need = || propensity.ok_or_else(|| Error::InvalidInput("propensity model failed".to_string()));
    let mut cfg = *weighting;
    cfg.seed = derive_seed(seed, 1);
    if let VarianceMethod::Bootstrap { replicates, .. } = cfg.variance {
        cfg.variance = VarianceMethod::Bootstrap {
            replicates,
            seed: derive_seed(seed, 2),
        };
    }
    match est {
        SimEstimator::Lins { model } => Ok(crossfit_lins(outcome_view, model, derive_seed(seed, 3))?.estimate),
        SimEstimator::HorvitzThompson => {
            let (view, e) = need()?;
            estimate_ht(view, e, &cfg)
        }
        SimEstimator::Hajek => {
            let (view, e) = need()?;
            estimate_hajek(view, e, &cfg)
        }
        SimEstimator::Aipw => {
            let (view, e) = need()?;
            let scores = Scores {
                e_hat: e,
                covariates: &view.covariates,
            };
            estimate_aipw_with_scores(outcome_view, scores, &cfg)
        }
        SimEstimator::Matching { caliper } => Ok(estimate_matching(outcome_view, need()?.1, *caliper)?.0),
    }
}

/// Estimated scores from a logistic model on the propensity-visible columns,
/// with that view of the data.
pub fn fitted_propensity(ds: &Dataset, cfg: &DgpConfig) -> Result<(Dataset, Vec<f64>)> {
    let view = ds.select_covariates(&cfg.propensity_columns());
    let model = fit_logistic(&view.covariates, &view.treatment, &LogisticConfig::default())?;
    let e = predict_propensity(&model, &view.covariates)?;
    Ok((view, e))
}

/// One estimator on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub tau_hat: f64,
    pub var_hat: f64,
    pub covered: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub method: String,
    pub replications: usize,
    pub failures: usize,
    pub mean_bias: f64,
    /// Variance of the point estimates across replicates.
    pub empirical_var: f64,
    pub mean_var_hat: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub tau: f64,
    pub replications: usize,
    pub rows: Vec<EstimatorSummary>,
    /// `per_replicate[k]` holds estimator `k`'s results in replicate order.
    pub per_replicate: Vec<Vec<ReplicateResult>>,
}

/// Draw `replications` studies with seeds `derive_seed(seed, r)` and run every
/// estimator on each. Failures are recorded, not fatal. Replicates run in
/// parallel; results do not depend on scheduling.
pub fn run_replications(
    cfg: &DgpConfig,
    estimators: &[SimEstimator],
    replications: usize,
    seed: u64,
    weighting: &WeightingConfig,
) -> Result<SimulationSummary> {
    cfg.validate()?;
    weighting.validate()?;
    if replications < 2 {
        return Err(Error::Config(format!("need at least 2 replications, got {replications}")));
    }
    if estimators.is_empty() {
        return Err(Error::Config("no estimators listed".to_string()));
    }
    let results: Vec<Vec<ReplicateResult>> = (0..replications)
        .into_par_iter()
        .map(|r| replicate(cfg, estimators, r, derive_seed(seed, r as u64), weighting))
        .collect();

    let per_replicate: Vec<Vec<ReplicateResult>> = (0..estimators.len())
        .map(|k| results.iter().map(|row| row[k].clone()).collect())
        .collect();
    let rows = estimators
        .iter()
        .zip(&per_replicate)
        .map(|(est, runs)| summarize(est.label(), runs, cfg.tau, replications))
        .collect();
    Ok(SimulationSummary {
        tau: cfg.tau,
        replications,
        rows,
        per_replicate,
    })
}

fn replicate(
    cfg: &DgpConfig,
    estimators: &[SimEstimator],
    r: usize,
    seed: u64,
    weighting: &WeightingConfig,
) -> Vec<ReplicateResult> {
    let failed = |e: &Error| {
        estimators
            .iter()
            .map(|_| ReplicateResult {
                replicate: r,
                tau_hat: f64::NAN,
                var_hat: f64::NAN,
                covered: false,
                error: Some(e.to_string()),
            })
            .collect()
    };
    let ds = match generate_dgp(&DgpConfig {
        seed,
        ..cfg.clone()
    }) {
        Ok(ds) => ds,
        Err(e) => return failed(&e),
    };
    let needs_scores = estimators.iter().any(SimEstimator::needs_propensity);
    let fitted = if needs_scores {
        fitted_propensity(&ds, cfg).ok()
    } else {
        None
    };
    let outcome_view = ds.select_covariates(&cfg.outcome_columns());
    estimators
        .iter()
        .enumerate()
        .map(|(k, est)| {
            let propensity = fitted.as_ref().map(|(view, e)| (view, e.as_slice()));
            match run_one(est, &outcome_view, propensity, weighting, derive_seed(seed, 100 + k as u64)) {
                Ok(res) => ReplicateResult {
                    replicate: r,
                    tau_hat: res.tau_hat,
                    var_hat: res.var_hat,
                    covered: res.covers(cfg.tau),
                    error: None,
                },
                Err(e) => ReplicateResult {
                    replicate: r,
                    tau_hat: f64::NAN,
                    var_hat: f64::NAN,
                    covered: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

fn summarize(method: String, runs: &[ReplicateResult], tau: f64, replications: usize) -> EstimatorSummary {
    let ok: Vec<&ReplicateResult> = runs.iter().filter(|r| r.error.is_none()).collect();
    let estimates: Vec<f64> = ok.iter().map(|r| r.tau_hat).collect();
    let var_hats: Vec<f64> = ok.iter().map(|r| r.var_hat).collect();
    let nan_if_empty = |v: f64| if ok.is_empty() { f64::NAN } else { v };
    EstimatorSummary {
        method,
        replications,
        failures: runs.len() - ok.len(),
        mean_bias: nan_if_empty(mean(&estimates) - tau),
        empirical_var: nan_if_empty(sample_variance(&estimates)),
        mean_var_hat: nan_if_empty(mean(&var_hats)),
        coverage: nan_if_empty(ok.iter().filter(|r| r.covered).count() as f64 / ok.len() as f64),
    }
}

impl SimulationSummary {
    pub fn row(&self, method: &str) -> Option<&EstimatorSummary> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// CSV with one row per estimator.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method",
            "replications",
            "failures",
            "tau",
            "mean_bias",
            "empirical_var",
            "mean_var_hat",
            "coverage",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.replications.to_string(),
                r.failures.to_string(),
                format!("{:.6}", self.tau),
                format!("{:.6}", r.mean_bias),
                format!("{:.6}", r.empirical_var),
                format!("{:.6}", r.mean_var_hat),
                format!("{:.4}", r.coverage),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

// ------------------------------------------------ propensity identities

/// Covariate balance within bins of the true propensity score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecileBalance {
    /// Mean |standardized difference| over covariates, per bin.
    pub per_bin: Vec<f64>,
    /// Mean over bins that contain both arms.
    pub average: f64,
}

/// Sort units by true propensity, cut into `bins` equal-count groups and
/// measure arm differences of each covariate inside every group.
pub fn propensity_bin_balance(ds: &Dataset, bins: usize) -> Result<DecileBalance> {
    let e = true_propensity(ds)?;
    if bins == 0 || bins > ds.n() {
        return Err(Error::InvalidInput(format!("cannot cut {} units into {bins} bins", ds.n())));
    }
    let mut order: Vec<usize> = (0..ds.n()).collect();
    order.sort_by(|&a, &b| e[a].total_cmp(&e[b]));
    let n = ds.n();
    let mut per_bin = Vec::with_capacity(bins);
    for b in 0..bins {
        let members = &order[b * n / bins..(b + 1) * n / bins];
        let (t, c): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| ds.is_treated(i));
        if t.len() < 2 || c.len() < 2 {
            continue;
        }
        let diffs: Vec<f64> = (0..ds.d())
            .map(|j| {
                let col = ds.covariates.column(j);
                let xt: Vec<f64> = t.iter().map(|&i| col[i]).collect();
                let xc: Vec<f64> = c.iter().map(|&i| col[i]).collect();
                ((mean(&xt) - mean(&xc)) / pooled_sd(&xt, &xc)).abs()
            })
            .collect();
        per_bin.push(mean(&diffs));
    }
    if per_bin.is_empty() {
        return Err(Error::EmptyArm("no bin holds both arms".to_string()));
    }
    let average = mean(&per_bin);
    Ok(DecileBalance { per_bin, average })
}

/// mean(Z Y / e) with true scores against mean(Y(1)).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IpwIdentity {
    pub weighted_mean: f64,
    pub oracle_mean: f64,
    /// Monte Carlo standard error of the paired difference.
    pub std_error: f64,
}

impl IpwIdentity {
    pub fn z_score(&self) -> f64 {
        (self.weighted_mean - self.oracle_mean) / self.std_error
    }
}

pub fn ipw_identity(ds: &Dataset) -> Result<IpwIdentity> {
    let e = true_propensity(ds)?;
    let oracle = ds.oracle.as_ref().expect("checked by true_propensity");
    let weighted: Vec<f64> = (0..ds.n()).map(|i| ds.z(i) * ds.outcome[i] / e[i]).collect();
    let paired: Vec<f64> = weighted.iter().zip(&oracle.y1).map(|(w, y)| w - y).collect();
    Ok(IpwIdentity {
        weighted_mean: mean(&weighted),
        oracle_mean: mean(&oracle.y1),
        std_error: sample_sd(&paired) / (ds.n() as f64).sqrt(),
    })
}

fn true_propensity(ds: &Dataset) -> Result<&[f64]> {
    ds.oracle
        .as_ref()
        .and_then(|o| o.propensity.as_deref())
        .ok_or_else(|| Error::InvalidInput("dataset carries no true propensity scores".to_string()))
}
