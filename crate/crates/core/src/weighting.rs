//! Inverse propensity weighting estimators: Horvitz-Thompson, Hajek and
//! augmented IPW (doubly robust).
//!
//! All three take estimated scores `e_hat` from the caller, clamp them per
//! [`Truncation`], and return an [`EstimateResult`] with a normal interval.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EstimateResult};
use crate::error::{Error, Result};
use crate::models::{truncate_propensity, Arm, ModelKind};
use crate::seed::{derive_seed, rng_for};
use crate::stats::sample_variance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    None,
    Bounds { lo: f64, hi: f64 },
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::Bounds {
            lo: 0.025,
            hi: 0.975,
        }
    }
}

impl Truncation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Truncation::Bounds { lo, hi } if !(0.0 < lo && lo < hi && hi < 1.0) => Err(
                Error::Config(format!("truncation bounds ({lo}, {hi}) must satisfy 0 < lo < hi < 1")),
            ),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, e_hat: &[f64]) -> Vec<f64> {
        match *self {
            Truncation::None => e_hat.to_vec(),
            Truncation::Bounds { lo, hi } => truncate_propensity(e_hat, lo, hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    /// Nonparametric bootstrap over units with the scores held fixed.
    Bootstrap { replicates: usize, seed: u64 },
    /// Influence-function variance treating the scores as known.
    Plugin,
    /// Influence-function variance with the first-order correction for
    /// scores fitted by logistic regression of Z on an intercept and the
    /// dataset's covariates.
    Sandwich,
}

pub const MIN_BOOTSTRAP_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightingConfig {
    pub truncation: Truncation,
    pub variance: VarianceMethod,
    /// Outcome model family for AIPW.
    pub outcome_model: ModelKind,
    pub crossfit_folds: usize,
    /// Seed for AIPW fold assignment and outcome-model randomness.
    pub seed: u64,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        WeightingConfig {
            truncation: Truncation::default(),
            variance: VarianceMethod::Sandwich,
            outcome_model: ModelKind::Ols,
            crossfit_folds: 2,
            seed: 0,
        }
    }
}

impl WeightingConfig {
    pub fn validate(&self) -> Result<()> {
        self.truncation.validate()?;
        if let VarianceMethod::Bootstrap { replicates, .. } = self.variance {
            if replicates < MIN_BOOTSTRAP_REPLICATES {
                return Err(Error::Config(format!(
                    "bootstrap needs at least {MIN_BOOTSTRAP_REPLICATES} replicates, got {replicates}"
                )));
            }
        }
        if self.crossfit_folds < 2 {
            return Err(Error::Config("crossfit_folds must be at least 2".to_string()));
        }
        Ok(())
    }
}

/// Validated, truncated scores and which entries truncation moved.
fn prepare_scores(ds: &Dataset, e_hat: &[f64], cfg: &WeightingConfig) -> Result<(Vec<f64>, Vec<bool>)> {
    cfg.validate()?;
    if e_hat.len() != ds.n() {
        return Err(Error::Dimension {
            expected: ds.n(),
            got: e_hat.len(),
        });
    }
    let e = cfg.truncation.apply(e_hat);
    if let Some(bad) = e.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::InvalidInput(format!(
            "propensity score {bad} outside the open interval (0, 1)"
        )));
    }
    let moved = e.iter().zip(e_hat).map(|(a, b)| a != b).collect();
    Ok((e, moved))
}

fn ht_term(z: f64, y: f64, e: f64) -> f64 {
    z * y / e - (1.0 - z) * y / (1.0 - e)
}

fn ht_point(ds: &Dataset, e: &[f64], units: impl Iterator<Item = usize>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in units {
        sum += ht_term(ds.z(i), ds.outcome[i], e[i]);
        count += 1;
    }
    sum / count as f64
}

/// Normalized weighted arm means; `None` when an arm carries no weight.
fn hajek_point(ds: &Dataset, e: &[f64], units: impl Iterator<Item = usize>) -> Option<f64> {
    let (mut num1, mut den1, mut num0, mut den0) = (0.0, 0.0, 0.0, 0.0);
    for i in units {
        let z = ds.z(i);
        let y = ds.outcome[i];
        num1 += z * y / e[i];
        den1 += z / e[i];
        num0 += (1.0 - z) * y / (1.0 - e[i]);
        den0 += (1.0 - z) / (1.0 - e[i]);
    }
    (den1 > 0.0 && den0 > 0.0).then(|| num1 / den1 - num0 / den0)
}

/// Estimated scores and the covariates of the logistic model behind them.
#[derive(Debug, Clone, Copy)]
pub struct Scores<'a> {
    pub e_hat: &'a [f64],
    pub covariates: &'a DMatrix<f64>,
}

/// Add the first-order effect of fitting the scores by logistic regression
/// of Z on [1, X]: phi_i + H' M^-1 x_i (Z_i - e_i), where
/// M = (1/n) sum e(1-e) x x' and H = (1/n) sum dphi/de e(1-e) x.
/// Units moved by truncation have zero derivative.
fn logistic_correction(
    ds: &Dataset,
    covariates: &DMatrix<f64>,
    e_fit: &[f64],
    moved: &[bool],
    phi: &mut [f64],
    dphi_de: &[f64],
) -> Result<()> {
    let n = ds.n();
    if covariates.nrows() != n {
        return Err(Error::Dimension {
            expected: n,
            got: covariates.nrows(),
        });
    }
    let p = covariates.ncols() + 1;
    let design = |i: usize| {
        let mut x = DVector::zeros(p);
        x[0] = 1.0;
        for j in 1..p {
            x[j] = covariates[(i, j - 1)];
        }
        x
    };
    let mut info = DMatrix::<f64>::zeros(p, p);
    let mut h = DVector::<f64>::zeros(p);
    for i in 0..n {
        let x = design(i);
        let w = e_fit[i] * (1.0 - e_fit[i]);
        info.ger(w, &x, &x, 1.0);
        if !moved[i] {
            h.axpy(dphi_de[i] * w, &x, 1.0);
        }
    }
    info /= n as f64;
    h /= n as f64;
    // Collinear covariates leave `info` singular; h lies in its range, so the
    // minimum-norm solution gives the same correction.
    let a = match info.clone().cholesky() {
        Some(chol) => chol.solve(&h),
        None => {
            let svd = info.svd(true, true);
            let eps = 1e-10 * svd.singular_values.max().max(f64::MIN_POSITIVE);
            svd.solve(&h, eps)
                .map_err(|e| Error::Singular(format!("propensity information matrix: {e}")))?
        }
    };
    for i in 0..n {
        phi[i] += a.dot(&design(i)) * (ds.z(i) - e_fit[i]);
    }
    Ok(())
}

/// Variance from centered influence values: sum phi^2 / n^2, after the
/// logistic correction for [`VarianceMethod::Sandwich`].
fn influence_variance(
    ds: &Dataset,
    scores: Scores<'_>,
    moved: &[bool],
    mut phi: Vec<f64>,
    dphi_de: &[f64],
    sandwich: bool,
) -> Result<f64> {
    if sandwich {
        logistic_correction(ds, scores.covariates, scores.e_hat, moved, &mut phi, dphi_de)?;
    }
    let n = phi.len() as f64;
    Ok(phi.iter().map(|v| v * v).sum::<f64>() / (n * n))
}

/// Bootstrap variance of `statistic` over `n` units. Replicate `b` draws
/// from its own seeded stream. Returns the variance and the count of
/// replicates where the statistic was undefined.
pub fn bootstrap_variance(
    n: usize,
    replicates: usize,
    seed: u64,
    statistic: impl Fn(&[usize]) -> Option<f64>,
) -> (f64, usize) {
    let mut draws = Vec::with_capacity(replicates);
    let mut failed = 0;
    let mut idx = vec![0usize; n];
    for b in 0..replicates {
        let mut rng = rng_for(seed, b as u64);
        idx.iter_mut().for_each(|slot| *slot = rng.random_range(0..n));
        match statistic(&idx) {
            Some(v) if v.is_finite() => draws.push(v),
            _ => failed += 1,
        }
    }
    (sample_variance(&draws), failed)
}

/// Horvitz-Thompson: (1/n) sum [Z Y / e - (1 - Z) Y / (1 - e)].
pub fn estimate_ht(ds: &Dataset, e_hat: &[f64], cfg: &WeightingConfig) -> Result<EstimateResult> {
    let (e, moved) = prepare_scores(ds, e_hat, cfg)?;
    let n = ds.n();
    let tau = ht_point(ds, &e, 0..n);
    let (var, failed) = match cfg.variance {
        VarianceMethod::Plugin | VarianceMethod::Sandwich => {
            let phi = (0..n).map(|i| ht_term(ds.z(i), ds.outcome[i], e[i]) - tau).collect();
            let dphi: Vec<f64> = (0..n)
                .map(|i| {
                    let (z, y) = (ds.z(i), ds.outcome[i]);
                    -z * y / (e[i] * e[i]) - (1.0 - z) * y / ((1.0 - e[i]) * (1.0 - e[i]))
                })
                .collect();
            let sandwich = cfg.variance == VarianceMethod::Sandwich;
            (influence_variance(ds, scores_of(ds, e_hat), &moved, phi, &dphi, sandwich)?, 0)
        }
        VarianceMethod::Bootstrap { replicates, seed } => {
            bootstrap_variance(n, replicates, seed, |idx| Some(ht_point(ds, &e, idx.iter().copied())))
        }
    };
    Ok(
        EstimateResult::normal("Horvitz-Thompson", tau, var, ds.n_treated(), ds.n_control())
            .with_diagnostic("n_truncated", count(&moved))
            .with_diagnostic("bootstrap_failures", failed as f64),
    )
}

fn scores_of<'a>(ds: &'a Dataset, e_hat: &'a [f64]) -> Scores<'a> {
    Scores {
        e_hat,
        covariates: &ds.covariates,
    }
}

fn count(flags: &[bool]) -> f64 {
    flags.iter().filter(|&&f| f).count() as f64
}

/// Hajek: difference of inverse-propensity weighted arm means.
pub fn estimate_hajek(ds: &Dataset, e_hat: &[f64], cfg: &WeightingConfig) -> Result<EstimateResult> {
    let (e, moved) = prepare_scores(ds, e_hat, cfg)?;
    let n = ds.n();
    let tau = hajek_point(ds, &e, 0..n)
        .ok_or_else(|| Error::EmptyArm("Hajek estimator needs both arms".to_string()))?;
    let (var, failed) = match cfg.variance {
        VarianceMethod::Plugin | VarianceMethod::Sandwich => {
            let (mut w1, mut w0, mut m1, mut m0) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                let z = ds.z(i);
                w1 += z / e[i];
                w0 += (1.0 - z) / (1.0 - e[i]);
                m1 += z * ds.outcome[i] / e[i];
                m0 += (1.0 - z) * ds.outcome[i] / (1.0 - e[i]);
            }
            let (mu1, mu0) = (m1 / w1, m0 / w0);
            let (w1, w0) = (w1 / n as f64, w0 / n as f64);
            let mut phi = Vec::with_capacity(n);
            let mut dphi = Vec::with_capacity(n);
            for i in 0..n {
                let (z, y, ei) = (ds.z(i), ds.outcome[i], e[i]);
                let r1 = z * (y - mu1) / w1;
                let r0 = (1.0 - z) * (y - mu0) / w0;
                phi.push(r1 / ei - r0 / (1.0 - ei));
                dphi.push(-r1 / (ei * ei) - r0 / ((1.0 - ei) * (1.0 - ei)));
            }
            let sandwich = cfg.variance == VarianceMethod::Sandwich;
            (influence_variance(ds, scores_of(ds, e_hat), &moved, phi, &dphi, sandwich)?, 0)
        }
        VarianceMethod::Bootstrap { replicates, seed } => {
            bootstrap_variance(n, replicates, seed, |idx| hajek_point(ds, &e, idx.iter().copied()))
        }
    };
    Ok(
        EstimateResult::normal("Hajek", tau, var, ds.n_treated(), ds.n_control())
            .with_diagnostic("n_truncated", count(&moved))
            .with_diagnostic("bootstrap_failures", failed as f64),
    )
}

/// Outcome-model predictions for every unit where unit `i`'s predictions
/// come from models trained on the other folds only.
pub fn crossfit_outcome_predictions(
    ds: &Dataset,
    kind: &ModelKind,
    folds: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = ds.n();
    if folds < 2 || folds > n {
        return Err(Error::InvalidInput(format!("cannot cross-fit {n} units over {folds} folds")));
    }
    let assignment = fold_assignment(ds, folds, seed)?;
    let mut mu1 = vec![0.0; n];
    let mut mu0 = vec![0.0; n];
    for k in 0..folds {
        let held: Vec<usize> = (0..n).filter(|&i| assignment[i] == k).collect();
        let held_x = ds.rows(&held);
        for arm in [Arm::Treated, Arm::Control] {
            let train: Vec<usize> = (0..n)
                .filter(|&i| assignment[i] != k && ds.treatment[i] == arm.indicator())
                .collect();
            let y: Vec<f64> = train.iter().map(|&i| ds.outcome[i]).collect();
            let stream = (k as u64) * 2 + u64::from(arm.indicator());
            let model = kind.fit_stream(&ds.rows(&train), &y, stream)?;
            let pred = model.predict(&held_x)?;
            let target = if arm == Arm::Treated { &mut mu1 } else { &mut mu0 };
            for (&i, p) in held.iter().zip(pred) {
                target[i] = p;
            }
        }
    }
    Ok((mu1, mu0))
}

/// Random balanced fold labels such that every training complement holds
/// both arms.
fn fold_assignment(ds: &Dataset, folds: usize, seed: u64) -> Result<Vec<usize>> {
    let n = ds.n();
    for attempt in 0..crate::data::MAX_SPLIT_RETRIES {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(derive_seed(seed, 0xF01D), attempt));
        let mut labels = vec![0usize; n];
        for (pos, &i) in order.iter().enumerate() {
            labels[i] = pos % folds;
        }
        let ok = (0..folds).all(|k| {
            let t = (0..n).filter(|&i| labels[i] != k && ds.is_treated(i)).count();
            let c = (0..n).filter(|&i| labels[i] != k && !ds.is_treated(i)).count();
            t > 0 && c > 0
        });
        if ok {
            return Ok(labels);
        }
    }
    Err(Error::EmptyArm("no fold assignment leaves both arms in every training set".to_string()))
}

fn aipw_terms(ds: &Dataset, e: &[f64], mu1: &[f64], mu0: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (0..ds.n())
        .map(|i| {
            let z = ds.z(i);
            let y = ds.outcome[i];
            let adj1 = z * (y - mu1[i]) / e[i] + mu1[i];
            let adj0 = (1.0 - z) * (y - mu0[i]) / (1.0 - e[i]) + mu0[i];
            (adj1, adj0)
        })
        .unzip()
}

/// AIPW from given outcome-model predictions for every unit.
///
/// tau = mean(adj1 - adj0) with
/// adj1 = Z (Y - mu1) / e + mu1 and adj0 = (1 - Z)(Y - mu0) / (1 - e) + mu0.
pub fn aipw_from_predictions(
    ds: &Dataset,
    e_hat: &[f64],
    mu1: &[f64],
    mu0: &[f64],
    cfg: &WeightingConfig,
) -> Result<EstimateResult> {
    aipw_with_scores(ds, scores_of(ds, e_hat), mu1, mu0, cfg)
}

/// [`aipw_from_predictions`] when the score model used other covariates
/// than `ds` holds.
pub fn aipw_with_scores(
    ds: &Dataset,
    scores: Scores<'_>,
    mu1: &[f64],
    mu0: &[f64],
    cfg: &WeightingConfig,
) -> Result<EstimateResult> {
    let (e, moved) = prepare_scores(ds, scores.e_hat, cfg)?;
    let n = ds.n();
    for m in [mu1, mu0] {
        if m.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: m.len(),
            });
        }
    }
    let (adj1, adj0) = aipw_terms(ds, &e, mu1, mu0);
    let phi: Vec<f64> = adj1.iter().zip(&adj0).map(|(a, b)| a - b).collect();
    let tau = phi.iter().sum::<f64>() / n as f64;
    let (var, failed) = match cfg.variance {
        VarianceMethod::Plugin | VarianceMethod::Sandwich => {
            let centered = phi.iter().map(|v| v - tau).collect();
            let dphi: Vec<f64> = (0..n)
                .map(|i| {
                    let (z, y, ei) = (ds.z(i), ds.outcome[i], e[i]);
                    -z * (y - mu1[i]) / (ei * ei) - (1.0 - z) * (y - mu0[i]) / ((1.0 - ei) * (1.0 - ei))
                })
                .collect();
            let sandwich = cfg.variance == VarianceMethod::Sandwich;
            (influence_variance(ds, scores, &moved, centered, &dphi, sandwich)?, 0)
        }
        VarianceMethod::Bootstrap { replicates, seed } => bootstrap_variance(n, replicates, seed, |idx| {
            Some(idx.iter().map(|&i| phi[i]).sum::<f64>() / idx.len() as f64)
        }),
    };
    let mean1 = adj1.iter().sum::<f64>() / n as f64;
    let mean0 = adj0.iter().sum::<f64>() / n as f64;
    Ok(
        EstimateResult::normal("AIPW", tau, var, ds.n_treated(), ds.n_control())
            .with_diagnostic("mu1_adj", mean1)
            .with_diagnostic("mu0_adj", mean0)
            .with_diagnostic("n_truncated", count(&moved))
            .with_diagnostic("bootstrap_failures", failed as f64),
    )
}

/// AIPW with cross-fitted outcome models of kind `cfg.outcome_model`.
pub fn estimate_aipw(ds: &Dataset, e_hat: &[f64], cfg: &WeightingConfig) -> Result<EstimateResult> {
    estimate_aipw_with_scores(ds, scores_of(ds, e_hat), cfg)
}

pub fn estimate_aipw_with_scores(ds: &Dataset, scores: Scores<'_>, cfg: &WeightingConfig) -> Result<EstimateResult> {
    cfg.validate()?;
    let (mu1, mu0) = crossfit_outcome_predictions(ds, &cfg.outcome_model, cfg.crossfit_folds, cfg.seed)?;
    aipw_with_scores(ds, scores, &mu1, &mu0, cfg)
}
