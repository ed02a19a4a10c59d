//! Logistic propensity model fitted by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear predictors are clamped to this magnitude so scores stay inside (0, 1).
const ETA_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub max_iter: usize,
    /// Convergence threshold on the largest coefficient update.
    pub tol: f64,
    /// L2 penalty on the slopes; the intercept is never penalized.
    pub ridge: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            max_iter: 100,
            tol: 1e-8,
            ridge: 1e-6,
        }
    }
}

/// Fitted propensity model, intercept first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub n_iterations: usize,
}

pub fn logistic(eta: f64) -> f64 {
    let eta = eta.clamp(-ETA_LIMIT, ETA_LIMIT);
    1.0 / (1.0 + (-eta).exp())
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

/// Maximize the ridge-penalized Bernoulli log-likelihood of `z` given `x`.
///
/// Non-convergence is reported through `converged`, not as an error. A
/// weighted design that cannot be factored on the first iteration is an error.
pub fn fit_logistic(x: &DMatrix<f64>, z: &[u8], cfg: &LogisticConfig) -> Result<PropensityModel> {
    let (n, d) = x.shape();
    if z.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: z.len(),
        });
    }
    if n <= d {
        return Err(Error::InvalidInput(format!("{n} units for {d} covariates")));
    }
    let n_treated = z.iter().filter(|&&v| v == 1).count();
    if n_treated == 0 || n_treated == n {
        return Err(Error::EmptyArm("logistic fit needs both arms".to_string()));
    }

    let design = with_intercept(x);
    let target = DVector::from_iterator(n, z.iter().map(|&v| f64::from(v)));
    let p = d + 1;
    let mut beta = DVector::<f64>::zeros(p);
    let mut converged = false;
    let mut n_iterations = 0;

    for iter in 1..=cfg.max_iter {
        n_iterations = iter;
        let eta = &design * &beta;
        let mu = eta.map(logistic);
        let w = mu.map(|m| m * (1.0 - m));

        let mut hessian = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let row = design.row(i);
            let wi = w[i];
            for a in 0..p {
                let ra = row[a] * wi;
                for b in a..p {
                    hessian[(a, b)] += ra * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hessian[(a, b)] = hessian[(b, a)];
            }
        }
        let mut gradient = design.tr_mul(&(&target - &mu));
        for j in 1..p {
            hessian[(j, j)] += cfg.ridge;
            gradient[j] -= cfg.ridge * beta[j];
        }

        let Some(chol) = hessian.cholesky() else {
            if iter == 1 {
                return Err(Error::Singular("weighted logistic design".to_string()));
            }
            break;
        };
        let step = chol.solve(&gradient);
        if step.iter().any(|s| !s.is_finite()) {
            break;
        }
        beta += &step;
        if step.amax() < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(PropensityModel {
        coefficients: beta.iter().copied().collect(),
        converged,
        n_iterations,
    })
}

impl PropensityModel {
    pub fn n_features(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: x.ncols(),
            });
        }
        Ok((0..x.nrows())
            .map(|i| {
                self.coefficients[0]
                    + x.row(i)
                        .iter()
                        .zip(&self.coefficients[1..])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect())
    }
}

/// Elementwise logistic of the linear predictor.
pub fn predict_propensity(model: &PropensityModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(model.linear_predictor(x)?.into_iter().map(logistic).collect())
}

/// Clamp every score into `[lo, hi]`.
pub fn truncate_propensity(e_hat: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    debug_assert!(0.0 < lo && lo < hi && hi < 1.0);
    e_hat.iter().map(|e| e.clamp(lo, hi)).collect()
}
