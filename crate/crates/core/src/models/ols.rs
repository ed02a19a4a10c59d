//! Least squares with an intercept. Collinear columns are dropped (their
//! coefficient is fixed at zero) so the fit always exists.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative norm below which a column counts as a linear combination of
/// the columns kept before it.
const COLLINEAR_TOL: f64 = 1e-9;

/// Coefficients, intercept first, and the indices of covariates dropped as collinear.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub dropped: Vec<usize>,
}

/// Thin QR of the design `[1 | x]` by modified Gram-Schmidt with one
/// re-orthogonalization pass, skipping dependent columns.
pub fn least_squares(x: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: y.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidInput("least squares on zero rows".to_string()));
    }

    let column = |j: usize| -> Vec<f64> {
        if j == 0 {
            vec![1.0; n]
        } else {
            x.column(j - 1).iter().copied().collect()
        }
    };

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    // r[k] holds the k-th row of R restricted to kept columns.
    let mut r: Vec<Vec<f64>> = Vec::new();
    let mut dropped = Vec::new();

    for j in 0..=d {
        let original = column(j);
        let scale = original.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        let mut v = original;
        let mut coeffs = vec![0.0; basis.len()];
        for _ in 0..2 {
            for (k, q) in basis.iter().enumerate() {
                let proj: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                coeffs[k] += proj;
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= proj * qi;
                }
            }
        }
        let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm <= COLLINEAR_TOL * scale || basis.len() == n {
            if j == 0 {
                return Err(Error::Singular("intercept column".to_string()));
            }
            log::warn!("dropping collinear covariate column {}", j - 1);
            dropped.push(j - 1);
            continue;
        }
        for (k, c) in coeffs.into_iter().enumerate() {
            r[k].push(c);
        }
        let mut row = vec![0.0; kept.len()];
        row.push(norm);
        r.push(row);
        v.iter_mut().for_each(|t| *t /= norm);
        basis.push(v);
        kept.push(j);
    }

    let k = kept.len();
    let qty: Vec<f64> = basis
        .iter()
        .map(|q| q.iter().zip(y).map(|(a, b)| a * b).sum())
        .collect();
    let mut beta_kept = vec![0.0; k];
    for row in (0..k).rev() {
        let mut acc = qty[row];
        for col in row + 1..k {
            acc -= r[row][col] * beta_kept[col];
        }
        beta_kept[row] = acc / r[row][row];
    }

    let mut coefficients = vec![0.0; d + 1];
    for (slot, &j) in kept.iter().enumerate() {
        coefficients[j] = beta_kept[slot];
    }
    Ok(OlsFit {
        coefficients,
        dropped,
    })
}

pub fn predict_linear(coefficients: &[f64], x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() + 1 != coefficients.len() {
        return Err(Error::Dimension {
            expected: coefficients.len() - 1,
            got: x.ncols(),
        });
    }
    Ok((0..x.nrows())
        .map(|i| {
            coefficients[0]
                + x.row(i)
                    .iter()
                    .zip(&coefficients[1..])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect())
}
