//! Rank-based (robust) Mahalanobis distances between treated and control units.

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::stats::sample_sd;

/// Treated-by-control distances. `+inf` marks a forbidden pair.
///
/// Row `r` is unit `treated_index[r]`, column `c` is unit `control_index[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    entries: Vec<f64>,
    pub treated_index: Vec<usize>,
    pub control_index: Vec<usize>,
}

impl DistanceMatrix {
    /// Matrix from explicit rows, with rows and columns numbered from zero.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n0 = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n0), "ragged distance rows");
        DistanceMatrix {
            entries: rows.iter().flatten().copied().collect(),
            treated_index: (0..rows.len()).collect(),
            control_index: (0..n0).collect(),
        }
    }

    pub fn n_treated(&self) -> usize {
        self.treated_index.len()
    }

    pub fn n_control(&self) -> usize {
        self.control_index.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.n_control() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let n0 = self.n_control();
        &self.entries[r * n0..(r + 1) * n0]
    }

    fn set(&mut self, r: usize, c: usize, value: f64) {
        let n0 = self.n_control();
        self.entries[r * n0 + c] = value;
    }
}

/// Ranks 1..n with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn rank_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut ranks = DMatrix::zeros(n, d);
    for j in 0..d {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        for (i, r) in average_ranks(&col).into_iter().enumerate() {
            ranks[(i, j)] = r;
        }
    }
    ranks
}

fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let means = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    centered.tr_mul(&centered) / (n as f64 - 1.0)
}

/// Whitened rank vectors: rows `u_i` with `|u_i - u_k|^2` equal to the
/// Mahalanobis distance between the rank vectors of units `i` and `k`.
fn whitened_ranks(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ranks = rank_matrix(x);
    let cov = sample_covariance(&ranks);
    let d = cov.nrows();
    let chol = cov.clone().cholesky().or_else(|| {
        let scale = (cov.trace() / d as f64).max(1.0);
        let ridged = &cov + DMatrix::identity(d, d) * (1e-6 * scale);
        log::warn!("rank covariance singular; adding ridge {:.3e}", 1e-6 * scale);
        ridged.cholesky()
    });
    let chol = chol.ok_or_else(|| Error::Singular("rank covariance after ridge".to_string()))?;
    // Solve L u^T = r^T for every unit at once.
    let white_t = chol
        .l()
        .solve_lower_triangular(&ranks.transpose())
        .ok_or_else(|| Error::Singular("rank covariance factor".to_string()))?;
    Ok(white_t.transpose())
}

/// Mahalanobis distance on column-wise average ranks, using the sample
/// covariance of the ranks over all units.
pub fn robust_mahalanobis(ds: &Dataset) -> Result<DistanceMatrix> {
    if ds.d() == 0 {
        return Err(Error::InvalidInput("matching needs at least one covariate".to_string()));
    }
    let white = whitened_ranks(&ds.covariates)?;
    let treated = ds.treated_indices();
    let control = ds.control_indices();
    let d = white.ncols();
    let mut entries = Vec::with_capacity(treated.len() * control.len());
    for &t in &treated {
        for &c in &control {
            let mut acc = 0.0;
            for j in 0..d {
                let diff = white[(t, j)] - white[(c, j)];
                acc += diff * diff;
            }
            entries.push(acc);
        }
    }
    Ok(DistanceMatrix {
        entries,
        treated_index: treated,
        control_index: control,
    })
}

/// Forbid pairs whose score gap exceeds `caliper` times the sample standard
/// deviation of `e_hat` over all units. `e_hat` is indexed by unit.
pub fn caliper_filter(dist: &DistanceMatrix, e_hat: &[f64], caliper: f64) -> Result<DistanceMatrix> {
    if !(caliper > 0.0) {
        return Err(Error::InvalidInput(format!("caliper must be positive, got {caliper}")));
    }
    let needed = dist
        .treated_index
        .iter()
        .chain(&dist.control_index)
        .max()
        .map_or(0, |m| m + 1);
    if e_hat.len() < needed {
        return Err(Error::Dimension {
            expected: needed,
            got: e_hat.len(),
        });
    }
    let bound = caliper * sample_sd(e_hat);
    let mut out = dist.clone();
    for (r, &t) in dist.treated_index.iter().enumerate() {
        for (c, &k) in dist.control_index.iter().enumerate() {
            if (e_hat[t] - e_hat[k]).abs() > bound {
                out.set(r, c, f64::INFINITY);
            }
        }
    }
    Ok(out)
}
