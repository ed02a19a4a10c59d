//! Study representation shared by every estimator: the observed data, fold
//! splits for cross-fitting, and the common estimate record.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Normal quantile used for every two-sided 95% interval.
pub const Z_95: f64 = 1.96;

/// Bounded number of re-draws when a random split leaves an arm too small.
pub const MAX_SPLIT_RETRIES: u64 = 100;

/// Both potential outcomes for every unit, available only for simulated data.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    /// True assignment probabilities, when the generating process knows them.
    pub propensity: Option<Vec<f64>>,
}

impl Oracle {
    /// Sample mean of unit-level effects.
    pub fn sample_ate(&self) -> f64 {
        let n = self.y1.len() as f64;
        self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).sum::<f64>() / n
    }
}

/// An observational study: covariates, binary treatment and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// n x d covariate matrix.
    pub covariates: DMatrix<f64>,
    /// 0 = control, 1 = treated.
    pub treatment: Vec<u8>,
    pub outcome: Vec<f64>,
    pub covariate_names: Vec<String>,
    pub oracle: Option<Oracle>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub d: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every structural invariant of a dataset without touching it.
pub fn validate_dataset(ds: &Dataset) -> ValidationReport {
    let n = ds.treatment.len();
    let d = ds.covariates.ncols();
    let mut violations = Vec::new();

    if ds.covariates.nrows() != n {
        violations.push(format!(
            "covariate rows ({}) differ from treatment length ({n})",
            ds.covariates.nrows()
        ));
    }
    if ds.outcome.len() != n {
        violations.push(format!(
            "outcome length ({}) differs from treatment length ({n})",
            ds.outcome.len()
        ));
    }
    if ds.covariate_names.len() != d {
        violations.push(format!(
            "{} covariate names for {d} columns",
            ds.covariate_names.len()
        ));
    }
    if n < 2 {
        violations.push("fewer than 2 units".to_string());
    }
    if ds.treatment.iter().any(|&z| z > 1) {
        violations.push("treatment not binary".to_string());
    }
    let n_treated = ds.treatment.iter().filter(|&&z| z == 1).count();
    let n_control = ds.treatment.iter().filter(|&&z| z == 0).count();
    if n_treated == 0 {
        violations.push("no treated units".to_string());
    }
    if n_control == 0 {
        violations.push("no control units".to_string());
    }
    if ds.outcome.iter().any(|y| !y.is_finite()) {
        violations.push("outcome not finite".to_string());
    }
    if ds.covariates.iter().any(|x| !x.is_finite()) {
        violations.push("covariate not finite".to_string());
    }
    if let Some(oracle) = &ds.oracle {
        if oracle.y0.len() != n || oracle.y1.len() != n {
            violations.push("oracle length mismatch".to_string());
        } else {
            let consistent = ds.treatment.iter().enumerate().all(|(i, &z)| match z {
                1 => oracle.y1[i] == ds.outcome[i],
                0 => oracle.y0[i] == ds.outcome[i],
                _ => true,
            });
            if !consistent {
                violations.push("oracle inconsistent with observed outcome".to_string());
            }
        }
    }

    ValidationReport {
        n,
        d,
        n_treated,
        n_control,
        violations,
    }
}

impl Dataset {
    /// Build a dataset, rejecting anything `validate_dataset` would flag.
    pub fn new(
        covariates: DMatrix<f64>,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Dataset {
            covariates,
            treatment,
            outcome,
            covariate_names,
            oracle: None,
        };
        ds.checked()
    }

    pub fn with_oracle(mut self, oracle: Oracle) -> Result<Self> {
        self.oracle = Some(oracle);
        self.checked()
    }

    fn checked(self) -> Result<Self> {
        let report = validate_dataset(&self);
        if report.is_ok() {
            Ok(self)
        } else {
            Err(Error::InvalidInput(report.violations.join("; ")))
        }
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn d(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.treatment[i] == 1
    }

    /// Treatment indicator as a float.
    pub fn z(&self, i: usize) -> f64 {
        f64::from(self.treatment[i])
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&z| z == 1).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.is_treated(i)).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.is_treated(i)).collect()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.covariates.row(i).iter().copied().collect()
    }

    /// Covariate rows for the given units, in order.
    pub fn rows(&self, indices: &[usize]) -> DMatrix<f64> {
        self.covariates.select_rows(indices)
    }

    /// Units restricted to `indices`. Arm counts are not re-validated.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            covariates: self.rows(indices),
            treatment: indices.iter().map(|&i| self.treatment[i]).collect(),
            outcome: pick(&self.outcome),
            covariate_names: self.covariate_names.clone(),
            oracle: self.oracle.as_ref().map(|o| Oracle {
                y0: pick(&o.y0),
                y1: pick(&o.y1),
                propensity: o.propensity.as_ref().map(|p| pick(p)),
            }),
        }
    }

    /// Same units with only the listed covariate columns.
    pub fn select_covariates(&self, columns: &[usize]) -> Dataset {
        Dataset {
            covariates: self.covariates.select_columns(columns),
            covariate_names: columns
                .iter()
                .map(|&j| self.covariate_names[j].clone())
                .collect(),
            ..self.clone()
        }
    }

    /// Same units and covariates with a replacement outcome. Drops the oracle
    /// since it no longer describes the new outcome.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Dataset> {
        if outcome.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: outcome.len(),
            });
        }
        Ok(Dataset {
            outcome,
            oracle: None,
            ..self.clone()
        })
    }

    /// Load from CSV with a header row. Covariates default to every column
    /// that is not the treatment, outcome or an oracle column.
    pub fn read_csv(path: impl AsRef<Path>, roles: &CsvRoles) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path.as_ref())?;
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let t_col = find(&roles.treatment)?;
        let y_col = find(&roles.outcome)?;
        let oracle_cols = match &roles.oracle {
            Some((y0, y1)) => Some((find(y0)?, find(y1)?)),
            None => None,
        };
        let cov_cols: Vec<usize> = match &roles.covariates {
            Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
            None => (0..headers.len())
                .filter(|&j| {
                    j != t_col
                        && j != y_col
                        && oracle_cols.is_none_or(|(a, b)| j != a && j != b)
                })
                .collect(),
        };

        let parse = |record: &csv::StringRecord, j: usize| -> Result<f64> {
            let raw = record.get(j).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::Parse {
                column: headers[j].clone(),
                value: raw.to_string(),
            })
        };

        let mut treatment = Vec::new();
        let mut outcome = Vec::new();
        let mut values = Vec::new();
        let mut y0 = Vec::new();
        let mut y1 = Vec::new();
        for record in reader.records() {
            let record = record?;
            let z = parse(&record, t_col)?;
            if z != 0.0 && z != 1.0 {
                return Err(Error::InvalidInput(format!("treatment value {z} not binary")));
            }
            treatment.push(z as u8);
            outcome.push(parse(&record, y_col)?);
            for &j in &cov_cols {
                values.push(parse(&record, j)?);
            }
            if let Some((a, b)) = oracle_cols {
                y0.push(parse(&record, a)?);
                y1.push(parse(&record, b)?);
            }
        }
        let n = treatment.len();
        let covariates = DMatrix::from_row_slice(n, cov_cols.len(), &values);
        let names = cov_cols.iter().map(|&j| headers[j].clone()).collect();
        let ds = Dataset::new(covariates, treatment, outcome, names)?;
        match oracle_cols {
            Some(_) => ds.with_oracle(Oracle {
                y0,
                y1,
                propensity: None,
            }),
            None => Ok(ds),
        }
    }

    /// Write as CSV: treatment, outcome, covariates, then `y0,y1` if an
    /// oracle is present.
    pub fn write_csv(&self, path: impl AsRef<Path>, roles: &CsvRoles) -> Result<()> {
        let mut writer = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec![roles.treatment.clone(), roles.outcome.clone()];
        header.extend(self.covariate_names.iter().cloned());
        let oracle_names = roles
            .oracle
            .clone()
            .unwrap_or_else(|| ("y0".to_string(), "y1".to_string()));
        if self.oracle.is_some() {
            header.push(oracle_names.0);
            header.push(oracle_names.1);
        }
        writer.write_record(&header)?;
        for i in 0..self.n() {
            let mut record = vec![self.treatment[i].to_string(), self.outcome[i].to_string()];
            record.extend(self.covariates.row(i).iter().map(f64::to_string));
            if let Some(o) = &self.oracle {
                record.push(o.y0[i].to_string());
                record.push(o.y1[i].to_string());
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Column roles for dataset CSV files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvRoles {
    pub treatment: String,
    pub outcome: String,
    pub covariates: Option<Vec<String>>,
    pub oracle: Option<(String, String)>,
}

impl Default for CsvRoles {
    fn default() -> Self {
        CsvRoles {
            treatment: "treatment".to_string(),
            outcome: "outcome".to_string(),
            covariates: None,
            oracle: None,
        }
    }
}

/// Two disjoint halves of the units used for cross-fitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold1: Vec<usize>,
    pub fold2: Vec<usize>,
    pub seed: u64,
}

impl FoldSplit {
    pub fn folds(&self) -> [&[usize]; 2] {
        [&self.fold1, &self.fold2]
    }

    pub fn swapped(&self) -> FoldSplit {
        FoldSplit {
            fold1: self.fold2.clone(),
            fold2: self.fold1.clone(),
            seed: self.seed,
        }
    }
}

/// Random halves of sizes ceil(n/2) and floor(n/2) with at least one
/// treated and one control unit in each.
pub fn split_random(ds: &Dataset, seed: u64) -> Result<FoldSplit> {
    split_random_min(ds, seed, 1)
}

/// As [`split_random`] but requiring `min_per_arm` units of each arm per fold.
/// Re-draws up to [`MAX_SPLIT_RETRIES`] times.
pub fn split_random_min(ds: &Dataset, seed: u64, min_per_arm: usize) -> Result<FoldSplit> {
    let n = ds.n();
    if n < 4 {
        return Err(Error::InvalidInput(format!("cannot split {n} units into two folds")));
    }
    let half = n.div_ceil(2);
    let mut order: Vec<usize> = (0..n).collect();
    for attempt in 0..MAX_SPLIT_RETRIES {
        let mut rng = rng_for(seed, attempt);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut fold1 = order[..half].to_vec();
        let mut fold2 = order[half..].to_vec();
        let enough = |fold: &[usize]| {
            let t = fold.iter().filter(|&&i| ds.is_treated(i)).count();
            t >= min_per_arm && fold.len() - t >= min_per_arm
        };
        if enough(&fold1) && enough(&fold2) {
            fold1.sort_unstable();
            fold2.sort_unstable();
            return Ok(FoldSplit { fold1, fold2, seed });
        }
    }
    Err(Error::EmptyArm(format!(
        "no split with {min_per_arm} treated and control units per fold after {MAX_SPLIT_RETRIES} draws"
    )))
}

/// Point estimate with variance, normal-approximation interval and
/// estimator-specific diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub method: String,
    pub tau_hat: f64,
    pub var_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimateResult {
    pub fn normal(
        method: impl Into<String>,
        tau_hat: f64,
        var_hat: f64,
        n_treated: usize,
        n_control: usize,
    ) -> Self {
        // NaN passes through: it marks an undefined variance.
        let var_hat = if var_hat < 0.0 { 0.0 } else { var_hat };
        let half_width = Z_95 * var_hat.sqrt();
        EstimateResult {
            method: method.into(),
            tau_hat,
            var_hat,
            ci_low: tau_hat - half_width,
            ci_high: tau_hat + half_width,
            n_treated,
            n_control,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn with_diagnostic(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn tiny(z: &[u8], y: &[f64]) -> Dataset {
        let n = z.len();
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        Dataset {
            covariates: x,
            treatment: z.to_vec(),
            outcome: y.to_vec(),
            covariate_names: vec!["x".to_string()],
            oracle: None,
        }
    }
}
