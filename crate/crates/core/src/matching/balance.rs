//! Standardized mean differences before and after matching.

use std::io::Write;

use serde::Serialize;

use super::MatchSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::stats::{mean, pooled_sd};

pub const PROPENSITY_ROW: &str = "propensity_score";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub pre: f64,
    pub post: Option<f64>,
    /// Zero pooled spread with unequal means; the difference is NaN.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
}

/// (mean_t - mean_c) / sd, with the zero-spread convention.
/// Returns the value and whether it is degenerate.
pub fn standardized_difference(treated: &[f64], control: &[f64], sd: f64) -> (f64, bool) {
    let gap = mean(treated) - mean(control);
    if sd > 0.0 {
        (gap / sd, false)
    } else if gap == 0.0 {
        (0.0, false)
    } else {
        (f64::NAN, true)
    }
}

/// Per-covariate standardized differences, plus the propensity score as a
/// pseudo-covariate. Post-match differences use the matched units and the
/// full-sample pooled sd, so pre and post share a scale.
pub fn balance_table(ds: &Dataset, matches: Option<&MatchSet>, e_hat: &[f64]) -> Result<BalanceReport> {
    if e_hat.len() != ds.n() {
        return Err(Error::Dimension {
            expected: ds.n(),
            got: e_hat.len(),
        });
    }
    let treated = ds.treated_indices();
    let control = ds.control_indices();
    let (matched_t, matched_c): (Vec<usize>, Vec<usize>) = matches
        .map(|m| m.pairs.iter().copied().unzip())
        .unwrap_or_default();

    let mut columns: Vec<(String, Vec<f64>)> = (0..ds.d())
        .map(|j| (ds.covariate_names[j].clone(), ds.covariates.column(j).iter().copied().collect()))
        .collect();
    columns.push((PROPENSITY_ROW.to_string(), e_hat.to_vec()));

    let pick = |values: &[f64], idx: &[usize]| idx.iter().map(|&i| values[i]).collect::<Vec<_>>();
    let rows = columns
        .into_iter()
        .map(|(name, values)| {
            let t = pick(&values, &treated);
            let c = pick(&values, &control);
            let sd = pooled_sd(&t, &c);
            let (pre, mut degenerate) = standardized_difference(&t, &c, sd);
            let post = (matches.is_some() && !matched_t.is_empty()).then(|| {
                let (v, bad) =
                    standardized_difference(&pick(&values, &matched_t), &pick(&values, &matched_c), sd);
                degenerate |= bad;
                v
            });
            BalanceRow {
                covariate: name,
                pre,
                post,
                degenerate,
            }
        })
        .collect();
    Ok(BalanceReport { rows })
}

impl BalanceReport {
    pub fn max_abs_pre(&self) -> f64 {
        self.rows.iter().map(|r| r.pre.abs()).filter(|v| !v.is_nan()).fold(0.0, f64::max)
    }

    pub fn max_abs_post(&self) -> Option<f64> {
        let post: Vec<f64> = self.rows.iter().filter_map(|r| r.post).filter(|v| !v.is_nan()).collect();
        (!post.is_empty()).then(|| post.iter().map(|v| v.abs()).fold(0.0, f64::max))
    }

    /// CSV with header `covariate,pre,post`; post is empty when unmatched.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["covariate", "pre", "post"])?;
        for row in &self.rows {
            writer.write_record([
                row.covariate.clone(),
                format!("{:.6}", row.pre),
                row.post.map(|v| format!("{v:.6}")).unwrap_or_default(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::tiny;
    use nalgebra::DMatrix;

    fn match_set(pairs: Vec<(usize, usize)>) -> MatchSet {
        MatchSet {
            pairs,
            dropped_treated: vec![],
            caliper: f64::INFINITY,
            mean_score_gap: 0.0,
            total_distance: 0.0,
        }
    }

    #[test]
    fn identical_arms_are_balanced() {
        let mut ds = tiny(&[1, 0, 1, 0], &[0.0; 4]);
        ds.covariates = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 3.0, 3.0]);
        let report = balance_table(&ds, None, &[0.5; 4]).unwrap();
        assert!(report.rows.iter().all(|r| r.pre == 0.0 && r.post.is_none()));
    }

    #[test]
    fn hand_computed_difference() {
        // treated mean 1, control mean 0, pooled sd 1
        assert_eq!(standardized_difference(&[0.5, 1.5], &[-0.5, 0.5], 1.0), (1.0, false));
        // treated {0.5, 1.5}, control {-0.5, 0.5}: each variance 0.5
        let mut ds = tiny(&[1, 1, 0, 0], &[0.0; 4]);
        ds.covariates = DMatrix::from_column_slice(4, 1, &[0.5, 1.5, -0.5, 0.5]);
        let report = balance_table(&ds, None, &[0.5; 4]).unwrap();
        assert!((report.rows[0].pre - 1.0 / 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exact_matches_are_balanced_after_matching() {
        let mut ds = tiny(&[1, 0, 1, 0, 0], &[0.0; 5]);
        ds.covariates = DMatrix::from_column_slice(5, 1, &[2.0, 2.0, 5.0, 5.0, -9.0]);
        let e = [0.6, 0.6, 0.3, 0.3, 0.1];
        let report = balance_table(&ds, Some(&match_set(vec![(0, 1), (2, 3)])), &e).unwrap();
        assert!(report.rows[0].pre != 0.0);
        assert!(report.rows.iter().all(|r| r.post == Some(0.0)));
        assert_eq!(report.max_abs_post(), Some(0.0));
    }

    #[test]
    fn zero_spread_conventions() {
        assert_eq!(standardized_difference(&[1.0, 1.0], &[1.0], 0.0), (0.0, false));
        let (v, bad) = standardized_difference(&[1.0, 1.0], &[2.0], 0.0);
        assert!(v.is_nan() && bad);
    }

    #[test]
    fn csv_export() {
        let ds = tiny(&[1, 0, 1, 0], &[0.0; 4]);
        let report = balance_table(&ds, Some(&match_set(vec![(0, 1)])), &[0.5, 0.4, 0.6, 0.5]).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("covariate,pre,post\nx,"));
        assert!(text.contains("propensity_score,"));
    }
}
