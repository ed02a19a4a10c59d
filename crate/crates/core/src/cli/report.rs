//! Estimate tables in CSV and plain text. Formatting is fixed-precision so
//! identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::io::Write;

use crate::data::EstimateResult;
use crate::error::Result;
use crate::simulation::SimulationSummary;

use super::config::SimulationChecks;

/// One estimator's outcome; failures are kept as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub result: std::result::Result<EstimateResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTable {
    pub title: String,
    pub rows: Vec<ReportRow>,
}

const CSV_HEADER: [&str; 9] = [
    "estimator",
    "ate",
    "var_hat",
    "ci_low",
    "ci_high",
    "n_treated",
    "n_control",
    "diagnostics",
    "error",
];

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn csv_fields(row: &ReportRow) -> Vec<String> {
    match &row.result {
        Ok(r) => {
            let diagnostics = r
                .diagnostics
                .iter()
                .map(|(k, v)| format!("{k}={v:.6}"))
                .collect::<Vec<_>>()
                .join(";");
            vec![
                row.method.clone(),
                num(r.tau_hat),
                num(r.var_hat),
                num(r.ci_low),
                num(r.ci_high),
                r.n_treated.to_string(),
                r.n_control.to_string(),
                diagnostics,
                String::new(),
            ]
        }
        Err(e) => {
            let mut fields = vec![row.method.clone()];
            fields.extend(std::iter::repeat_n(String::new(), 7));
            fields.push(e.clone());
            fields
        }
    }
}

impl EstimateTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for row in &self.rows {
            w.write_record(csv_fields(row))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn render_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(9);
        let mut s = String::new();
        writeln!(s, "{}", self.title).unwrap();
        writeln!(s, "{:<width$}  {:>10}  {:>10}  {:>23}", "Estimator", "ATE", "V-hat", "95% CI").unwrap();
        for row in &self.rows {
            match &row.result {
                Ok(r) => {
                    let ci = format!("{:.4} - {:.4}", r.ci_low, r.ci_high);
                    writeln!(s, "{:<width$}  {:>10.4}  {:>10.4}  {ci:>23}", row.method, r.tau_hat, r.var_hat)
                        .unwrap()
                }
                Err(e) => writeln!(s, "{:<width$}  error: {e}", row.method).unwrap(),
            }
        }
        s
    }
}

/// Estimator tables for each weight profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub profiles: Vec<String>,
    pub tables: Vec<EstimateTable>,
}

/// Signs of every successful estimate across the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignAgreement {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
    pub ci_above_zero: usize,
    pub ci_below_zero: usize,
    pub failed: usize,
}

impl SignAgreement {
    pub fn total(&self) -> usize {
        self.positive + self.negative + self.zero
    }

    pub fn unanimous(&self) -> bool {
        self.total() > 0 && (self.positive == self.total() || self.negative == self.total())
    }
}

impl SensitivityReport {
    pub fn sign_agreement(&self) -> SignAgreement {
        let mut s = SignAgreement {
            positive: 0,
            negative: 0,
            zero: 0,
            ci_above_zero: 0,
            ci_below_zero: 0,
            failed: 0,
        };
        for row in self.tables.iter().flat_map(|t| &t.rows) {
            match &row.result {
                Ok(r) => {
                    if r.tau_hat > 0.0 {
                        s.positive += 1;
                    } else if r.tau_hat < 0.0 {
                        s.negative += 1;
                    } else {
                        s.zero += 1;
                    }
                    s.ci_above_zero += usize::from(r.ci_low > 0.0);
                    s.ci_below_zero += usize::from(r.ci_high < 0.0);
                }
                Err(_) => s.failed += 1,
            }
        }
        s
    }

    /// One CSV: the estimate columns with a leading `profile` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(std::iter::once("profile").chain(CSV_HEADER))?;
        for (profile, table) in self.profiles.iter().zip(&self.tables) {
            for row in &table.rows {
                w.write_record(std::iter::once(profile.clone()).chain(csv_fields(row)))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        for table in &self.tables {
            s.push_str(&table.render_text());
            s.push('\n');
        }
        let a = self.sign_agreement();
        writeln!(s, "Sign agreement across {} estimates", a.total()).unwrap();
        writeln!(s, "  positive: {}  negative: {}  zero: {}", a.positive, a.negative, a.zero).unwrap();
        writeln!(s, "  95% CI above zero: {}  below zero: {}", a.ci_above_zero, a.ci_below_zero).unwrap();
        if a.failed > 0 {
            writeln!(s, "  failed: {}", a.failed).unwrap();
        }
        writeln!(s, "  unanimous: {}", if a.unanimous() { "yes" } else { "no" }).unwrap();
        s
    }
}

/// Pass/fail of one summary row against the configured thresholds.
pub fn check_row(row: &crate::simulation::EstimatorSummary, checks: &SimulationChecks) -> bool {
    row.mean_bias.abs() < checks.max_abs_bias
        && row.coverage >= checks.coverage[0]
        && row.coverage <= checks.coverage[1]
}

pub fn render_simulation(summary: &SimulationSummary, checks: Option<&SimulationChecks>) -> String {
    let width = summary.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(9);
    let mut s = String::new();
    writeln!(s, "Simulation: {} replications, tau = {}", summary.replications, summary.tau).unwrap();
    writeln!(
        s,
        "{:<width$}  {:>8}  {:>10}  {:>10}  {:>10}  {:>8}",
        "Estimator", "failures", "bias", "emp. var", "mean V-hat", "coverage"
    )
    .unwrap();
    for r in &summary.rows {
        write!(
            s,
            "{:<width$}  {:>8}  {:>10.4}  {:>10.5}  {:>10.5}  {:>8.3}",
            r.method, r.failures, r.mean_bias, r.empirical_var, r.mean_var_hat, r.coverage
        )
        .unwrap();
        if let Some(c) = checks {
            s.push_str(if check_row(r, c) { "  PASS" } else { "  FAIL" });
        }
        s.push('\n');
    }
    if let Some(c) = checks {
        writeln!(
            s,
            "checks: |bias| < {}, coverage in [{}, {}]",
            c.max_abs_bias, c.coverage[0], c.coverage[1]
        )
        .unwrap();
    }
    s
}
