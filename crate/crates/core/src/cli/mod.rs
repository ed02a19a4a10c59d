//! Batch commands behind the `causal-ate` binary. Each runner returns its
//! report; [`execute`] writes the files and returns the text summary.

pub mod config;
pub mod report;

use std::path::PathBuf;

use crate::data::{validate_dataset, CsvRoles, Dataset};
use crate::error::{Error, Result};
use crate::ingest::{apply_column_map, build_cohort, Cohort, IngestSpec, RawTable, WeightProfile};
use crate::lins::{crossfit_lins, METHOD as LINS_METHOD};
use crate::matching::{balance_table, estimate_matching, match_with_caliper, matching_label, BalanceReport, MatchSet};
use crate::models::{fit_logistic, predict_propensity, ForestConfig, LogisticConfig, ModelKind};
use crate::seed::derive_seed;
use crate::simulation::{generate_dgp, run_replications, DgpConfig, SimEstimator, SimulationSummary};
use crate::weighting::{estimate_aipw, estimate_hajek, estimate_ht};

pub use config::RunConfig;
pub use report::{EstimateTable, ReportRow, SensitivityReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Estimate,
    Sensitivity,
    Simulate,
    Balance,
}

/// Logistic propensity scores on every covariate of the study.
pub fn fit_scores(ds: &Dataset) -> Result<Vec<f64>> {
    let model = fit_logistic(&ds.covariates, &ds.treatment, &LogisticConfig::default())?;
    predict_propensity(&model, &ds.covariates)
}

fn ingest_survey(cfg: &RunConfig) -> Result<(Cohort, IngestSpec)> {
    let source = cfg
        .survey
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs a [survey] section".to_string()))?;
    let mut spec = IngestSpec::load(&source.spec)?;
    if let Some(profile) = &source.profile {
        spec.profile = profile.clone();
        spec.weights = None;
        spec.validate()?;
    }
    let raw = RawTable::read_csv(&source.path)?;
    let table = apply_column_map(&raw, &spec.column_map)?;
    Ok((build_cohort(&table, &spec)?, spec))
}

fn checked(ds: Dataset) -> Result<Dataset> {
    let report = validate_dataset(&ds);
    if report.is_ok() {
        Ok(ds)
    } else {
        Err(Error::InvalidInput(report.violations.join("; ")))
    }
}

/// The study named by `[data]` or `[survey]`, validated.
pub fn load_study(cfg: &RunConfig) -> Result<Dataset> {
    match (&cfg.data, &cfg.survey) {
        (Some(table), _) => checked(Dataset::read_csv(&table.path, &table.roles())?),
        (None, Some(_)) => checked(ingest_survey(cfg)?.0.dataset),
        (None, None) => Err(Error::Config("no [data] or [survey] section".to_string())),
    }
}

fn outcome_model(cfg: &RunConfig) -> ModelKind {
    match cfg.estimators.outcome_model {
        ModelKind::Forest(f) => ModelKind::Forest(ForestConfig {
            seed: derive_seed(cfg.seed, 4),
            ..f
        }),
        other => other,
    }
}

/// Every enabled estimator on one study, in report order: Lin's, HT, Hajek,
/// AIPW, then one matching row per caliper.
pub fn estimate_table(ds: &Dataset, cfg: &RunConfig, title: &str) -> Result<EstimateTable> {
    let toggles = &cfg.estimators;
    if !toggles.any_enabled() {
        return Err(Error::Config("no estimator enabled".to_string()));
    }
    let model = outcome_model(cfg);
    let weighting = cfg
        .weighting
        .to_config(model, derive_seed(cfg.seed, 2), derive_seed(cfg.seed, 3))?;
    let needs_scores = toggles.horvitz_thompson || toggles.hajek || toggles.aipw || toggles.matching;
    let scores = if needs_scores {
        fit_scores(ds).map_err(|e| format!("propensity model: {e}"))
    } else {
        Err(String::new())
    };
    let with_scores = |f: &dyn Fn(&[f64]) -> Result<crate::data::EstimateResult>| match &scores {
        Ok(e) => f(e).map_err(|err| err.to_string()),
        Err(msg) => Err(msg.clone()),
    };

    let mut rows = Vec::new();
    if toggles.lins {
        let result = crossfit_lins(ds, &model, derive_seed(cfg.seed, 1))
            .map(|r| r.estimate)
            .map_err(|e| e.to_string());
        rows.push(ReportRow {
            method: LINS_METHOD.to_string(),
            result,
        });
    }
    if toggles.horvitz_thompson {
        rows.push(ReportRow {
            method: "Horvitz-Thompson".to_string(),
            result: with_scores(&|e| estimate_ht(ds, e, &weighting)),
        });
    }
    if toggles.hajek {
        rows.push(ReportRow {
            method: "Hajek".to_string(),
            result: with_scores(&|e| estimate_hajek(ds, e, &weighting)),
        });
    }
    if toggles.aipw {
        rows.push(ReportRow {
            method: "AIPW".to_string(),
            result: with_scores(&|e| estimate_aipw(ds, e, &weighting)),
        });
    }
    if toggles.matching {
        for &caliper in &toggles.calipers {
            rows.push(ReportRow {
                method: matching_label(caliper),
                result: with_scores(&|e| Ok(estimate_matching(ds, e, caliper)?.0)),
            });
        }
    }
    Ok(EstimateTable {
        title: title.to_string(),
        rows,
    })
}

pub fn run_estimate(cfg: &RunConfig) -> Result<EstimateTable> {
    let ds = load_study(cfg)?;
    estimate_table(&ds, cfg, "Average treatment effects")
}

/// One estimator table per weight profile, all sharing the same seeds.
pub fn run_sensitivity(cfg: &RunConfig) -> Result<SensitivityReport> {
    let (cohort, _) = ingest_survey(cfg)?;
    let mut tables = Vec::new();
    for name in &cfg.sensitivity.profiles {
        let profile = WeightProfile::builtin(name)?;
        let ds = checked(cohort.with_profile(&profile)?)?;
        tables.push(estimate_table(&ds, cfg, &format!("Average treatment effects, {name} profile"))?);
    }
    Ok(SensitivityReport {
        profiles: cfg.sensitivity.profiles.clone(),
        tables,
    })
}

pub fn run_simulate(cfg: &RunConfig) -> Result<SimulationSummary> {
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("simulate needs a [simulate] section".to_string()))?;
    let estimators = sim.estimators.clone().unwrap_or_else(SimEstimator::default_set);
    let weighting = cfg.weighting.to_config(outcome_model(cfg), 0, 0)?;
    run_replications(&sim.dgp, &estimators, sim.replications, cfg.seed, &weighting)
}

pub fn run_ingest(cfg: &RunConfig) -> Result<Cohort> {
    Ok(ingest_survey(cfg)?.0)
}

/// Pre- and post-match balance for each caliper.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceGrid {
    pub calipers: Vec<f64>,
    pub matches: Vec<MatchSet>,
    pub reports: Vec<BalanceReport>,
}

pub fn run_balance(cfg: &RunConfig) -> Result<BalanceGrid> {
    let ds = load_study(cfg)?;
    let e = fit_scores(&ds)?;
    let calipers = cfg.estimators.calipers.clone();
    let mut matches = Vec::new();
    let mut reports = Vec::new();
    for &c in &calipers {
        let m = match_with_caliper(&ds, &e, c)?;
        reports.push(balance_table(&ds, Some(&m), &e)?);
        matches.push(m);
    }
    if calipers.is_empty() {
        reports.push(balance_table(&ds, None, &e)?);
    }
    Ok(BalanceGrid {
        calipers,
        matches,
        reports,
    })
}

impl BalanceGrid {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["covariate".to_string(), "pre".to_string()];
        header.extend(self.calipers.iter().map(|c| format!("post_caliper_{c}")));
        w.write_record(&header)?;
        let first = &self.reports[0];
        for (i, row) in first.rows.iter().enumerate() {
            let mut record = vec![row.covariate.clone(), format!("{:.6}", row.pre)];
            for report in self.reports.iter().take(self.calipers.len()) {
                record.push(report.rows[i].post.map(|v| format!("{v:.6}")).unwrap_or_default());
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn render_text(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        writeln!(s, "Covariate balance (standardized mean differences)").unwrap();
        writeln!(s, "pre-match max |SMD|: {:.4}", self.reports[0].max_abs_pre()).unwrap();
        for ((c, m), r) in self.calipers.iter().zip(&self.matches).zip(&self.reports) {
            writeln!(
                s,
                "caliper {c}: {} pairs, {} treated dropped, mean score gap {:.5}, post-match max |SMD| {}",
                m.pairs.len(),
                m.dropped_treated.len(),
                m.mean_score_gap,
                r.max_abs_post().map_or("n/a".to_string(), |v| format!("{v:.4}"))
            )
            .unwrap();
        }
        s
    }
}

fn cohort_summary(cohort: &Cohort, spec_profile: &str) -> String {
    let ds = &cohort.dataset;
    let arm_mean = |treated: bool| {
        let idx = if treated { ds.treated_indices() } else { ds.control_indices() };
        crate::stats::mean(&idx.iter().map(|&i| ds.outcome[i]).collect::<Vec<_>>())
    };
    format!(
        "Cohort: {} units ({} treated, {} control), {} covariates\n\
         excluded by treatment/control rules: {}\n\
         dropped for missing values: {}\n\
         outcome profile: {spec_profile}\n\
         mean outcome: treated {:.4}, control {:.4}\n",
        ds.n(),
        ds.n_treated(),
        ds.n_control(),
        ds.d(),
        cohort.n_excluded_rule,
        cohort.n_dropped_missing,
        arm_mean(true),
        arm_mean(false),
    )
}

fn write_text(path: &PathBuf, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Run a command and write its CSV and text reports into the output
/// directory. Returns the text report and the files written.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<(String, Vec<PathBuf>)> {
    std::fs::create_dir_all(&cfg.output.dir)?;
    let csv_path;
    let txt_path;
    let mut extra = Vec::new();
    let text = match command {
        Command::Estimate => {
            let table = run_estimate(cfg)?;
            csv_path = cfg.output_path("estimate.csv");
            txt_path = cfg.output_path("estimate.txt");
            table.write_csv(std::fs::File::create(&csv_path)?)?;
            table.render_text()
        }
        Command::Sensitivity => {
            let report = run_sensitivity(cfg)?;
            csv_path = cfg.output_path("sensitivity.csv");
            txt_path = cfg.output_path("sensitivity.txt");
            report.write_csv(std::fs::File::create(&csv_path)?)?;
            report.render_text()
        }
        Command::Simulate => {
            let summary = run_simulate(cfg)?;
            csv_path = cfg.output_path("simulation.csv");
            txt_path = cfg.output_path("simulation.txt");
            summary.write_csv(std::fs::File::create(&csv_path)?)?;
            let sim = cfg.simulate.as_ref().expect("checked by run_simulate");
            if sim.sample_dataset {
                let path = cfg.output_path("simulated_study.csv");
                let dgp = DgpConfig {
                    seed: derive_seed(cfg.seed, 0),
                    ..sim.dgp.clone()
                };
                generate_dgp(&dgp)?.write_csv(&path, &CsvRoles::default())?;
                extra.push(path);
            }
            report::render_simulation(&summary, sim.checks.as_ref())
        }
        Command::Ingest => {
            let (cohort, spec) = ingest_survey(cfg)?;
            csv_path = cfg.output_path("cohort.csv");
            txt_path = cfg.output_path("cohort.txt");
            cohort.dataset.write_csv(&csv_path, &CsvRoles::default())?;
            cohort_summary(&cohort, &spec.profile)
        }
        Command::Balance => {
            let grid = run_balance(cfg)?;
            csv_path = cfg.output_path("balance.csv");
            txt_path = cfg.output_path("balance.txt");
            grid.write_csv(std::fs::File::create(&csv_path)?)?;
            grid.render_text()
        }
    };
    write_text(&txt_path, &text)?;
    let mut files = vec![csv_path, txt_path];
    files.extend(extra);
    Ok((text, files))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::Misspecification;
    use std::path::Path;

    fn study(dir: &Path) -> PathBuf {
        let ds = generate_dgp(&DgpConfig {
            n: 300,
            d: 3,
            beta: vec![0.4, -0.3, 0.2],
            gamma: vec![1.0, 0.5, -0.5],
            alpha: 1.0,
            tau: 2.0,
            noise_sd: 1.0,
            misspec: Misspecification::None,
            hidden_covariate: 0,
            seed: 5,
        })
        .unwrap();
        let path = dir.join("study.csv");
        let plain = Dataset { oracle: None, ..ds };
        plain.write_csv(&path, &CsvRoles::default()).unwrap();
        path
    }

    fn config(dir: &Path, extra: &str) -> RunConfig {
        let text = format!("seed = 3\n[output]\ndir = \"out\"\n[data]\npath = \"study.csv\"\n{extra}");
        RunConfig::from_toml_str(&text, dir).unwrap()
    }

    #[test]
    fn default_estimate_has_seven_rows_in_order() {
        let dir = tempfile::tempdir().unwrap();
        study(dir.path());
        let table = run_estimate(&config(dir.path(), "")).unwrap();
        let methods: Vec<&str> = table.rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(
            methods,
            [
                "Generalized Lin's",
                "Horvitz-Thompson",
                "Hajek",
                "AIPW",
                "Matching (caliper=0.1)",
                "Matching (caliper=0.2)",
                "Matching (caliper=0.05)"
            ]
        );
        assert!(table.rows.iter().all(|r| r.result.is_ok()));
    }

    #[test]
    fn single_estimator_single_row() {
        let dir = tempfile::tempdir().unwrap();
        study(dir.path());
        let extra = "[estimators]\nlins = false\nhorvitz_thompson = false\naipw = false\nmatching = false\n";
        let table = run_estimate(&config(dir.path(), extra)).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].method, "Hajek");

        let none = "[estimators]\nlins = false\nhorvitz_thompson = false\nhajek = false\naipw = false\nmatching = false\n";
        assert!(run_estimate(&config(dir.path(), none)).is_err());
    }

    #[test]
    fn estimator_failure_becomes_error_row() {
        let dir = tempfile::tempdir().unwrap();
        study(dir.path());
        // no control lies within a caliper this small, so matching has no pairs
        let table = run_estimate(&config(dir.path(), "[estimators]\ncalipers = [0.1, 1e-12]\n")).unwrap();
        assert_eq!(table.rows.len(), 6);
        assert!(table.rows[..5].iter().all(|r| r.result.is_ok()));
        assert_eq!(table.rows[5].method, "Matching (caliper=0.000000000001)");
        assert!(table.rows[5].result.as_ref().unwrap_err().contains("no matched pairs"));
    }

    #[test]
    fn missing_data_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(run_estimate(&config(dir.path(), "")).is_err());
    }

    #[test]
    fn balance_grid_per_caliper() {
        let dir = tempfile::tempdir().unwrap();
        study(dir.path());
        let grid = run_balance(&config(dir.path(), "")).unwrap();
        assert_eq!(grid.reports.len(), 3);
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("covariate,pre,post_caliper_0.1,post_caliper_0.2,post_caliper_0.05\n"));
        assert_eq!(text.lines().count(), 1 + 3 + 1);
    }

    #[test]
    fn execute_writes_reports() {
        let dir = tempfile::tempdir().unwrap();
        study(dir.path());
        let cfg = config(dir.path(), "");
        let (text, files) = execute(Command::Estimate, &cfg).unwrap();
        assert!(text.contains("Generalized Lin's"));
        assert_eq!(std::fs::read_to_string(&files[1]).unwrap(), text);
        assert!(std::fs::read_to_string(&files[0]).unwrap().lines().count() == 8);
    }
}
