//! Run configuration, read from a single TOML file. Relative paths resolve
//! against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::CsvRoles;
use crate::error::{Error, Result};
use crate::ingest::WeightProfile;
use crate::models::ModelKind;
use crate::simulation::{DgpConfig, SimEstimator};
use crate::weighting::{Truncation, VarianceMethod, WeightingConfig, MIN_BOOTSTRAP_REPLICATES};

pub const DEFAULT_CALIPERS: [f64; 3] = [0.1, 0.2, 0.05];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream: splits, forests, bootstrap, simulation.
    #[serde(default)]
    pub seed: u64,
    pub output: OutputConfig,
    /// A prepared study table.
    pub data: Option<TableSource>,
    /// A raw survey file plus its ingestion spec.
    pub survey: Option<SurveySource>,
    #[serde(default)]
    pub estimators: EstimatorToggles,
    #[serde(default)]
    pub weighting: WeightingSection,
    #[serde(default)]
    pub sensitivity: SensitivitySection,
    pub simulate: Option<SimulateSection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Prepended to every output file name.
    #[serde(default)]
    pub prefix: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSource {
    pub path: PathBuf,
    #[serde(default = "default_treatment")]
    pub treatment: String,
    #[serde(default = "default_outcome")]
    pub outcome: String,
    /// Every other column when absent.
    pub covariates: Option<Vec<String>>,
}

fn default_treatment() -> String {
    "treatment".to_string()
}

fn default_outcome() -> String {
    "outcome".to_string()
}

impl TableSource {
    pub fn roles(&self) -> CsvRoles {
        CsvRoles {
            treatment: self.treatment.clone(),
            outcome: self.outcome.clone(),
            covariates: self.covariates.clone(),
            oracle: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveySource {
    pub path: PathBuf,
    /// Ingestion spec file.
    pub spec: PathBuf,
    /// Overrides the profile named in the spec.
    pub profile: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorToggles {
    pub lins: bool,
    pub horvitz_thompson: bool,
    pub hajek: bool,
    pub aipw: bool,
    pub matching: bool,
    /// One matching row per entry, in this order.
    pub calipers: Vec<f64>,
    /// Outcome model for Lin's estimator and AIPW.
    pub outcome_model: ModelKind,
}

impl Default for EstimatorToggles {
    fn default() -> Self {
        EstimatorToggles {
            lins: true,
            horvitz_thompson: true,
            hajek: true,
            aipw: true,
            matching: true,
            calipers: DEFAULT_CALIPERS.to_vec(),
            outcome_model: ModelKind::Ols,
        }
    }
}

impl EstimatorToggles {
    pub fn any_enabled(&self) -> bool {
        self.lins || self.horvitz_thompson || self.hajek || self.aipw || (self.matching && !self.calipers.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceChoice {
    Sandwich,
    Plugin,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightingSection {
    /// `[lo, hi]`, or an empty list for no truncation.
    pub truncation: Vec<f64>,
    pub variance: VarianceChoice,
    pub bootstrap_replicates: usize,
    pub crossfit_folds: usize,
}

impl Default for WeightingSection {
    fn default() -> Self {
        WeightingSection {
            truncation: vec![0.025, 0.975],
            variance: VarianceChoice::Sandwich,
            bootstrap_replicates: 200,
            crossfit_folds: 2,
        }
    }
}

impl WeightingSection {
    /// Weighting settings with seeds filled from `seed`'s sub-streams.
    pub fn to_config(&self, outcome_model: ModelKind, seed: u64, bootstrap_seed: u64) -> Result<WeightingConfig> {
        let truncation = match self.truncation.as_slice() {
            [] => Truncation::None,
            &[lo, hi] => Truncation::Bounds { lo, hi },
            other => {
                return Err(Error::Config(format!(
                    "truncation needs two bounds or none, got {} values",
                    other.len()
                )))
            }
        };
        let variance = match self.variance {
            VarianceChoice::Sandwich => VarianceMethod::Sandwich,
            VarianceChoice::Plugin => VarianceMethod::Plugin,
            VarianceChoice::Bootstrap => VarianceMethod::Bootstrap {
                replicates: self.bootstrap_replicates,
                seed: bootstrap_seed,
            },
        };
        let cfg = WeightingConfig {
            truncation,
            variance,
            outcome_model,
            crossfit_folds: self.crossfit_folds,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivitySection {
    /// Built-in profile names.
    pub profiles: Vec<String>,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        SensitivitySection {
            profiles: vec!["unit".to_string(), "scaled".to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub replications: usize,
    pub dgp: DgpConfig,
    /// Defaults to Lin's (OLS), HT, Hajek, AIPW and matching at caliper 0.1.
    pub estimators: Option<Vec<SimEstimator>>,
    /// Thresholds each estimator row is checked against.
    pub checks: Option<SimulationChecks>,
    /// Also write the study drawn for replicate 0, with `y0,y1` columns.
    #[serde(default)]
    pub sample_dataset: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationChecks {
    pub max_abs_bias: f64,
    pub coverage: [f64; 2],
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output.dir);
        if let Some(d) = &mut self.data {
            join(&mut d.path);
        }
        if let Some(s) = &mut self.survey {
            join(&mut s.path);
            join(&mut s.spec);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.is_some() && self.survey.is_some() {
            return Err(Error::Config("give either [data] or [survey], not both".to_string()));
        }
        if let Some(bad) = self.estimators.calipers.iter().find(|c| !(**c > 0.0)) {
            return Err(Error::Config(format!("calipers must be positive, got {bad}")));
        }
        if self.weighting.variance == VarianceChoice::Bootstrap
            && self.weighting.bootstrap_replicates < MIN_BOOTSTRAP_REPLICATES
        {
            return Err(Error::Config(format!(
                "bootstrap_replicates must be at least {MIN_BOOTSTRAP_REPLICATES}"
            )));
        }
        for name in &self.sensitivity.profiles {
            WeightProfile::builtin(name)?;
        }
        if let Some(sim) = &self.simulate {
            sim.dgp.validate()?;
            if sim.replications < 2 {
                return Err(Error::Config("simulate.replications must be at least 2".to_string()));
            }
        }
        Ok(())
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.output.dir.join(format!("{}{name}", self.output.prefix))
    }
}
