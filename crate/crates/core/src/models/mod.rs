//! Nuisance models: logistic propensity scores and outcome regressions
//! behind one fit/predict contract.

pub mod forest;
pub mod logistic;
pub mod ols;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::seed::derive_seed;

pub use forest::{fit_forest, Forest, ForestConfig};
pub use logistic::{
    fit_logistic, logistic, predict_propensity, truncate_propensity, LogisticConfig, PropensityModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Treated,
    Control,
}

impl Arm {
    pub fn indicator(self) -> u8 {
        match self {
            Arm::Treated => 1,
            Arm::Control => 0,
        }
    }
}

/// Which outcome model to fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ols,
    Forest(ForestConfig),
    /// Predicts the given value everywhere, ignoring training data.
    ConstantStub(f64),
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Ols => "ols",
            ModelKind::Forest(_) => "forest",
            ModelKind::ConstantStub(_) => "constant_stub",
        }
    }

    pub fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<RegressionModel> {
        self.fit_stream(x, y, 0)
    }

    /// Fit with forest randomness drawn from sub-stream `stream` of the
    /// configured seed, so several fits from one config stay independent.
    pub fn fit_stream(&self, x: &DMatrix<f64>, y: &[f64], stream: u64) -> Result<RegressionModel> {
        let params = match self {
            ModelKind::Ols => ModelParams::Ols {
                coefficients: ols::least_squares(x, y)?.coefficients,
            },
            ModelKind::Forest(cfg) => {
                let cfg = ForestConfig {
                    seed: derive_seed(cfg.seed, stream),
                    ..*cfg
                };
                ModelParams::Forest(fit_forest(x, y, &cfg)?)
            }
            ModelKind::ConstantStub(value) => ModelParams::Constant { value: *value },
        };
        Ok(RegressionModel {
            params,
            training_arm: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelParams {
    Ols { coefficients: Vec<f64> },
    Forest(Forest),
    Constant { value: f64 },
}

/// A fitted outcome model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub params: ModelParams,
    pub training_arm: Option<Arm>,
}

impl RegressionModel {
    pub fn constant(value: f64) -> Self {
        RegressionModel {
            params: ModelParams::Constant { value },
            training_arm: None,
        }
    }

    pub fn for_arm(mut self, arm: Arm) -> Self {
        self.training_arm = Some(arm);
        self
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        match &self.params {
            ModelParams::Ols { coefficients } => ols::predict_linear(coefficients, x),
            ModelParams::Forest(forest) => forest.predict(x),
            ModelParams::Constant { value } => Ok(vec![*value; x.nrows()]),
        }
    }

    /// JSON dump used for reproducibility records.
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::Error::InvalidInput(e.to_string()))
    }
}

/// Ordinary least squares with intercept.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<RegressionModel> {
    ModelKind::Ols.fit(x, y)
}
