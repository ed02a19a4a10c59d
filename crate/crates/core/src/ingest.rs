//! Survey answers to a [`Dataset`]: column renaming, marker rescaling onto
//! 0..9 with nonresponse imputation, the weighted financial-health
//! composite, and treatment/control cohort extraction.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const N_MARKERS: usize = 17;

/// Score assigned to a "don't know" or "prefer not to say" answer.
pub const NONRESPONSE_SCORE: f64 = 4.5;

pub const DEFAULT_NONRESPONSE: [i64; 3] = [98, 99, 999];

/// Marker order used by every weight profile.
pub const MARKER_NAMES: [&str; N_MARKERS] = [
    "SATISFACTION_WITH_FINANCIAL_CONDITION",
    "SPENDING_COMPARISON_TO_INCOME",
    "DIFFICULTY_COVERING_EXPENSES",
    "EMERGENCY_FUNDS",
    "CONFIDENCE_GET_2000",
    "CREDIT_RECORD_RATING",
    "CHECKING_ACCOUNT",
    "SAVINGS_ACCOUNT",
    "OVERDRAW_CHECKING_ACCOUNT",
    "REGULAR_CONTRIBUTION_TO_RETIREMENT",
    "OTHER_INVESTMENTS",
    "ALWAYS_PAY_CR_FULL_12MO",
    "USED_PAYDAY_LOAN",
    "DEBT_COLLECTED_12MO",
    "TOO_MUCH_DEBT_STRENGTH",
    "D2D_FINANCIAL_SKILL",
    "FINANCIAL_KNOWLEDGE_ASSESS",
];

pub const COVARIATE_NAMES: [&str; 9] = [
    "RACE_ETHNICITY",
    "EDUCATION_LEVEL",
    "HIGHEST_EDUCATION_OF_RAISERS",
    "NUM_DEPENDENT_CHILDREN",
    "BINARIZED_GENDER",
    "AGE",
    "LAYOFF_PANDEMIC",
    "EXPECT_INHERIT_10K_PLUS",
    "STATE",
];

const SCALED_WEIGHTS: [f64; N_MARKERS] = [
    1.0, 1.0, 1.0, 0.5, 0.5, 1.0, 0.25, 0.25, 0.5, 1.0, 0.75, 1.0, 1.25, 0.5, 2.0, 1.0, 0.5,
];

// ---------------------------------------------------------------- tables

/// A survey cell after trimming.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cell {
    Int(i64),
    Text(String),
    Missing,
}

impl Cell {
    fn parse(raw: &str) -> Cell {
        let s = raw.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
            Cell::Missing
        } else if let Ok(v) = s.parse::<i64>() {
            Cell::Int(v)
        } else {
            Cell::Text(s.to_string())
        }
    }
}

/// Survey rows as read, every cell still a string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read_csv(path: impl AsRef<Path>) -> Result<RawTable> {
        let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path.as_ref())?;
        let headers = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(RawTable { headers, rows })
    }
}

/// Renamed, trimmed and typed survey table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl LabeledTable {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }
}

/// Rename columns with `column_map` (old -> new), trim every cell and parse
/// integer-like cells. Mapped columns are survey answer codes and must hold
/// integers or be empty.
pub fn apply_column_map(raw: &RawTable, column_map: &BTreeMap<String, String>) -> Result<LabeledTable> {
    let mut headers = raw.headers.clone();
    let mut numeric = Vec::new();
    for (old, new) in column_map {
        let j = raw
            .headers
            .iter()
            .position(|h| h == old)
            .ok_or_else(|| Error::MissingColumn(old.clone()))?;
        headers[j] = new.clone();
        numeric.push(j);
    }
    let rows = raw
        .rows
        .iter()
        .map(|row| {
            let cells: Vec<Cell> = row.iter().map(|s| Cell::parse(s)).collect();
            for &j in &numeric {
                if let Some(Cell::Text(s)) = cells.get(j) {
                    return Err(Error::Parse {
                        column: headers[j].clone(),
                        value: s.clone(),
                    });
                }
            }
            Ok(cells)
        })
        .collect::<Result<_>>()?;
    Ok(LabeledTable { headers, rows })
}

// ---------------------------------------------------------------- markers

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Higher raw answers mean better financial health.
    AscendingGood,
    DescendingGood,
}

fn default_nonresponse() -> BTreeSet<i64> {
    DEFAULT_NONRESPONSE.into_iter().collect()
}

/// How one survey question maps onto the 0..9 scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub column: String,
    pub raw_min: i64,
    pub raw_max: i64,
    pub orientation: Orientation,
    #[serde(default = "default_nonresponse")]
    pub nonresponse_codes: BTreeSet<i64>,
}

impl MarkerSpec {
    pub fn new(column: &str, raw_min: i64, raw_max: i64, orientation: Orientation) -> Self {
        MarkerSpec {
            column: column.to_string(),
            raw_min,
            raw_max,
            orientation,
            nonresponse_codes: default_nonresponse(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.raw_min >= self.raw_max {
            return Err(Error::Config(format!(
                "marker `{}`: raw_min {} must be below raw_max {}",
                self.column, self.raw_min, self.raw_max
            )));
        }
        if let Some(code) = self
            .nonresponse_codes
            .iter()
            .find(|&&c| (self.raw_min..=self.raw_max).contains(&c))
        {
            return Err(Error::Config(format!(
                "marker `{}`: nonresponse code {code} inside the answer range",
                self.column
            )));
        }
        Ok(())
    }
}

/// Map a raw answer onto [0, 9]; nonresponse codes become 4.5.
pub fn rescale_marker(raw_value: i64, spec: &MarkerSpec) -> Result<f64> {
    if spec.nonresponse_codes.contains(&raw_value) {
        return Ok(NONRESPONSE_SCORE);
    }
    if raw_value < spec.raw_min || raw_value > spec.raw_max {
        return Err(Error::OutOfRange {
            column: spec.column.clone(),
            value: raw_value,
            min: spec.raw_min,
            max: spec.raw_max,
        });
    }
    let span = (spec.raw_max - spec.raw_min) as f64;
    let steps = match spec.orientation {
        Orientation::AscendingGood => raw_value - spec.raw_min,
        Orientation::DescendingGood => spec.raw_max - raw_value,
    };
    // steps/span is exactly 0 or 1 at the endpoints
    Ok(9.0 * steps as f64 / span)
}

// ---------------------------------------------------------------- composite

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    pub name: String,
    pub weights: Vec<f64>,
}

impl WeightProfile {
    pub fn unit() -> Self {
        WeightProfile {
            name: "unit".to_string(),
            weights: vec![1.0; N_MARKERS],
        }
    }

    pub fn scaled() -> Self {
        WeightProfile {
            name: "scaled".to_string(),
            weights: SCALED_WEIGHTS.to_vec(),
        }
    }

    /// A built-in profile by name.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "unit" => Ok(Self::unit()),
            "scaled" => Ok(Self::scaled()),
            other => Err(Error::Config(format!("unknown weight profile `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != N_MARKERS {
            return Err(Error::Dimension {
                expected: N_MARKERS,
                got: self.weights.len(),
            });
        }
        if self.weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("profile `{}` has a non-positive weight", self.name)));
        }
        Ok(())
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Weighted sum of the 17 rescaled markers.
pub fn composite_health_score(markers: &[f64], profile: &WeightProfile) -> Result<f64> {
    profile.validate()?;
    if markers.len() != N_MARKERS {
        return Err(Error::Dimension {
            expected: N_MARKERS,
            got: markers.len(),
        });
    }
    if let Some(m) = markers.iter().find(|m| !(0.0..=9.0).contains(*m)) {
        return Err(Error::InvalidInput(format!("marker value {m} outside [0, 9]")));
    }
    Ok(markers.iter().zip(&profile.weights).map(|(m, w)| w * m).sum())
}

// ---------------------------------------------------------------- cohorts

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentRule {
    /// Took a course in high school, college, at work or in the military.
    AnyVenue,
    HighSchoolOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlRule {
    /// Certain they never took a course anywhere.
    CertainNever,
    CertainNoHs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub treatment_rule: TreatmentRule,
    pub control_rule: ControlRule,
}

impl CohortSpec {
    pub fn primary() -> Self {
        CohortSpec {
            treatment_rule: TreatmentRule::AnyVenue,
            control_rule: ControlRule::CertainNever,
        }
    }

    pub fn high_school() -> Self {
        CohortSpec {
            treatment_rule: TreatmentRule::HighSchoolOnly,
            control_rule: ControlRule::CertainNoHs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.treatment_rule, self.control_rule) {
            (TreatmentRule::AnyVenue, ControlRule::CertainNever)
            | (TreatmentRule::HighSchoolOnly, ControlRule::CertainNoHs) => Ok(()),
            (t, c) => Err(Error::Config(format!("unsupported cohort pairing {t:?} / {c:?}"))),
        }
    }
}

/// The per-venue "did you take a financial education course" questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CourseQuestions {
    pub high_school: String,
    #[serde(default)]
    pub other_venues: Vec<String>,
    /// Answer code for "yes, took a course".
    #[serde(default = "default_took")]
    pub took_code: i64,
    /// Answer code for "no, certain I did not".
    #[serde(default = "default_never")]
    pub never_code: i64,
}

fn default_took() -> i64 {
    1
}

fn default_never() -> i64 {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    /// One-hot encoded, lowest level dropped.
    Categorical,
    /// Kept as its integer code.
    Ordinal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub column: String,
    pub kind: CovariateKind,
    #[serde(default = "default_nonresponse")]
    pub nonresponse_codes: BTreeSet<i64>,
}

/// Everything needed to turn a survey file into a study, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSpec {
    /// Raw survey label -> descriptive label.
    #[serde(default)]
    pub column_map: BTreeMap<String, String>,
    pub cohort: CohortSpec,
    pub course: CourseQuestions,
    /// Exactly 17 markers, in profile order.
    pub markers: Vec<MarkerSpec>,
    pub covariates: Vec<CovariateSpec>,
    /// Built-in profile name, unless `weights` is given.
    #[serde(default = "default_profile")]
    pub profile: String,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

fn default_profile() -> String {
    "unit".to_string()
}

impl IngestSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: IngestSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        if self.markers.len() != N_MARKERS {
            return Err(Error::Config(format!(
                "expected {N_MARKERS} markers, got {}",
                self.markers.len()
            )));
        }
        self.markers.iter().try_for_each(MarkerSpec::validate)?;
        if self.covariates.is_empty() {
            return Err(Error::Config("no covariates declared".to_string()));
        }
        self.weight_profile()?.validate()
    }

    pub fn weight_profile(&self) -> Result<WeightProfile> {
        match &self.weights {
            Some(w) => Ok(WeightProfile {
                name: self.profile.clone(),
                weights: w.clone(),
            }),
            None => WeightProfile::builtin(&self.profile),
        }
    }
}

/// A cohort with its rescaled markers kept, so outcomes can be recomputed
/// under other weight profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub dataset: Dataset,
    /// n rows of 17 rescaled markers.
    pub markers: Vec<Vec<f64>>,
    /// Source table row of each unit.
    pub source_rows: Vec<usize>,
    /// Rows outside both rules, e.g. "don't know" on the course question.
    pub n_excluded_rule: usize,
    /// Rows dropped for missing values or covariate nonresponse.
    pub n_dropped_missing: usize,
}

impl Cohort {
    pub fn outcomes(&self, profile: &WeightProfile) -> Result<Vec<f64>> {
        self.markers.iter().map(|m| composite_health_score(m, profile)).collect()
    }

    pub fn with_profile(&self, profile: &WeightProfile) -> Result<Dataset> {
        self.dataset.with_outcome(self.outcomes(profile)?)
    }
}

fn int_cell(table: &LabeledTable, row: usize, col: usize) -> Result<Option<i64>> {
    match &table.rows[row][col] {
        Cell::Int(v) => Ok(Some(*v)),
        Cell::Missing => Ok(None),
        Cell::Text(s) => Err(Error::Parse {
            column: table.headers[col].clone(),
            value: s.clone(),
        }),
    }
}

/// Arm for one respondent, or None when neither rule applies.
fn assign_arm(answers: &[Option<i64>], spec: &CohortSpec, course: &CourseQuestions) -> Option<u8> {
    let took = |a: &Option<i64>| *a == Some(course.took_code);
    let never = |a: &Option<i64>| *a == Some(course.never_code);
    let hs = &answers[0];
    let treated = match spec.treatment_rule {
        TreatmentRule::AnyVenue => answers.iter().any(took),
        TreatmentRule::HighSchoolOnly => took(hs),
    };
    let control = match spec.control_rule {
        ControlRule::CertainNever => answers.iter().all(never),
        ControlRule::CertainNoHs => never(hs),
    };
    match (treated, control) {
        (true, false) => Some(1),
        (false, true) => Some(0),
        _ => None,
    }
}

/// Extract the treatment and control cohort with encoded covariates and the
/// composite outcome.
pub fn build_cohort(table: &LabeledTable, spec: &IngestSpec) -> Result<Cohort> {
    spec.validate()?;
    let profile = spec.weight_profile()?;
    let course_cols: Vec<usize> = std::iter::once(&spec.course.high_school)
        .chain(&spec.course.other_venues)
        .map(|c| table.column(c))
        .collect::<Result<_>>()?;
    let marker_cols: Vec<usize> = spec.markers.iter().map(|m| table.column(&m.column)).collect::<Result<_>>()?;
    let cov_cols: Vec<usize> = spec.covariates.iter().map(|c| table.column(&c.column)).collect::<Result<_>>()?;

    let mut treatment = Vec::new();
    let mut markers = Vec::new();
    let mut raw_covariates: Vec<Vec<i64>> = Vec::new();
    let mut source_rows = Vec::new();
    let mut n_excluded_rule = 0;
    let mut n_dropped_missing = 0;

    'rows: for r in 0..table.rows.len() {
        let answers: Vec<Option<i64>> =
            course_cols.iter().map(|&c| int_cell(table, r, c)).collect::<Result<_>>()?;
        let Some(z) = assign_arm(&answers, &spec.cohort, &spec.course) else {
            n_excluded_rule += 1;
            continue;
        };
        let mut covs = Vec::with_capacity(cov_cols.len());
        for (cs, &c) in spec.covariates.iter().zip(&cov_cols) {
            match int_cell(table, r, c)? {
                Some(v) if !cs.nonresponse_codes.contains(&v) => covs.push(v),
                _ => {
                    n_dropped_missing += 1;
                    continue 'rows;
                }
            }
        }
        let mut row_markers = Vec::with_capacity(N_MARKERS);
        for (ms, &c) in spec.markers.iter().zip(&marker_cols) {
            match int_cell(table, r, c)? {
                Some(v) => row_markers.push(rescale_marker(v, ms)?),
                None => {
                    n_dropped_missing += 1;
                    continue 'rows;
                }
            }
        }
        treatment.push(z);
        markers.push(row_markers);
        raw_covariates.push(covs);
        source_rows.push(r);
    }

    if !treatment.contains(&1) {
        return Err(Error::EmptyArm("no treated respondents after filtering".to_string()));
    }
    if !treatment.contains(&0) {
        return Err(Error::EmptyArm("no control respondents after filtering".to_string()));
    }

    let (covariates, names) = encode_covariates(&raw_covariates, &spec.covariates);
    let outcome = markers
        .iter()
        .map(|m| composite_health_score(m, &profile))
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset::new(covariates, treatment, outcome, names)?;
    Ok(Cohort {
        dataset,
        markers,
        source_rows,
        n_excluded_rule,
        n_dropped_missing,
    })
}

/// Ordinals as integers; categoricals one-hot over their observed levels,
/// dropping the lowest.
fn encode_covariates(raw: &[Vec<i64>], specs: &[CovariateSpec]) -> (DMatrix<f64>, Vec<String>) {
    let n = raw.len();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    for (j, spec) in specs.iter().enumerate() {
        match spec.kind {
            CovariateKind::Ordinal => {
                columns.push(raw.iter().map(|r| r[j] as f64).collect());
                names.push(spec.column.clone());
            }
            CovariateKind::Categorical => {
                let levels: BTreeSet<i64> = raw.iter().map(|r| r[j]).collect();
                for level in levels.into_iter().skip(1) {
                    columns.push(raw.iter().map(|r| f64::from(r[j] == level)).collect());
                    names.push(format!("{}_{level}", spec.column));
                }
            }
        }
    }
    let flat: Vec<f64> = columns.into_iter().flatten().collect();
    (DMatrix::from_column_slice(n, names.len(), &flat), names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_dataset;
    use proptest::prelude::*;

    fn asc(min: i64, max: i64) -> MarkerSpec {
        MarkerSpec::new("m", min, max, Orientation::AscendingGood)
    }

    #[test]
    fn nonresponse_imputes_midpoint() {
        for code in [98, 99, 999] {
            assert_eq!(rescale_marker(code, &asc(1, 4)).unwrap(), 4.5);
        }
    }

    #[test]
    fn endpoints_and_orientation() {
        let a = asc(1, 4);
        assert_eq!(rescale_marker(1, &a).unwrap(), 0.0);
        assert_eq!(rescale_marker(4, &a).unwrap(), 9.0);
        let d = MarkerSpec::new("m", 1, 4, Orientation::DescendingGood);
        assert_eq!(rescale_marker(3, &d).unwrap(), 3.0);
        assert_eq!(rescale_marker(1, &d).unwrap(), 9.0);
        assert_eq!(rescale_marker(4, &d).unwrap(), 0.0);
        for (min, max) in [(1, 7), (0, 10), (1, 3), (-2, 5)] {
            assert_eq!(rescale_marker(min, &asc(min, max)).unwrap(), 0.0);
            assert_eq!(rescale_marker(max, &asc(min, max)).unwrap(), 9.0);
        }
    }

    #[test]
    fn out_of_range_is_rejected() {
        assert!(matches!(rescale_marker(5, &asc(1, 4)), Err(Error::OutOfRange { value: 5, .. })));
        assert!(rescale_marker(97, &asc(1, 4)).is_err());
    }

    #[test]
    fn marker_spec_validation() {
        assert!(asc(1, 4).validate().is_ok());
        assert!(asc(4, 4).validate().is_err());
        assert!(asc(1, 100).validate().is_err());
    }

    #[test]
    fn composite_reference_values() {
        assert_eq!(composite_health_score(&[9.0; 17], &WeightProfile::unit()).unwrap(), 153.0);
        assert_eq!(composite_health_score(&[9.0; 17], &WeightProfile::scaled()).unwrap(), 126.0);
        assert_eq!(WeightProfile::scaled().total_weight(), 14.0);
        assert_eq!(composite_health_score(&[0.0; 17], &WeightProfile::scaled()).unwrap(), 0.0);
        assert!(composite_health_score(&[1.0; 16], &WeightProfile::unit()).is_err());
        let mut bad = [1.0; 17];
        bad[3] = 9.5;
        assert!(composite_health_score(&bad, &WeightProfile::unit()).is_err());
    }

    #[test]
    fn cohort_pairings() {
        assert!(CohortSpec::primary().validate().is_ok());
        assert!(CohortSpec::high_school().validate().is_ok());
        let mixed = CohortSpec {
            treatment_rule: TreatmentRule::AnyVenue,
            control_rule: ControlRule::CertainNoHs,
        };
        assert!(mixed.validate().is_err());
    }

    fn raw(headers: &[&str], rows: &[&[&str]]) -> RawTable {
        RawTable {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
        }
    }

    #[test]
    fn column_map_renames_and_parses() {
        let t = raw(&["A3", "note"], &[&[" 3 ", " hello "], &["", "x"]]);
        let map = BTreeMap::from([("A3".to_string(), "AGE".to_string())]);
        let out = apply_column_map(&t, &map).unwrap();
        assert_eq!(out.headers, vec!["AGE", "note"]);
        assert_eq!(out.rows[0], vec![Cell::Int(3), Cell::Text("hello".to_string())]);
        assert_eq!(out.rows[1][0], Cell::Missing);

        let missing = BTreeMap::from([("Q99".to_string(), "X".to_string())]);
        assert!(matches!(apply_column_map(&t, &missing), Err(Error::MissingColumn(c)) if c == "Q99"));

        let bad = raw(&["A3"], &[&["three"]]);
        assert!(matches!(apply_column_map(&bad, &map), Err(Error::Parse { .. })));
    }

    fn test_spec(cohort: CohortSpec) -> IngestSpec {
        IngestSpec {
            column_map: BTreeMap::new(),
            cohort,
            course: CourseQuestions {
                high_school: "HS".to_string(),
                other_venues: vec!["WORK".to_string()],
                took_code: 1,
                never_code: 2,
            },
            markers: (0..N_MARKERS)
                .map(|k| MarkerSpec::new(&format!("M{k}"), 1, 4, Orientation::AscendingGood))
                .collect(),
            covariates: vec![
                CovariateSpec {
                    column: "AGE".to_string(),
                    kind: CovariateKind::Ordinal,
                    nonresponse_codes: default_nonresponse(),
                },
                CovariateSpec {
                    column: "STATE".to_string(),
                    kind: CovariateKind::Categorical,
                    nonresponse_codes: default_nonresponse(),
                },
            ],
            profile: "unit".to_string(),
            weights: None,
        }
    }

    /// Rows of (HS, WORK, AGE, STATE, marker answer for all 17).
    fn survey(rows: &[(&str, &str, &str, &str, &str)]) -> LabeledTable {
        let mut headers: Vec<String> = ["HS", "WORK", "AGE", "STATE"].iter().map(|s| s.to_string()).collect();
        headers.extend((0..N_MARKERS).map(|k| format!("M{k}")));
        let rows = rows
            .iter()
            .map(|(hs, work, age, state, m)| {
                let mut r: Vec<String> = [hs, work, age, state].iter().map(|s| s.to_string()).collect();
                r.extend(std::iter::repeat_n(m.to_string(), N_MARKERS));
                r
            })
            .collect();
        apply_column_map(&RawTable { headers, rows }, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn primary_cohort_rules() {
        let table = survey(&[
            ("1", "2", "3", "5", "4"),  // HS course: treated
            ("2", "1", "2", "6", "1"),  // work course only: treated
            ("2", "2", "4", "5", "98"), // never: control, markers imputed
            ("98", "2", "1", "6", "2"), // unsure about HS: excluded
            ("2", "2", "99", "5", "3"), // covariate nonresponse: dropped
            ("2", "2", "1", "7", ""),   // missing marker: dropped
        ]);
        let cohort = build_cohort(&table, &test_spec(CohortSpec::primary())).unwrap();
        assert_eq!(cohort.dataset.treatment, vec![1, 1, 0]);
        assert_eq!(cohort.source_rows, vec![0, 1, 2]);
        assert_eq!(cohort.n_excluded_rule, 1);
        assert_eq!(cohort.n_dropped_missing, 2);
        assert_eq!(cohort.dataset.outcome, vec![153.0, 0.0, 17.0 * 4.5]);
        assert_eq!(cohort.dataset.covariate_names, vec!["AGE", "STATE_6"]);
        assert_eq!(cohort.dataset.covariates.column(1).as_slice(), &[0.0, 1.0, 0.0]);
        assert!(validate_dataset(&cohort.dataset).is_ok());

        let scaled = cohort.with_profile(&WeightProfile::scaled()).unwrap();
        assert_eq!(scaled.outcome[0], 126.0);
    }

    #[test]
    fn high_school_cohort_rules() {
        let table = survey(&[
            ("1", "2", "3", "5", "4"),  // HS course: treated
            ("2", "1", "2", "6", "1"),  // no HS course: control despite work course
            ("98", "2", "1", "6", "2"), // don't know: excluded
        ]);
        let cohort = build_cohort(&table, &test_spec(CohortSpec::high_school())).unwrap();
        assert_eq!(cohort.dataset.treatment, vec![1, 0]);
        assert_eq!(cohort.n_excluded_rule, 1);
    }

    #[test]
    fn empty_arm_is_an_error() {
        let table = survey(&[("1", "2", "3", "5", "4"), ("1", "1", "3", "5", "4")]);
        assert!(matches!(
            build_cohort(&table, &test_spec(CohortSpec::primary())),
            Err(Error::EmptyArm(_))
        ));
    }

    #[test]
    fn spec_from_toml() {
        let mut text = String::from(
            "profile = \"scaled\"\n\
             [column_map]\nA3 = \"AGE\"\n\
             [cohort]\ntreatment_rule = \"high_school_only\"\ncontrol_rule = \"certain_no_hs\"\n\
             [course]\nhigh_school = \"HS\"\n\
             [[covariates]]\ncolumn = \"AGE\"\nkind = \"ordinal\"\n",
        );
        for k in 0..N_MARKERS {
            text.push_str(&format!(
                "[[markers]]\ncolumn = \"M{k}\"\nraw_min = 1\nraw_max = 5\norientation = \"descending_good\"\n"
            ));
        }
        let spec = IngestSpec::from_toml_str(&text).unwrap();
        assert_eq!(spec.course.took_code, 1);
        assert_eq!(spec.markers[0].nonresponse_codes, default_nonresponse());
        assert_eq!(spec.weight_profile().unwrap(), WeightProfile::scaled());
        assert!(IngestSpec::from_toml_str("profile = 3").is_err());
    }

    proptest! {
        #[test]
        fn rescale_is_monotone(min in -20i64..20, span in 1i64..40, a in 0i64..40, b in 0i64..40) {
            let max = min + span;
            let (lo, hi) = (min + a.min(b).min(span), min + a.max(b).min(span));
            let up = asc(min, max);
            let down = MarkerSpec::new("m", min, max, Orientation::DescendingGood);
            prop_assert!(rescale_marker(lo, &up).unwrap() <= rescale_marker(hi, &up).unwrap());
            prop_assert!(rescale_marker(lo, &down).unwrap() >= rescale_marker(hi, &down).unwrap());
        }

        #[test]
        fn profile_scaling_scales_score(markers in prop::collection::vec(0.0f64..=9.0, N_MARKERS), k in 0.01f64..100.0) {
            let base = WeightProfile::scaled();
            let scaled = WeightProfile {
                name: "k".to_string(),
                weights: base.weights.iter().map(|w| w * k).collect(),
            };
            let a = composite_health_score(&markers, &base).unwrap();
            let b = composite_health_score(&markers, &scaled).unwrap();
            prop_assert!((b - k * a).abs() <= 1e-12 * (1.0 + (k * a).abs()));
            prop_assert!((0.0..=9.0 * 14.0 + 1e-9).contains(&a));
        }

        #[test]
        fn cohorts_always_validate(rows in prop::collection::vec((0usize..4, 0usize..4, 1i64..7, 1i64..4, 1i64..5), 4..30)) {
            let codes = ["1", "2", "98", ""];
            let text: Vec<(String, String, String, String, String)> = rows
                .iter()
                .map(|(h, w, age, st, m)| {
                    (codes[*h].to_string(), codes[*w].to_string(), age.to_string(), st.to_string(), m.to_string())
                })
                .collect();
            let refs: Vec<(&str, &str, &str, &str, &str)> = text
                .iter()
                .map(|(a, b, c, d, e)| (a.as_str(), b.as_str(), c.as_str(), d.as_str(), e.as_str()))
                .collect();
            if let Ok(cohort) = build_cohort(&survey(&refs), &test_spec(CohortSpec::primary())) {
                prop_assert!(validate_dataset(&cohort.dataset).is_ok());
            }
        }
    }
}
