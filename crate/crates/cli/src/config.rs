//! Experiment configuration: one JSON document per run, with a typed
//! parameter block per task.

use std::path::{Path, PathBuf};

use quadwit::backprojection::ParameterGrid;
use quadwit::elementary::OptimizerOptions;
use quadwit::StateModel;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

/// Tasks understood by the runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Sample,
    Elementary,
    Optimize,
    Backproject,
    FiniteCuts,
    Compare,
    Verify,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Sample => "sample",
            Task::Elementary => "elementary",
            Task::Optimize => "optimize",
            Task::Backproject => "backproject",
            Task::FiniteCuts => "finite-cuts",
            Task::Compare => "compare",
            Task::Verify => "verify",
        }
    }
}

fn default_model() -> StateModel {
    StateModel::single_photon()
}

/// The configuration document as written by the user.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_model")]
    pub model: StateModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default)]
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: default_model(),
            task: None,
            params: Value::Null,
            output_path: None,
            seed: None,
        }
    }
}

fn pointer(path: &serde_path_to_error::Path, prefix: &str) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::from(prefix);
    for segment in path.iter() {
        out.push('/');
        match segment {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

impl ExperimentConfig {
    /// Parses a configuration document, reporting schema errors with JSON-pointer paths.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
            pointer: pointer(e.path(), ""),
            message: e.inner().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Deserializes the parameter block of a task, with defaults for missing fields.
    pub fn params<T: DeserializeOwned>(&self) -> Result<T, CliError> {
        let value = match &self.params {
            Value::Null => Value::Object(Default::default()),
            other => other.clone(),
        };
        serde_path_to_error::deserialize(value).map_err(|e| CliError::Config {
            pointer: pointer(e.path(), "/params"),
            message: e.inner().to_string(),
        })
    }
}

/// `sample`: per-cut datasets or a joint `(θ, s)` stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleParams {
    /// `per_cut` or `joint`.
    pub mode: SampleMode,
    /// Explicit cut angles; uniform cuts are used when absent.
    pub cuts: Option<Vec<f64>>,
    pub m: usize,
    pub per_cut: usize,
    /// `uniform` or `optimal`, for joint sampling.
    pub distribution: String,
    #[serde(rename = "M")]
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    PerCut,
    Joint,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self {
            mode: SampleMode::PerCut,
            cuts: None,
            m: 5,
            per_cut: 200_000,
            distribution: "optimal".into(),
            total: 1_000_000,
        }
    }
}

/// Location of a persisted dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

/// `elementary`: evaluate a radial test on simulated or stored data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElementaryParams {
    #[serde(rename = "N")]
    pub n: usize,
    /// Number of cuts, `N + 1` when absent.
    pub m: Option<usize>,
    /// Radial coefficients; the optimal test is used when absent.
    pub d: Option<Vec<f64>>,
    #[serde(rename = "M")]
    pub total: usize,
    /// Stored dataset to evaluate instead of simulating one.
    pub dataset: Option<DatasetPaths>,
    pub profile_points: usize,
    pub r_max: f64,
    /// Radius of the angular profile.
    pub r_probe: f64,
}

impl Default for ElementaryParams {
    fn default() -> Self {
        Self {
            n: 16,
            m: None,
            d: None,
            total: 1_000_000,
            dataset: None,
            profile_points: 201,
            r_max: 4.0,
            r_probe: 1.0,
        }
    }
}

/// `optimize`: the optimal figure of merit over a range of degrees.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeParams {
    pub n_min: usize,
    pub n_max: usize,
    #[serde(rename = "M")]
    pub total: usize,
    /// Iteration cap of the optimizer at each degree.
    pub max_iterations: usize,
}

impl Default for OptimizeParams {
    fn default() -> Self {
        Self {
            n_min: 2,
            n_max: 20,
            total: 1_000_000,
            max_iterations: OptimizerOptions::default().max_iterations,
        }
    }
}

/// `backproject`: the filtered back-projection estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackprojectParams {
    /// Kernel radius; optimized together with `epsilon` when either is absent.
    pub a: Option<f64>,
    pub epsilon: Option<f64>,
    /// Kernel stretch, the model's squeezing when absent.
    pub lambda: Option<f64>,
    pub distribution: String,
    #[serde(rename = "M")]
    pub total: usize,
    /// `sampled` or `analytic`.
    pub mode: EstimateMode,
    pub grid: ParameterGrid,
    pub profile_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    Sampled,
    Analytic,
}

impl Default for BackprojectParams {
    fn default() -> Self {
        Self {
            a: None,
            epsilon: None,
            lambda: None,
            distribution: "optimal".into(),
            total: 1_000_000,
            mode: EstimateMode::Sampled,
            grid: ParameterGrid::default(),
            profile_points: 401,
        }
    }
}

/// `finite-cuts`: optimized middle-point plans.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiniteCutsParams {
    pub lambdas: Vec<f64>,
    pub m_values: Vec<usize>,
    /// Total measurements to allocate over each plan.
    #[serde(rename = "M")]
    pub total: Option<usize>,
}

impl Default for FiniteCutsParams {
    fn default() -> Self {
        Self {
            lambdas: vec![2.0, 5.0, 10.0],
            m_values: (1..=10).map(|k| 2 * k).collect(),
            total: None,
        }
    }
}

/// `compare`: the significance ratio of the two procedures.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareParams {
    #[serde(rename = "N")]
    pub n: usize,
    pub m: Option<usize>,
    #[serde(rename = "M_values")]
    pub totals: Vec<usize>,
    pub distribution: String,
    pub grid: ParameterGrid,
}

impl Default for CompareParams {
    fn default() -> Self {
        Self {
            n: 16,
            m: None,
            totals: vec![100_000, 300_000, 1_000_000, 3_000_000, 10_000_000],
            distribution: "optimal".into(),
            grid: ParameterGrid::default(),
        }
    }
}

/// `verify`: the acceptance suite.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyParams {
    /// Criteria to run, all when absent.
    pub criteria: Option<Vec<u8>>,
}
