//! One function per task. Each writes its artifacts into the output
//! directory and returns the resolved parameters for the run manifest.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};

use quadwit::backprojection::{
    allocate_measurements, analytic_mc, compare_r, finite_cut_plan, kernel_eval, mc_estimate,
    optimize_backprojection,
};
use quadwit::elementary::{
    analytic_outcome, evaluate_test, optimize_radial_with, squeeze_transform, uniform_cuts, OptimizerOptions,
};
use quadwit::io::{read_dataset, write_csv_table, write_dataset, write_json};
use quadwit::phase_space::eval_wigner;
use quadwit::sampler::{sample_joint, sample_per_cut};
use quadwit::verify::{run_criterion, CRITERION_COUNT};
use quadwit::{
    BaseDensity, CutDistribution, CutPlan, ElementaryTestSpec, KernelSpec, MCEstimate, PhasePoint, StateModel,
    TestOutcome,
};
use serde::Serialize;
use serde_json::Value;

use crate::config::{
    BackprojectParams, CompareParams, ElementaryParams, EstimateMode, ExperimentConfig, FiniteCutsParams,
    OptimizeParams, SampleMode, SampleParams, Task, VerifyParams,
};
use crate::error::CliError;

/// What a task produced.
#[derive(Debug, Default)]
pub struct TaskOutput {
    /// The parameter block with every default filled in.
    pub params: Value,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
    /// Human-readable summary lines.
    pub lines: Vec<String>,
    /// Acceptance criteria that failed (`verify` only).
    pub failed: Vec<u8>,
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> Self {
        Self { dir, files: Vec::new() }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }
}

fn resolved<T: Serialize>(params: &T) -> Value {
    serde_json::to_value(params).expect("parameter blocks serialize")
}

fn require_seed(task: Task, seed: Option<u64>) -> Result<u64, CliError> {
    seed.ok_or_else(|| CliError::Usage(format!("the {} task needs a seed (--seed or \"seed\" in the config)", task.name())))
}

fn base_model(model: &StateModel) -> StateModel {
    match model.base() {
        BaseDensity::SinglePhoton => StateModel::single_photon(),
        BaseDensity::Vacuum => StateModel::vacuum_control(),
    }
}

/// Optimal radial test of degree `n` for a possibly squeezed model: optimized
/// on the unsqueezed base and carried over by the squeeze transform.
fn optimal_test(model: &StateModel, n: usize, m: usize, total: usize) -> Result<(ElementaryTestSpec, TestOutcome), CliError> {
    optimal_test_with(model, n, m, total, &OptimizerOptions::default())
}

fn optimal_test_with(
    model: &StateModel,
    n: usize,
    m: usize,
    total: usize,
    options: &OptimizerOptions,
) -> Result<(ElementaryTestSpec, TestOutcome), CliError> {
    let spec = optimize_radial_with(&base_model(model), n, m, total, options)?.spec;
    let spec = adapt_to_model(spec, model)?;
    let outcome = analytic_outcome(model, &spec, total)?;
    Ok((spec, outcome))
}

fn adapt_to_model(spec: ElementaryTestSpec, model: &StateModel) -> Result<ElementaryTestSpec, CliError> {
    let lambda = model.effective_lambda();
    if lambda == 1.0 {
        Ok(spec)
    } else {
        Ok(squeeze_transform(&spec, lambda)?)
    }
}

fn fmt_g(g: Option<f64>) -> String {
    g.map_or_else(|| "constant test".to_string(), |g| format!("{g:.6}"))
}

pub fn sample(config: &ExperimentConfig, seed: Option<u64>, dir: &Path) -> Result<TaskOutput, CliError> {
    let params: SampleParams = config.params()?;
    let seed = require_seed(Task::Sample, seed)?;
    let mut out = Outputs::new(dir);
    let mut lines = Vec::new();
    match params.mode {
        SampleMode::PerCut => {
            let cuts = params.cuts.clone().unwrap_or_else(|| uniform_cuts(params.m));
            let plan = CutPlan::new(cuts, vec![params.per_cut; params.cuts.as_ref().map_or(params.m, Vec::len)]);
            let dataset = sample_per_cut(&config.model, &plan, seed)?;
            write_dataset(&out.path("dataset.csv"), &out.path("dataset.json"), &dataset)?;
            lines.push(format!("{} samples over {} cuts", dataset.total(), dataset.entries.len()));
        }
        SampleMode::Joint => {
            let d = CutDistribution::from_name(&params.distribution, config.model.effective_lambda())?;
            let stream = sample_joint(&config.model, d, params.total, seed)?;
            let rows: Vec<Vec<f64>> = stream.pairs().map(|(t, s)| vec![t, s]).collect();
            write_csv_table(&out.path("joint.csv"), &["theta", "s"], &rows)?;
            lines.push(format!("{} joint pairs from the {} phase distribution", rows.len(), d.name()));
        }
    }
    Ok(TaskOutput {
        params: resolved(&params),
        files: out.files,
        lines,
        failed: Vec::new(),
    })
}

#[derive(Serialize)]
struct ElementaryReport<'a> {
    spec: &'a ElementaryTestSpec,
    analytic: TestOutcome,
    sampled: TestOutcome,
    significance: Option<f64>,
}

pub fn elementary(config: &ExperimentConfig, seed: Option<u64>, dir: &Path) -> Result<TaskOutput, CliError> {
    let params: ElementaryParams = config.params()?;
    let model = config.model;
    let m = params.m.unwrap_or(params.n + 1);
    let mut out = Outputs::new(dir);
    let spec = match &params.d {
        Some(d) => adapt_to_model(ElementaryTestSpec::radial_uniform(params.n, d.clone(), m)?, &model)?,
        None => optimal_test(&model, params.n, m, params.total)?.0,
    };
    let dataset = match &params.dataset {
        Some(paths) => read_dataset(&paths.csv, &paths.manifest)?,
        None => {
            let seed = require_seed(Task::Elementary, seed)?;
            let per_cut = params.total / spec.m();
            let plan = CutPlan::new(spec.cuts.clone(), vec![per_cut; spec.m()]);
            let dataset = sample_per_cut(&model, &plan, seed)?;
            write_dataset(&out.path("dataset.csv"), &out.path("dataset.json"), &dataset)?;
            dataset
        }
    };
    let sampled = evaluate_test(&dataset, &spec)?;
    let analytic = analytic_outcome(&dataset.model, &spec, dataset.total())?;
    let report = ElementaryReport {
        spec: &spec,
        analytic,
        sampled,
        significance: sampled.significance(),
    };
    write_json(&out.path("elementary.json"), &report)?;

    let steps = params.profile_points.max(2) - 1;
    let radial: Vec<Vec<f64>> = (0..=steps)
        .map(|i| {
            let r = params.r_max * i as f64 / steps as f64;
            let pt = PhasePoint::new(r, 0.0);
            vec![r, spec.test_function(pt), eval_wigner(&model, pt)]
        })
        .collect();
    write_csv_table(&out.path("profile_r.csv"), &["r", "F", "W"], &radial)?;
    let angular: Vec<Vec<f64>> = (0..=steps)
        .map(|i| {
            let theta = -FRAC_PI_2 + PI * i as f64 / steps as f64;
            let pt = PhasePoint::new(params.r_probe * theta.cos(), params.r_probe * theta.sin());
            vec![theta, spec.test_function(pt)]
        })
        .collect();
    write_csv_table(&out.path("profile_theta.csv"), &["theta", "F"], &angular)?;

    let lines = vec![
        format!(
            "sampled mean {:.6e} ± {:.3e} ({} measurements, {} cuts)",
            sampled.mean,
            sampled.variance.sqrt(),
            sampled.total,
            sampled.m
        ),
        format!(
            "analytic mean {:.6e} ± {:.3e}, G = {}",
            analytic.mean,
            analytic.variance.sqrt(),
            fmt_g(analytic.g)
        ),
    ];
    Ok(TaskOutput {
        params: resolved(&params),
        files: out.files,
        lines,
        failed: Vec::new(),
    })
}

#[derive(Serialize)]
struct OptimizeEntry {
    #[serde(rename = "N")]
    n: usize,
    m: usize,
    #[serde(rename = "G")]
    g: Option<f64>,
    spec: ElementaryTestSpec,
}

pub fn optimize(config: &ExperimentConfig, _seed: Option<u64>, dir: &Path) -> Result<TaskOutput, CliError> {
    let params: OptimizeParams = config.params()?;
    if params.n_min == 0 || params.n_min > params.n_max {
        return Err(CliError::Config {
            pointer: "/params/n_min".into(),
            message: "need 1 ≤ n_min ≤ n_max".into(),
        });
    }
    let options = OptimizerOptions {
        max_iterations: params.max_iterations,
        ..OptimizerOptions::default()
    };
    let mut out = Outputs::new(dir);
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for n in params.n_min..=params.n_max {
        let (spec, outcome) = optimal_test_with(&config.model, n, n + 1, params.total, &options)?;
        rows.push(vec![
            n as f64,
            (n + 1) as f64,
            outcome.g.unwrap_or(f64::NAN),
            outcome.mean,
            outcome.variance,
        ]);
        entries.push(OptimizeEntry {
            n,
            m: n + 1,
            g: outcome.g,
            spec,
        });
    }
    write_csv_table(&out.path("optimize.csv"), &["N", "m", "G", "mean", "variance"], &rows)?;
    write_json(&out.path("optimize.json"), &entries)?;
    let mut lines: Vec<String> = entries.iter().map(|e| format!("N={:>2} G={}", e.n, fmt_g(e.g))).collect();
    match entries.iter().find(|e| e.g.is_some_and(|g| g < 0.0)) {
        Some(e) => lines.push(format!("first violation at N={}", e.n)),
        None => lines.push("no violation in range".into()),
    }
    Ok(TaskOutput {
        params: resolved(&params),
        files: out.files,
        lines,
        failed: Vec::new(),
    })
}

/// Result record of a back-projection estimate.
#[derive(Debug, Serialize)]
struct EstimateRecord {
    mean: f64,
    variance: f64,
    delta_bound: f64,
    ratio: f64,
    numerical_error: f64,
    #[serde(rename = "M")]
    total: usize,
}

impl From<MCEstimate> for EstimateRecord {
    fn from(e: MCEstimate) -> Self {
        Self {
            mean: e.mean,
            variance: e.variance,
            delta_bound: e.delta_bound,
            ratio: e.ratio,
            numerical_error: 0.0,
            total: e.total,
        }
    }
}

#[derive(Serialize)]
struct BackprojectReport {
    kernel: KernelSpec,
    distribution: CutDistribution,
    analytic: EstimateRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampled: Option<EstimateRecord>,
}

pub fn backproject(config: &ExperimentConfig, seed: Option<u64>, dir: &Path) -> Result<TaskOutput, CliError> {
    let params: BackprojectParams = config.params()?;
    let model = config.model;
    let lambda = params.lambda.unwrap_or(model.effective_lambda());
    let distribution = CutDistribution::from_name(&params.distribution, lambda)?;
    let seed = match params.mode {
        EstimateMode::Sampled => Some(require_seed(Task::Backproject, seed)?),
        EstimateMode::Analytic => None,
    };
    let kernel = match (params.a, params.epsilon) {
        (Some(a), Some(epsilon)) => KernelSpec::new(a, lambda, epsilon),
        _ => {
            if lambda != model.effective_lambda() {
                return Err(CliError::Config {
                    pointer: "/params/lambda".into(),
                    message: "the kernel search uses the model's squeezing; give a and epsilon to use another stretch"
                        .into(),
                });
            }
            optimize_backprojection(&model, distribution, params.total, &params.grid)?.0
        }
    };
    let analytic = analytic_mc(&model, &kernel, distribution, params.total)?;
    let sampled = match seed {
        Some(seed) => {
            let stream = sample_joint(&model, distribution, params.total, seed)?;
            Some(mc_estimate(&stream, &kernel, distribution)?)
        }
        None => None,
    };
    let mut out = Outputs::new(dir);
    let mut lines = vec![format!(
        "kernel a = {:.6}, λ = {}, ε = {:.3e}",
        kernel.a, kernel.lambda, kernel.epsilon
    )];
    lines.push(format!(
        "analytic mean {:.6e}, σ {:.3e}, Δ {:.3e}, ratio {:.4}",
        analytic.mean,
        analytic.variance.sqrt(),
        analytic.delta_bound,
        analytic.ratio
    ));
    if let Some(s) = &sampled {
        lines.push(format!(
            "sampled mean {:.6e}, σ {:.3e}, Δ {:.3e}, ratio {:.4}",
            s.mean,
            s.variance.sqrt(),
            s.delta_bound,
            s.ratio
        ));
    }
    let report = BackprojectReport {
        kernel,
        distribution,
        analytic: analytic.into(),
        sampled: sampled.map(Into::into),
    };
    write_json(&out.path("backproject.json"), &report)?;
    let steps = params.profile_points.max(2) - 1;
    let reach = 3.0 * kernel.a;
    let rows: Vec<Vec<f64>> = (0..=steps)
        .map(|i| {
            let s = -reach + 2.0 * reach * i as f64 / steps as f64;
            vec![s, kernel_eval(&kernel, 0.0, s)]
        })
        .collect();
    write_csv_table(&out.path("kernel.csv"), &["s", "omega"], &rows)?;
    Ok(TaskOutput {
        params: resolved(&params),
        files: out.files,
        lines,
        failed: Vec::new(),
    })
}

#[derive(Serialize)]
struct PlanRecord {
    lambda: f64,
    m: usize,
    numerical_error: f64,
    cuts: Vec<f64>,
    widths: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    counts: Option<Vec<usize>>,
}

pub fn finite_cuts(config: &ExperimentConfig, _seed: Option<u64>, dir: &Path) -> Result<TaskOutput, CliError> {
    let params: FiniteCutsParams = config.params()?;
    let mut rows = Vec::new();
    let mut plans = Vec::new();
    let mut lines = Vec::new();
    for &lambda in &params.lambdas {
        for &m in &params.m_values {
            let plan = finite_cut_plan(lambda, m)?;
            let counts = params.total.map(|t| allocate_measurements(&plan, t)).transpose()?;
            rows.push(vec![lambda, m as f64, plan.numerical_error]);
            lines.push(format!("λ={lambda} m={m:>2} 𝓔={:.3e}", plan.numerical_error));
            plans.push(PlanRecord {
                lambda,
                m,
                numerical_error: plan.numerical_error,
                cuts: plan.cuts,
                widths: plan.widths,
                counts,
            });
        }
    }
    let mut out = Outputs::new(dir);
    write_csv_table(&out.path("finite_cuts.csv"), &["lambda", "m", "E"], &rows)?;
    write_json(&out.path("plans.json"), &plans)?;
    Ok(TaskOutput {
        params: resolved(&params),
        files: out.files,
        lines,
        failed: Vec::new(),
    })
}

#[derive(Serialize)]
struct CompareRecord {
    #[serde(rename = "M")]
    total: usize,
    #[serde(rename = "R")]
    r: f64,
    valid: bool,
    elementary: TestOutcome,
    kernel: KernelSpec,
    radon: EstimateRecord,
}

pub fn compare(config: &ExperimentConfig, _seed: Option<u64>, dir: &Path) -> Result<TaskOutput, CliError> {
    let params: CompareParams = config.params()?;
    let model = config.model;
    let m = params.m.unwrap_or(params.n + 1);
    let distribution = CutDistribution::from_name(&params.distribution, model.effective_lambda())?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for &total in &params.totals {
        let (kernel, radon) = optimize_backprojection(&model, distribution, total, &params.grid)?;
        let (_, elementary) = optimal_test(&model, params.n, m, total)?;
        let c = compare_r(&elementary, &radon);
        rows.push(vec![
            total as f64,
            c.r,
            elementary.significance().unwrap_or(f64::NAN),
            -radon.ratio,
        ]);
        lines.push(format!(
            "M={total:.0e} R={:.4}{}",
            c.r,
            if c.valid { "" } else { " (not a violation regime)" }
        ));
        records.push(CompareRecord {
            total,
            r: c.r,
            valid: c.valid,
            elementary,
            kernel,
            radon: radon.into(),
        });
    }
    let mut out = Outputs::new(dir);
    write_csv_table(
        &out.path("compare.csv"),
        &["M", "R", "elementary_significance", "radon_significance"],
        &rows,
    )?;
    write_json(&out.path("compare.json"), &records)?;
    Ok(TaskOutput {
        params: resolved(&params),
        files: out.files,
        lines,
        failed: Vec::new(),
    })
}

pub fn verify(config: &ExperimentConfig, seed: Option<u64>, dir: &Path) -> Result<TaskOutput, CliError> {
    let params: VerifyParams = config.params()?;
    let seed = require_seed(Task::Verify, seed)?;
    let ids: Vec<u8> = params
        .criteria
        .clone()
        .unwrap_or_else(|| (1..=CRITERION_COUNT as u8).collect());
    let mut reports = Vec::new();
    for (i, &id) in ids.iter().enumerate() {
        let report = run_criterion(id, seed).ok_or_else(|| CliError::Config {
            pointer: format!("/params/criteria/{i}"),
            message: format!("no criterion {id}; criteria are numbered 1 to {CRITERION_COUNT}"),
        })?;
        println!("{}", report.line());
        reports.push(report);
    }
    let mut out = Outputs::new(dir);
    write_json(&out.path("verify.json"), &reports)?;
    let failed: Vec<u8> = reports.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    let lines = vec![format!("{} of {} criteria passed", reports.len() - failed.len(), reports.len())];
    Ok(TaskOutput {
        params: resolved(&params),
        files: out.files,
        lines,
        failed,
    })
}
