//! Scenario grid runner for the simulation study, and its report writers.
//!
//! Every cell is a `(sample size, prevalence, strategy, model)` tuple run
//! over several replicate panels. Panel, fold and model seeds are derived
//! from the base seed and the cell descriptor alone, so reports do not
//! depend on execution order or worker count.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anomaly::{threshold_from_scores, Detector, DetectorKind, DetectorParams, ThresholdMethod};
use crate::balance::ResamplePlan;
use crate::dataio::Dataset;
use crate::ensembles::{fit_forest, fit_gbt, ForestParams, GbtParams};
use crate::error::{invalid, Error, Result};
use crate::eval::{cross_validate, kfold, Learner, Scored, Strategy};
use crate::linear::{default_grid, fit_linear, select_lambda, LinearParams, Penalty};
use crate::matrix::Matrix;
use crate::metrics::{ConfusionMatrix, Metric};
use crate::seed;
use crate::simgen::{simulate_panel, SimConfig};
use crate::svm::{fit_svm, KernelSpec, SvmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Smote,
    Raw,
    Weighted,
    Anomaly,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Smote,
        StrategyKind::Raw,
        StrategyKind::Weighted,
        StrategyKind::Anomaly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Smote => "smote",
            StrategyKind::Raw => "raw",
            StrategyKind::Weighted => "weighted",
            StrategyKind::Anomaly => "anomaly",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Glm,
    Ridge,
    Lasso,
    ElasticNet,
    RandomForest,
    Gbt,
    Svm,
    Lof,
    Knn,
    Abof,
    Mahalanobis,
    Mcd,
    IsolationForest,
    Autoencoder,
}

impl ModelKind {
    pub fn detector(self) -> Option<DetectorKind> {
        Some(match self {
            ModelKind::Lof => DetectorKind::Lof,
            ModelKind::Knn => DetectorKind::Knn,
            ModelKind::Abof => DetectorKind::Abof,
            ModelKind::Mahalanobis => DetectorKind::Mahalanobis,
            ModelKind::Mcd => DetectorKind::Mcd,
            ModelKind::IsolationForest => DetectorKind::IsolationForest,
            ModelKind::Autoencoder => DetectorKind::Autoencoder,
            _ => return None,
        })
    }

    /// Detectors run under the anomaly strategy, classifiers under the rest.
    pub fn supports(self, strategy: StrategyKind) -> bool {
        self.detector().is_some() == (strategy == StrategyKind::Anomaly)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    pub kind: ModelKind,
    /// Cells with more rows than this are reported as skipped.
    #[serde(default)]
    pub max_rows: Option<usize>,
}

impl ModelEntry {
    pub fn new(name: &str, kind: ModelKind, max_rows: Option<usize>) -> Self {
        Self {
            name: name.to_owned(),
            kind,
            max_rows,
        }
    }
}

pub fn default_models() -> Vec<ModelEntry> {
    use ModelKind::*;
    vec![
        ModelEntry::new("glm", Glm, None),
        ModelEntry::new("ridge", Ridge, None),
        ModelEntry::new("lasso", Lasso, None),
        ModelEntry::new("elastic_net", ElasticNet, None),
        ModelEntry::new("random_forest", RandomForest, None),
        ModelEntry::new("gbt", Gbt, None),
        ModelEntry::new("svm", Svm, Some(2000)),
        ModelEntry::new("lof", Lof, None),
        ModelEntry::new("knn", Knn, None),
        ModelEntry::new("abof", Abof, Some(2000)),
        ModelEntry::new("mahalanobis", Mahalanobis, None),
        ModelEntry::new("mcd", Mcd, None),
        ModelEntry::new("isolation_forest", IsolationForest, None),
        ModelEntry::new("autoencoder", Autoencoder, None),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSettings {
    /// Log-spaced λ values per penalty axis.
    pub grid_per_axis: usize,
    /// Inner folds used to pick λ.
    pub cv_folds: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LinearSettings {
    fn default() -> Self {
        Self {
            grid_per_axis: 5,
            cv_folds: 3,
            max_iter: 10_000,
            tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSettings {
    pub c: f64,
    /// `None` means radial with γ = 1/p.
    pub kernel: Option<KernelSpec<f64>>,
    pub tol: f64,
    pub max_passes: usize,
}

impl Default for SvmSettings {
    fn default() -> Self {
        Self {
            c: 1.0,
            kernel: None,
            tol: 1e-3,
            max_passes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub linear: LinearSettings,
    pub forest: ForestParams,
    pub gbt: GbtParams<f64>,
    pub svm: SvmSettings,
    pub detectors: DetectorParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub sample_sizes: Vec<usize>,
    pub prevalences: Vec<f64>,
    pub strategies: Vec<StrategyKind>,
    pub models: Vec<ModelEntry>,
    pub replicates: usize,
    pub base_seed: u64,
    pub folds: usize,
    pub stratified: bool,
    /// Decision threshold for probability-type scores.
    pub threshold: f64,
    /// Template panel; size, prevalence and seed are set per cell.
    pub simulation: SimConfig,
    pub resample: ResamplePlan,
    pub model_params: ModelParams,
    /// Record wall-clock time per cell. Off makes reports byte-reproducible.
    pub record_runtime: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            sample_sizes: vec![800, 10_000],
            prevalences: vec![0.5, 0.1, 0.05, 0.01],
            strategies: StrategyKind::ALL.to_vec(),
            models: default_models(),
            replicates: 3,
            base_seed: 42,
            folds: 5,
            stratified: true,
            threshold: 0.5,
            simulation: SimConfig::default(),
            resample: ResamplePlan::default(),
            model_params: ModelParams::default(),
            record_runtime: true,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty() || self.prevalences.is_empty() || self.strategies.is_empty() || self.models.is_empty() {
            return Err(invalid("sample_sizes, prevalences, strategies and models must be non-empty"));
        }
        if let Some(r) = self.prevalences.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
            return Err(invalid(format!("prevalence {r} outside (0, 1]")));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates must be at least 1"));
        }
        if self.folds < 2 {
            return Err(invalid("folds must be at least 2"));
        }
        if let Some(&n) = self.sample_sizes.iter().find(|&&n| n < self.folds) {
            return Err(invalid(format!("sample size {n} is smaller than the fold count")));
        }
        let mut names: Vec<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("model names must be unique"));
        }
        self.resample.validate()?;
        self.simulation.validate()
    }

    /// Cells in report order: sizes, then prevalences, strategies, models.
    pub fn cells(&self) -> Vec<(ScenarioDescriptor, ModelEntry)> {
        let mut out = Vec::new();
        for &n in &self.sample_sizes {
            for &rho in &self.prevalences {
                for &strategy in &self.strategies {
                    for m in self.models.iter().filter(|m| m.kind.supports(strategy)) {
                        out.push((
                            ScenarioDescriptor {
                                sample_size: n,
                                prevalence: rho,
                                strategy,
                                model: m.name.clone(),
                            },
                            m.clone(),
                        ));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDescriptor {
    pub sample_size: usize,
    pub prevalence: f64,
    pub strategy: StrategyKind,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Skipped { reason: String },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: ScenarioDescriptor,
    pub status: CellStatus,
    /// Panel seed of each replicate.
    pub panel_seeds: Vec<u64>,
    /// Model seed of each replicate.
    pub model_seeds: Vec<u64>,
    pub ppv: Metric,
    pub sensitivity: Metric,
    pub f1: Metric,
    pub fpr: Metric,
    pub auc: Metric,
    /// Counts summed over replicates.
    pub confusion: ConfusionMatrix,
    pub replicate_confusion: Vec<ConfusionMatrix>,
    pub replicate_auc: Vec<Metric>,
    pub runtime_ms: u64,
}

impl ScenarioReport {
    fn empty(scenario: ScenarioDescriptor, status: CellStatus) -> Self {
        Self {
            scenario,
            status,
            panel_seeds: Vec::new(),
            model_seeds: Vec::new(),
            ppv: Metric::UNDEFINED,
            sensitivity: Metric::UNDEFINED,
            f1: Metric::UNDEFINED,
            fpr: Metric::UNDEFINED,
            auc: Metric::UNDEFINED,
            confusion: ConfusionMatrix::default(),
            replicate_confusion: Vec::new(),
            replicate_auc: Vec::new(),
            runtime_ms: 0,
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self.status, CellStatus::Failed { .. })
    }
}

pub fn panel_seed(base_seed: u64, sample_size: usize, prevalence: f64, replicate: usize) -> u64 {
    seed::derive(
        base_seed,
        &[seed::label("panel"), sample_size as u64, prevalence.to_bits(), replicate as u64],
    )
}

pub fn model_seed(panel_seed: u64, strategy: StrategyKind, model: &str) -> u64 {
    seed::derive(panel_seed, &[seed::label(strategy.name()), seed::label(model)])
}

/// Final-year covariates x1..x8 of a simulated panel.
pub fn simulate_dataset(template: &SimConfig, sample_size: usize, prevalence: f64, seed: u64) -> Result<Dataset<f64>> {
    let config = SimConfig {
        n_herds: sample_size,
        target_prevalence: prevalence,
        seed,
        ..template.clone()
    };
    let panel = simulate_panel(&config)?;
    let year = panel.last_year().ok_or_else(|| invalid("simulation produced no records"))?;
    panel.year_dataset(year)
}

/// A bench model wrapped as a cross-validation learner.
pub struct ModelLearner<'a> {
    pub kind: ModelKind,
    pub params: &'a ModelParams,
}

impl ModelLearner<'_> {
    fn linear(&self, train: &Dataset<f64>, penalty: Penalty, seed: u64) -> Result<LinearParams<f64>> {
        let s = &self.params.linear;
        let template = LinearParams {
            penalty,
            l2: 0.0,
            l1: 0.0,
            max_iter: s.max_iter,
            tol: s.tol,
        };
        if penalty == Penalty::None {
            return Ok(template);
        }
        let grid = default_grid(penalty, s.grid_per_axis);
        let (l2, l1) = select_lambda(train, &grid, s.cv_folds, seed, &template)?;
        Ok(LinearParams { l2, l1, ..template })
    }
}

impl Learner<f64> for ModelLearner<'_> {
    fn name(&self) -> String {
        format!("{:?}", self.kind)
    }

    fn fit_score(&self, train: &Dataset<f64>, test: &Matrix<f64>, seed: u64) -> Result<Scored<f64>> {
        let p = self.params;
        let classified = |scores| Ok(Scored { scores, threshold: None });
        match self.kind {
            ModelKind::Glm | ModelKind::Ridge | ModelKind::Lasso | ModelKind::ElasticNet => {
                let penalty = match self.kind {
                    ModelKind::Ridge => Penalty::Ridge,
                    ModelKind::Lasso => Penalty::Lasso,
                    ModelKind::ElasticNet => Penalty::ElasticNet,
                    _ => Penalty::None,
                };
                let params = self.linear(train, penalty, seed)?;
                classified(fit_linear(train, &params)?.predict_proba(test)?)
            }
            ModelKind::RandomForest => {
                let params = ForestParams { seed, ..p.forest.clone() };
                classified(fit_forest(train, &params)?.predict_proba(test)?)
            }
            ModelKind::Gbt => classified(fit_gbt(train, &p.gbt)?.predict_proba(test)?),
            ModelKind::Svm => {
                let params = SvmParams {
                    kernel: p.svm.kernel,
                    c: p.svm.c,
                    class_weights: None,
                    tol: p.svm.tol,
                    max_passes: p.svm.max_passes,
                    calibrate: true,
                };
                classified(fit_svm(train, &params)?.predict_proba(test)?)
            }
            _ => {
                let kind = self.kind.detector().expect("classifiers handled above");
                let fit_rows = if kind == DetectorKind::Autoencoder {
                    let neg: Vec<usize> = (0..train.len()).filter(|&i| train.labels()[i] == 0).collect();
                    train.features().select_rows(&neg)
                } else {
                    train.features().clone()
                };
                let detector = Detector::fit(kind, &fit_rows, &p.detectors, seed)?;
                let train_scores = if kind == DetectorKind::Autoencoder {
                    detector.score(train.features())?
                } else {
                    detector.train_scores(train.features())?
                };
                let threshold = threshold_from_scores(train_scores.values(), ThresholdMethod::F1Max(train.labels()))?;
                Ok(Scored {
                    scores: detector.score(test)?.into_values(),
                    threshold: Some(threshold),
                })
            }
        }
    }
}

struct Replicate {
    confusion: ConfusionMatrix,
    auc: Metric,
    panel_seed: u64,
    model_seed: u64,
    millis: u64,
}

fn run_replicate(
    config: &ScenarioConfig,
    cell: &ScenarioDescriptor,
    entry: &ModelEntry,
    data: &Dataset<f64>,
    panel_seed: u64,
) -> Result<Replicate> {
    let start = Instant::now();
    let plan = kfold(
        data.labels(),
        config.folds,
        config.stratified,
        seed::derive(panel_seed, &[seed::label("folds")]),
    )?;
    let strategy = match cell.strategy {
        StrategyKind::Smote => Strategy::Resample(config.resample.clone()),
        StrategyKind::Raw => Strategy::Raw,
        StrategyKind::Weighted => Strategy::Weighted,
        StrategyKind::Anomaly => Strategy::Anomaly,
    };
    let learner = ModelLearner {
        kind: entry.kind,
        params: &config.model_params,
    };
    let mseed = model_seed(panel_seed, cell.strategy, &entry.name);
    let cv = cross_validate(data, &learner, &strategy, &plan, config.threshold, mseed)?;
    Ok(Replicate {
        confusion: cv.confusion,
        auc: cv.auc,
        panel_seed,
        model_seed: mseed,
        millis: start.elapsed().as_millis() as u64,
    })
}

/// Runs every cell of the grid on the current rayon pool.
///
/// Configuration errors abort; failures inside a cell are recorded in its
/// report and the rest of the grid still runs.
pub fn run_scenarios(config: &ScenarioConfig) -> Result<Vec<ScenarioReport>> {
    config.validate()?;
    let cells = config.cells();

    let mut panel_keys: Vec<(usize, u64, usize)> = Vec::new();
    for (c, _) in &cells {
        for r in 0..config.replicates {
            let key = (c.sample_size, c.prevalence.to_bits(), r);
            if !panel_keys.contains(&key) {
                panel_keys.push(key);
            }
        }
    }
    let panels: HashMap<(usize, u64, usize), (u64, std::result::Result<Dataset<f64>, String>)> = panel_keys
        .par_iter()
        .map(|&(n, bits, r)| {
            let rho = f64::from_bits(bits);
            let s = panel_seed(config.base_seed, n, rho, r);
            let data = simulate_dataset(&config.simulation, n, rho, s).map_err(|e| e.to_string());
            ((n, bits, r), (s, data))
        })
        .collect();

    let units: Vec<(usize, usize)> = (0..cells.len())
        .filter(|&c| cells[c].1.max_rows.is_none_or(|cap| cells[c].0.sample_size <= cap))
        .flat_map(|c| (0..config.replicates).map(move |r| (c, r)))
        .collect();
    let results: Vec<std::result::Result<Replicate, String>> = units
        .par_iter()
        .map(|&(c, r)| {
            let (cell, entry) = &cells[c];
            let (s, data) = &panels[&(cell.sample_size, cell.prevalence.to_bits(), r)];
            let data = data.as_ref().map_err(|e| format!("simulation failed: {e}"))?;
            run_replicate(config, cell, entry, data, *s).map_err(|e| e.to_string())
        })
        .collect();

    let mut by_cell: Vec<Vec<std::result::Result<Replicate, String>>> = cells.iter().map(|_| Vec::new()).collect();
    for (&(c, _), res) in units.iter().zip(results) {
        by_cell[c].push(res);
    }

    Ok(cells
        .into_iter()
        .zip(by_cell)
        .map(|((desc, entry), reps)| {
            if let Some(cap) = entry.max_rows.filter(|&cap| desc.sample_size > cap) {
                let reason = format!("size cap: {} rows exceeds {cap}", desc.sample_size);
                return ScenarioReport::empty(desc, CellStatus::Skipped { reason });
            }
            if let Some(err) = reps.iter().find_map(|r| r.as_ref().err()) {
                return ScenarioReport::empty(desc, CellStatus::Failed { error: err.clone() });
            }
            let reps: Vec<Replicate> = reps.into_iter().map(|r| r.expect("errors handled above")).collect();
            aggregate(desc, reps, config.record_runtime)
        })
        .collect())
}

fn aggregate(desc: ScenarioDescriptor, reps: Vec<Replicate>, record_runtime: bool) -> ScenarioReport {
    let summaries: Vec<_> = reps.iter().map(|r| crate::metrics::summarize(&r.confusion)).collect();
    ScenarioReport {
        ppv: Metric::mean(summaries.iter().map(|s| s.ppv)),
        sensitivity: Metric::mean(summaries.iter().map(|s| s.sensitivity)),
        f1: Metric::mean(summaries.iter().map(|s| s.f1)),
        fpr: Metric::mean(summaries.iter().map(|s| s.fpr)),
        auc: Metric::mean(reps.iter().map(|r| r.auc)),
        confusion: reps.iter().map(|r| r.confusion).sum(),
        replicate_confusion: reps.iter().map(|r| r.confusion).collect(),
        replicate_auc: reps.iter().map(|r| r.auc).collect(),
        panel_seeds: reps.iter().map(|r| r.panel_seed).collect(),
        model_seeds: reps.iter().map(|r| r.model_seed).collect(),
        runtime_ms: if record_runtime { reps.iter().map(|r| r.millis).sum() } else { 0 },
        scenario: desc,
        status: CellStatus::Ok,
    }
}

/// Runs the grid on a dedicated pool of `workers` threads.
pub fn run_scenarios_with_workers(config: &ScenarioConfig, workers: usize) -> Result<Vec<ScenarioReport>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_scenarios(config))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(invalid(format!("unknown report format {other:?}"))),
        }
    }
}

/// Everything the JSON report holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutput {
    pub config: ScenarioConfig,
    pub reports: Vec<ScenarioReport>,
}

fn status_text(s: &CellStatus) -> (&'static str, &str) {
    match s {
        CellStatus::Ok => ("ok", ""),
        CellStatus::Skipped { reason } => ("skipped", reason),
        CellStatus::Failed { error } => ("failed", error),
    }
}

fn metric_cell(m: Metric) -> String {
    m.value().map(|v| v.to_string()).unwrap_or_default()
}

pub fn render_csv(reports: &[ScenarioReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "sample_size",
        "prevalence",
        "strategy",
        "model",
        "status",
        "detail",
        "ppv",
        "sensitivity",
        "f1",
        "fpr",
        "auc",
        "tp",
        "fp",
        "tn",
        "fn",
        "replicates",
        "panel_seeds",
        "runtime_ms",
    ])?;
    for r in reports {
        let (state, detail) = status_text(&r.status);
        let seeds: Vec<String> = r.panel_seeds.iter().map(u64::to_string).collect();
        w.write_record([
            r.scenario.sample_size.to_string(),
            r.scenario.prevalence.to_string(),
            r.scenario.strategy.name().to_owned(),
            r.scenario.model.clone(),
            state.to_owned(),
            detail.to_owned(),
            metric_cell(r.ppv),
            metric_cell(r.sensitivity),
            metric_cell(r.f1),
            metric_cell(r.fpr),
            metric_cell(r.auc),
            r.confusion.true_pos.to_string(),
            r.confusion.false_pos.to_string(),
            r.confusion.true_neg.to_string(),
            r.confusion.false_neg.to_string(),
            r.replicate_confusion.len().to_string(),
            seeds.join(";"),
            r.runtime_ms.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| invalid(e.to_string()))
}

/// One table per `(strategy, prevalence)`, best AUC and sensitivity in bold.
pub fn render_markdown(reports: &[ScenarioReport]) -> String {
    let mut groups: Vec<((StrategyKind, u64), Vec<&ScenarioReport>)> = Vec::new();
    for r in reports {
        let key = (r.scenario.strategy, r.scenario.prevalence.to_bits());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut out = String::from("# Benchmark results\n");
    for ((strategy, bits), rows) in groups {
        let best = |f: fn(&ScenarioReport) -> Metric| {
            rows.iter()
                .filter(|r| r.status == CellStatus::Ok)
                .filter_map(|r| f(r).value())
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let best_auc = best(|r| r.auc);
        let best_sens = best(|r| r.sensitivity);
        let fmt = |m: Metric, top: f64| match m.value() {
            Some(v) if v == top => format!("**{v:.3}**"),
            Some(v) => format!("{v:.3}"),
            None => "-".to_owned(),
        };
        let _ = write!(
            out,
            "\n## {}, prevalence {}\n\n| n | model | PPV | sensitivity | F1 | AUC | status |\n|---:|---|---:|---:|---:|---:|---|\n",
            strategy.name(),
            f64::from_bits(bits)
        );
        for r in rows {
            let (state, detail) = status_text(&r.status);
            let status = if detail.is_empty() { state.to_owned() } else { format!("{state}: {detail}") };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} |",
                r.scenario.sample_size,
                r.scenario.model,
                fmt(r.ppv, f64::NAN),
                fmt(r.sensitivity, best_sens),
                fmt(r.f1, f64::NAN),
                fmt(r.auc, best_auc),
                status.replace('|', "/"),
            );
        }
    }
    out
}

pub fn render_json(config: &ScenarioConfig, reports: &[ScenarioReport]) -> Result<String> {
    let out = BenchOutput {
        config: config.clone(),
        reports: reports.to_vec(),
    };
    Ok(serde_json::to_string_pretty(&out)?)
}

/// Writes `report.<ext>` into `out_dir` and returns its path.
pub fn emit_report(
    config: &ScenarioConfig,
    reports: &[ScenarioReport],
    format: ReportFormat,
    out_dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    if reports.is_empty() {
        return Err(invalid("no reports to write"));
    }
    let text = match format {
        ReportFormat::Csv => render_csv(reports)?,
        ReportFormat::Markdown => render_markdown(reports),
        ReportFormat::Json => render_json(config, reports)?,
    };
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("report.{}", format.extension()));
    std::fs::write(&path, text)?;
    Ok(path)
}
