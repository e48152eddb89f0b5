//! Experiment orchestration: repeated 90/10 evaluation over hyperparameter
//! grids, summary statistics, paired t-tests, pseudo-identity diagnostics
//! and modality attribution.
//!
//! Seeds are derived from the master seed with [`seeds::derive`]:
//!
//! | stream        | counters            | used for                     |
//! |---------------|---------------------|------------------------------|
//! | `Split`       | (repetition, redraw)| train/test partition         |
//! | `Layer`       | (repetition, L)     | hidden-layer weights         |
//! | `RandomPrune` | (repetition, L)     | RP-ELM subset                |
//!
//! The model kind never enters a seed, so ELM, RES-ELM and RP-ELM share
//! splits and hidden layers, and results do not depend on which grid points
//! or models are evaluated alongside.
//!
//! Normalisation statistics are fitted on each training split only. Reported
//! accuracies are test accuracies per grid point, and the "best" point is
//! picked on them as well; there is no separate validation split, so best
//! scores are optimistic.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataio::{self, Block, Dataset, Normalizer, SplitSpec};
use crate::elm::{self, Activation, ElmModel, HiddenLayer};
use crate::exec::{self, Mode};
use crate::linalg::{self, TruncationPolicy};
use crate::pruning::{self, PruneResult};
use crate::seeds::{self, Stream};
use crate::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// Redraws allowed when a training split lacks a class.
pub const MAX_REDRAWS: u64 = 10;

pub const FULL_RIDGE_GRID: [f64; 8] = [1e-8, 1e-4, 1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3];

pub const FULL_EPSILON_GRID: [f64; 11] = [
    1e-16, 1e-15, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10, 5e-10, 1e-9, 5e-9, 1e-8,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelKind {
    #[serde(alias = "elm")]
    Elm,
    #[serde(alias = "res-elm")]
    ResElm,
    #[serde(alias = "rp-elm")]
    RpElm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Elm => "ELM",
            ModelKind::ResElm => "RES_ELM",
            ModelKind::RpElm => "RP_ELM",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "elm" => Ok(ModelKind::Elm),
            "res-elm" => Ok(ModelKind::ResElm),
            "rp-elm" => Ok(ModelKind::RpElm),
            _ => Err(Error::InvalidArgument(format!(
                "unknown model '{s}' (expected elm, res-elm or rp-elm)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Grids and repetition settings. Missing JSON fields take the defaults.
///
/// The default neuron grid is a small CI profile; [`ExperimentConfig::full_grid`]
/// gives the full grids (300–2000 neurons, S_p 1–30).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Row label in accuracy tables.
    pub dataset: String,
    pub models: Vec<ModelKind>,
    pub activation: Activation,
    pub neurons: Vec<usize>,
    /// Percent of the neuron pool kept; ignored by plain ELM.
    pub sparsity: Vec<u32>,
    pub ridge: Vec<f64>,
    /// Truncation thresholds; only RES-ELM uses them.
    pub epsilon: Vec<f64>,
    pub repetitions: usize,
    pub master_seed: u64,
    pub train_fraction: f64,
    /// Scheduling only; never affects results, so it is not serialised.
    #[serde(skip_serializing)]
    pub mode: Mode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "dataset".into(),
            models: vec![ModelKind::Elm, ModelKind::ResElm, ModelKind::RpElm],
            activation: Activation::Sigmoid,
            neurons: vec![100, 200, 300],
            sparsity: vec![5, 10, 20, 30],
            ridge: FULL_RIDGE_GRID.to_vec(),
            epsilon: FULL_EPSILON_GRID.to_vec(),
            repetitions: 50,
            master_seed: 0,
            train_fraction: 0.9,
            mode: Mode::default(),
        }
    }
}

impl ExperimentConfig {
    /// Full grids: 300..=2000 neurons in steps of 25 and S_p 1..=30.
    pub fn full_grid() -> Self {
        Self {
            neurons: (300..=2000).step_by(25).collect(),
            sparsity: (1..=30).collect(),
            ..Self::default()
        }
    }

    /// Validated copy with every grid sorted ascending and deduplicated, so
    /// results do not depend on how the grids were listed.
    pub fn canonical(&self) -> Result<Self> {
        let mut c = self.clone();
        c.models.sort_unstable();
        c.models.dedup();
        c.neurons.sort_unstable();
        c.neurons.dedup();
        c.sparsity.sort_unstable();
        c.sparsity.dedup();
        for grid in [&mut c.ridge, &mut c.epsilon] {
            grid.sort_by(f64::total_cmp);
            grid.dedup();
        }
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if c.models.is_empty() {
            return bad("model list is empty");
        }
        if c.neurons.is_empty() || c.neurons[0] == 0 {
            return bad("neuron grid must be non-empty with entries >= 1");
        }
        if c.ridge.is_empty() || c.ridge.iter().any(|z| !(z.is_finite() && *z >= 0.0)) {
            return bad("ridge grid must be non-empty with finite entries >= 0");
        }
        let sparse = c.models.iter().any(|&m| m != ModelKind::Elm);
        if sparse && (c.sparsity.is_empty() || c.sparsity.iter().any(|s| !(1..=100).contains(s))) {
            return bad("sparsity grid must be non-empty with entries in 1..=100");
        }
        if c.models.contains(&ModelKind::ResElm) {
            if c.epsilon.is_empty() {
                return bad("epsilon grid is empty");
            }
            for &e in &c.epsilon {
                TruncationPolicy::new(e)?;
            }
        }
        if c.repetitions == 0 {
            return bad("repetitions must be >= 1");
        }
        if !(c.train_fraction > 0.0 && c.train_fraction < 1.0) {
            return bad("train fraction must be in (0, 1)");
        }
        Ok(c)
    }

    /// Every evaluated (model, point) pair, sorted by model, neurons,
    /// sparsity, epsilon, ridge.
    pub fn grid_points(&self) -> Vec<(ModelKind, GridPoint)> {
        let mut out = Vec::new();
        for &model in &self.models {
            for &neurons in &self.neurons {
                let sparsity: Vec<Option<u32>> = match model {
                    ModelKind::Elm => vec![None],
                    _ => self.sparsity.iter().map(|&s| Some(s)).collect(),
                };
                let epsilon: Vec<Option<f64>> = match model {
                    ModelKind::ResElm => self.epsilon.iter().map(|&e| Some(e)).collect(),
                    _ => vec![None],
                };
                for &s in &sparsity {
                    for &e in &epsilon {
                        for &ridge in &self.ridge {
                            out.push((
                                model,
                                GridPoint {
                                    neurons,
                                    sparsity: s,
                                    ridge,
                                    epsilon: e,
                                },
                            ));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    /// Size of the hidden-neuron pool `L`.
    pub neurons: usize,
    pub sparsity: Option<u32>,
    pub ridge: f64,
    pub epsilon: Option<f64>,
}

impl GridPoint {
    /// Neurons actually used by the output layer.
    pub fn used_neurons(&self) -> usize {
        match self.sparsity {
            Some(s) if s < 100 => pruning::target_size(self.neurons, s),
            _ => self.neurons,
        }
    }
}

/// Accuracy statistics for one model at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub model: ModelKind,
    pub point: GridPoint,
    pub used_neurons: usize,
    /// Test accuracy (%) per repetition, in repetition order.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 with a single repetition.
    pub std: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionInfo {
    pub index: usize,
    pub split_seed: u64,
    /// Splits rejected for lacking a class before this one.
    pub redraws: u64,
    pub train_size: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPoint {
    pub model: ModelKind,
    pub point: GridPoint,
    pub used_neurons: usize,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

/// Seconds spent per stage, summed over repetitions (so CPU time when run in
/// parallel), plus wall-clock for the whole run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub prepare: f64,
    pub design: f64,
    pub prune: f64,
    pub solve: f64,
    pub wall: f64,
}

impl StageTimings {
    fn add(&mut self, other: &StageTimings) {
        self.prepare += other.prepare;
        self.design += other.design;
        self.prune += other.prune;
        self.solve += other.solve;
    }
}

/// Everything a run produced. Timings are kept out of the JSON form so that
/// reports are byte-identical across runs; [`report_emit`] writes them to a
/// separate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    pub config: ExperimentConfig,
    pub repetitions: Vec<RepetitionInfo>,
    pub results: Vec<PointResult>,
    pub best: Vec<BestPoint>,
    #[serde(skip)]
    pub timings: StageTimings,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: MetricsReport = serde_json::from_str(text)?;
        if report.version != REPORT_VERSION {
            return Err(Error::InvalidInput(format!(
                "report version {} is not supported (expected {REPORT_VERSION})",
                report.version
            )));
        }
        Ok(report)
    }

    pub fn best_for(&self, model: ModelKind) -> Option<&BestPoint> {
        self.best.iter().find(|b| b.model == model)
    }

    pub fn result(&self, model: ModelKind, point: &GridPoint) -> Option<&PointResult> {
        self.results.iter().find(|r| r.model == model && &r.point == point)
    }
}

/// Mean, sample standard deviation and maximum.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, std, max)
}

struct PreparedSplit {
    info: RepetitionInfo,
    train: DMatrix<f64>,
    test: DMatrix<f64>,
    train_labels: Vec<usize>,
    test_labels: Vec<usize>,
}

fn draw_split(dataset: &Dataset, rep: usize, config: &ExperimentConfig) -> Result<(Dataset, Dataset, RepetitionInfo)> {
    for redraw in 0..=MAX_REDRAWS {
        let seed = seeds::derive(config.master_seed, Stream::Split, rep as u64, redraw);
        let spec = SplitSpec {
            train_fraction: config.train_fraction,
            seed,
        };
        let (train, test) = dataio::split(dataset, &spec)?;
        if train.has_both_classes() {
            let info = RepetitionInfo {
                index: rep,
                split_seed: seed,
                redraws: redraw,
                train_size: train.len(),
                test_size: test.len(),
            };
            return Ok((train, test, info));
        }
        log::warn!("repetition {rep}: training split {redraw} has a single class, redrawing");
    }
    Err(Error::ClassCollapse(format!(
        "repetition {rep}: every one of {} training splits had a single class",
        MAX_REDRAWS + 1
    )))
}

fn prepare(dataset: &Dataset, rep: usize, config: &ExperimentConfig) -> Result<PreparedSplit> {
    let (train, test, info) = draw_split(dataset, rep, config)?;
    let norm = dataio::normalize(train.features(), test.features())?;
    Ok(PreparedSplit {
        info,
        train: norm.train,
        test: norm.test,
        train_labels: train.labels().to_vec(),
        test_labels: test.labels().to_vec(),
    })
}

/// Test accuracy of one repetition at every grid point, in `points` order.
fn run_repetition(
    split: &PreparedSplit,
    config: &ExperimentConfig,
    points: &[(ModelKind, GridPoint)],
    timings: &mut StageTimings,
) -> Result<Vec<f64>> {
    let rep = split.info.index as u64;
    let mode = config.mode;
    let p = split.train.ncols();
    let targets = elm::one_hot(&split.train_labels, 2)?;
    let mut acc = vec![f64::NAN; points.len()];

    for &l in &config.neurons {
        let start = Instant::now();
        let layer_seed = seeds::derive(config.master_seed, Stream::Layer, rep, l as u64);
        let layer = HiddenLayer::generate(p, l, config.activation, layer_seed)?;
        let all: Vec<usize> = (0..l).collect();
        let h_train = elm::design_matrix_columns(&split.train, &layer, &all, mode)?;
        let h_test = elm::design_matrix_columns(&split.test, &layer, &all, mode)?;
        timings.design += start.elapsed().as_secs_f64();

        let start = Instant::now();
        let partial: Vec<u32> = config.sparsity.iter().copied().filter(|&s| s < 100).collect();
        let greedy_target = partial.iter().map(|&s| pruning::target_size(l, s)).max();
        let mut greedy: HashMap<u64, PruneResult> = HashMap::new();
        if config.models.contains(&ModelKind::ResElm) {
            if let Some(target) = greedy_target {
                for &e in &config.epsilon {
                    let policy = TruncationPolicy::new(e)?;
                    greedy.insert(e.to_bits(), pruning::greedy_select(&h_train, target, &policy, mode)?);
                }
            }
        }
        let rp_seed = seeds::derive(config.master_seed, Stream::RandomPrune, rep, l as u64);
        timings.prune += start.elapsed().as_secs_f64();

        let start = Instant::now();
        for (idx, (model, point)) in points.iter().enumerate() {
            if point.neurons != l {
                continue;
            }
            let selected: Vec<usize> = match (model, point.sparsity) {
                (ModelKind::Elm, _) | (_, Some(100)) | (_, None) => all.clone(),
                (ModelKind::RpElm, Some(s)) => pruning::rp_elm_prune(l, s, rp_seed)?.selected().to_vec(),
                (ModelKind::ResElm, Some(s)) => {
                    let e = point.epsilon.expect("RES-ELM points carry epsilon");
                    greedy[&e.to_bits()].selected()[..pruning::target_size(l, s)].to_vec()
                }
            };
            let h_sp = h_train.select_columns(selected.iter());
            let b = elm::solve_output_weights(&h_sp, &targets, point.ridge)?;
            let scores = h_test.select_columns(selected.iter()) * b;
            acc[idx] = elm::accuracy(&elm::argmax_rows(&scores), &split.test_labels);
        }
        timings.solve += start.elapsed().as_secs_f64();
    }
    Ok(acc)
}

/// Runs every repetition at every grid point of `config`.
///
/// Repetitions are evaluated with `config.mode`; aggregation is in grid and
/// repetition order, so sequential and parallel runs give identical reports.
pub fn run_experiment(dataset: &Dataset, config: &ExperimentConfig) -> Result<MetricsReport> {
    let wall = Instant::now();
    let config = config.canonical()?;
    let points = config.grid_points();

    let start = Instant::now();
    let splits = (0..config.repetitions)
        .map(|rep| prepare(dataset, rep, &config))
        .collect::<Result<Vec<_>>>()?;
    let mut timings = StageTimings {
        prepare: start.elapsed().as_secs_f64(),
        ..StageTimings::default()
    };

    let outcomes = exec::map_range(config.mode, splits.len(), |r| {
        let mut t = StageTimings::default();
        run_repetition(&splits[r], &config, &points, &mut t).map(|acc| (acc, t))
    });
    let mut per_rep = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let (acc, t) = outcome?;
        timings.add(&t);
        per_rep.push(acc);
    }

    let results: Vec<PointResult> = points
        .iter()
        .enumerate()
        .map(|(idx, (model, point))| {
            let accuracies: Vec<f64> = per_rep.iter().map(|acc| acc[idx]).collect();
            let (mean, std, max) = summarize(&accuracies);
            PointResult {
                model: *model,
                point: *point,
                used_neurons: point.used_neurons(),
                accuracies,
                mean,
                std,
                max,
            }
        })
        .collect();
    let best = select_best(&results);
    timings.wall = wall.elapsed().as_secs_f64();

    let report = MetricsReport {
        version: REPORT_VERSION,
        config,
        repetitions: splits.into_iter().map(|s| s.info).collect(),
        results,
        best,
        timings,
    };
    if log::log_enabled!(log::Level::Debug) {
        for line in repetition_log_lines(&report)? {
            log::debug!(target: "reselm::harness::repetition", "{line}");
        }
    }
    Ok(report)
}

/// Highest mean accuracy per model. Ties go to fewer used neurons, then
/// smaller ridge, then smaller pool, sparsity and epsilon.
pub fn select_best(results: &[PointResult]) -> Vec<BestPoint> {
    let mut models: Vec<ModelKind> = results.iter().map(|r| r.model).collect();
    models.sort_unstable();
    models.dedup();
    models
        .into_iter()
        .filter_map(|model| {
            results
                .iter()
                .filter(|r| r.model == model)
                .min_by(|a, b| {
                    b.mean
                        .total_cmp(&a.mean)
                        .then(a.used_neurons.cmp(&b.used_neurons))
                        .then(a.point.ridge.total_cmp(&b.point.ridge))
                        .then(a.point.neurons.cmp(&b.point.neurons))
                        .then(a.point.sparsity.cmp(&b.point.sparsity))
                        .then(cmp_opt(a.point.epsilon, b.point.epsilon))
                })
                .map(|r| BestPoint {
                    model,
                    point: r.point,
                    used_neurons: r.used_neurons,
                    mean: r.mean,
                    std: r.std,
                    max: r.max,
                })
        })
        .collect()
}

fn cmp_opt(a: Option<f64>, b: Option<f64>) -> std::cmp::Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        _ => a.is_some().cmp(&b.is_some()),
    }
}

/// Exhaustive grid search: the best point per model by mean test accuracy.
pub fn sweep(dataset: &Dataset, config: &ExperimentConfig) -> Result<Vec<BestPoint>> {
    Ok(run_experiment(dataset, config)?.best)
}

/// One JSON object per repetition with its split and every grid-point
/// accuracy, for external plotting.
pub fn repetition_log_lines(report: &MetricsReport) -> Result<Vec<String>> {
    #[derive(Serialize)]
    struct Entry<'a> {
        model: ModelKind,
        point: &'a GridPoint,
        accuracy: f64,
    }
    #[derive(Serialize)]
    struct Line<'a> {
        repetition: usize,
        split_seed: u64,
        redraws: u64,
        results: Vec<Entry<'a>>,
    }
    report
        .repetitions
        .iter()
        .enumerate()
        .map(|(r, info)| {
            let line = Line {
                repetition: info.index,
                split_seed: info.split_seed,
                redraws: info.redraws,
                results: report
                    .results
                    .iter()
                    .map(|p| Entry {
                        model: p.model,
                        point: &p.point,
                        accuracy: p.accuracies[r],
                    })
                    .collect(),
            };
            Ok(serde_json::to_string(&line)?)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub mean_difference: f64,
    /// Two-sided critical value `t_{1 − α/2, df}`.
    pub critical: f64,
    pub reject: bool,
}

/// Two-sided paired t-test of `a − b`.
///
/// Differences with zero spread are decided without the statistic: all zero
/// never rejects, a constant nonzero shift always does (`t = ±∞`).
pub fn paired_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("paired t-test needs at least 2 pairs".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd, _) = summarize(&d);
    let df = d.len() - 1;
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let critical = dist.inverse_cdf(1.0 - alpha / 2.0);
    let (t, reject) = if sd == 0.0 {
        if mean == 0.0 {
            (0.0, false)
        } else {
            (mean.signum() * f64::INFINITY, true)
        }
    } else {
        let t = mean / (sd / (d.len() as f64).sqrt());
        (t, t.abs() > critical)
    };
    Ok(TTest {
        t,
        df,
        mean_difference: mean,
        critical,
        reject,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (rx.iter().sum::<f64>() / rx.len() as f64, ry.iter().sum::<f64>() / ry.len() as f64);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub neurons: usize,
    /// `Σ|Î − I|`.
    pub abs_deviation: f64,
    /// `Σ|Î − I| / L`.
    pub relative_deviation: f64,
    pub residual_error: f64,
    pub retained_rank: usize,
}

/// Curve data for pseudo-identity deviation versus pool size.
///
/// Features are normalised with their own statistics. One layer of
/// `max(neurons)` neurons is drawn from `seed` and each grid point uses its
/// first `L` neurons, so the curve follows a single growing network.
pub fn residual_diagnostics(
    dataset: &Dataset,
    neurons: &[usize],
    activation: Activation,
    policy: &TruncationPolicy,
    seed: u64,
    mode: Mode,
) -> Result<Vec<DiagnosticRecord>> {
    let Some(&l_max) = neurons.iter().max() else {
        return Err(Error::InvalidArgument("neuron grid is empty".into()));
    };
    if neurons.contains(&0) {
        return Err(Error::InvalidArgument("neuron grid entries must be >= 1".into()));
    }
    let x = Normalizer::fit(dataset.features())?.apply(dataset.features())?;
    let layer_seed = seeds::derive(seed, Stream::Layer, 0, l_max as u64);
    let layer = HiddenLayer::generate(x.ncols(), l_max, activation, layer_seed)?;
    let all: Vec<usize> = (0..l_max).collect();
    let h = elm::design_matrix_columns(&x, &layer, &all, mode)?;
    exec::map_range(mode, neurons.len(), |i| {
        let l = neurons[i];
        let sub = h.columns(0, l).clone_owned();
        let pi = linalg::pseudo_identity(&sub, policy)?;
        Ok(DiagnosticRecord {
            neurons: l,
            abs_deviation: pi.abs_deviation(),
            relative_deviation: pi.relative_deviation(),
            residual_error: linalg::residual_error(&sub, policy)?,
            retained_rank: pi.matrix().trace().round() as usize,
        })
    })
    .into_iter()
    .collect()
}

/// Residual error and relative pseudo-identity deviation of one design
/// matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub residual_error: f64,
    pub relative_deviation: f64,
}

impl ResidualSummary {
    pub fn of(h: &DMatrix<f64>, policy: &TruncationPolicy) -> Result<Self> {
        Ok(Self {
            residual_error: linalg::residual_error(h, policy)?,
            relative_deviation: linalg::pseudo_identity(h, policy)?.relative_deviation(),
        })
    }
}

/// Before/after pruning comparison for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningComparison {
    pub trial: usize,
    pub retained: usize,
    pub full: ResidualSummary,
    pub res_elm: ResidualSummary,
    pub random: ResidualSummary,
}

/// For each trial, draws a layer of `neurons` neurons on the normalised
/// dataset and compares the full design matrix with its RES-ELM and RP-ELM
/// submatrices at the same retained size. Pruning and measurement share
/// `policy`.
pub fn pruning_residuals(
    dataset: &Dataset,
    neurons: usize,
    sparsity_percent: u32,
    activation: Activation,
    policy: &TruncationPolicy,
    trials: usize,
    seed: u64,
    mode: Mode,
) -> Result<Vec<PruningComparison>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let x = Normalizer::fit(dataset.features())?.apply(dataset.features())?;
    let all: Vec<usize> = (0..neurons).collect();
    exec::map_range(mode, trials, |t| {
        let layer_seed = seeds::derive(seed, Stream::Layer, t as u64, neurons as u64);
        let layer = HiddenLayer::generate(x.ncols(), neurons, activation, layer_seed)?;
        let h = elm::design_matrix_columns(&x, &layer, &all, Mode::Sequential)?;
        let greedy = pruning::res_elm_prune_with(&h, sparsity_percent, policy, Mode::Sequential)?;
        let rp_seed = seeds::derive(seed, Stream::RandomPrune, t as u64, neurons as u64);
        let random = pruning::rp_elm_prune(neurons, sparsity_percent, rp_seed)?;
        Ok(PruningComparison {
            trial: t,
            retained: greedy.len(),
            full: ResidualSummary::of(&h, policy)?,
            res_elm: ResidualSummary::of(&greedy.sparse_design(&h), policy)?,
            random: ResidualSummary::of(&random.sparse_design(&h), policy)?,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityShare {
    pub name: String,
    pub fraction: f64,
}

/// Share of importance per modality. Each retained neuron spreads one unit
/// over the blocks in proportion to the L1 mass of its input weights inside
/// each block; the units are averaged over neurons.
pub fn modality_attribution(model: &ElmModel, blocks: &[Block]) -> Result<Vec<ModalityShare>> {
    if model.selected().is_empty() {
        return Err(Error::InvalidState("model retains no neurons".into()));
    }
    let p = model.layer().features();
    let mut cursor = 0;
    for b in blocks {
        if b.start != cursor || b.end <= b.start {
            return Err(Error::InvalidInput(format!("block '{}' breaks the column partition", b.name)));
        }
        cursor = b.end;
    }
    if cursor != p {
        return Err(Error::InvalidInput(format!("blocks cover {cursor} of {p} input features")));
    }
    let weights = model.layer().weights();
    let mut totals = vec![0.0; blocks.len()];
    for &i in model.selected() {
        let row = weights.row(i);
        let mass: Vec<f64> = blocks
            .iter()
            .map(|b| row.columns(b.start, b.width()).iter().map(|v| v.abs()).sum())
            .collect();
        let sum: f64 = mass.iter().sum();
        for (t, (m, b)) in totals.iter_mut().zip(mass.iter().zip(blocks)) {
            // an all-zero weight row carries no signal about any block
            *t += if sum > 0.0 { m / sum } else { b.width() as f64 / p as f64 };
        }
    }
    let n = model.selected().len() as f64;
    Ok(blocks
        .iter()
        .zip(totals)
        .map(|(b, t)| ModalityShare {
            name: b.name.clone(),
            fraction: t / n,
        })
        .collect())
}

/// Tables-style accuracy CSV: one row per report (dataset), an `Avg` and
/// `Std` column per model of the first report, taken at each model's best
/// grid point.
pub fn accuracy_table(reports: &[MetricsReport]) -> Result<String> {
    let Some(first) = reports.first() else {
        return Err(Error::InvalidArgument("no reports to tabulate".into()));
    };
    let models = &first.config.models;
    let mut out = String::from("dataset");
    for m in models {
        let _ = write!(out, ",{m}_avg,{m}_std");
    }
    out.push('\n');
    for r in reports {
        if &r.config.models != models {
            return Err(Error::InvalidArgument(format!(
                "report for '{}' has a different model list",
                r.config.dataset
            )));
        }
        out.push_str(&csv_field(&r.config.dataset));
        for &m in models {
            let b = r.best_for(m).expect("every configured model has a best point");
            let _ = write!(out, ",{:.4},{:.4}", b.mean, b.std);
        }
        out.push('\n');
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Files written by [`report_emit`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub report: PathBuf,
    pub table: PathBuf,
    pub repetitions: PathBuf,
    pub timings: PathBuf,
}

/// Writes `path` (JSON report) and, next to it, `<stem>.csv` (accuracy
/// table), `<stem>.jsonl` (one line per repetition) and
/// `<stem>.timings.json`.
pub fn report_emit(report: &MetricsReport, path: &Path) -> Result<EmittedFiles> {
    let files = EmittedFiles {
        report: path.to_path_buf(),
        table: path.with_extension("csv"),
        repetitions: path.with_extension("jsonl"),
        timings: path.with_extension("timings.json"),
    };
    let write = |p: &Path, text: String| std::fs::write(p, text).map_err(|e| Error::io(p, e));
    write(&files.report, report.to_json()?)?;
    write(&files.table, accuracy_table(std::slice::from_ref(report))?)?;
    let mut lines = repetition_log_lines(report)?.join("\n");
    lines.push('\n');
    write(&files.repetitions, lines)?;
    write(&files.timings, serde_json::to_string_pretty(&report.timings)? + "\n")?;
    Ok(files)
}

pub fn load_report(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MetricsReport::from_json(&text)
}
