use std::path::Path;

use log::info;
use serde::Serialize;

use reselm::dataio::{self, Dataset, ModalitySpec, Normalizer};
use reselm::elm::{self, Activation, ElmModel, HiddenLayer};
use reselm::exec::Mode;
use reselm::harness::{self, ExperimentConfig, ModelKind};
use reselm::linalg::{TruncationPolicy, DEFAULT_EPSILON};
use reselm::model_io::{self, SavedModel};
use reselm::pruning;
use reselm::seeds::{self, Stream};
use reselm::verify::{self, InterlacingConfig, MonotonicityConfig};
use reselm::{Error, Result};

use crate::args::*;

/// How a successful run ended.
pub enum Outcome {
    Success,
    /// `verify` found a counterexample.
    PropertyViolation,
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidArgument(format!("missing required --{flag}")))
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Pretty JSON to `out`, or stdout when `out` is `None`.
fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn merge_data(mut flags: DataArgs, file: DataFile) -> DataArgs {
    overlay!(flags <- file: features, labels, blocks);
    flags
}

fn load_data(data: &DataArgs) -> Result<Dataset> {
    let features = required(data.features.as_deref(), "features")?;
    let labels = required(data.labels.as_deref(), "labels")?;
    dataio::load_dataset(features, labels, data.blocks.as_deref())
}

fn parse_modality(s: &str) -> Result<ModalitySpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::InvalidArgument(format!("modality '{s}' is not NAME:WIDTH:INFORMATIVE"));
    if parts.len() != 3 || parts[0].is_empty() {
        return Err(bad());
    }
    Ok(ModalitySpec {
        name: parts[0].to_string(),
        width: parts[1].parse().map_err(|_| bad())?,
        informative: parts[2].parse().map_err(|_| bad())?,
    })
}

pub fn gen_synth(mut a: GenSynthArgs) -> Result<Outcome> {
    let file: GenSynthFile = load_config(a.cfg.config.as_deref())?;
    overlay!(a <- file: subjects, modalities, noise, separation, seed, out);
    let out = required(a.out, "out")?;
    let modalities = a
        .modalities
        .unwrap_or_else(|| vec!["synthetic:100:10".to_string()])
        .iter()
        .map(|s| parse_modality(s))
        .collect::<Result<Vec<_>>>()?;
    let (ds, informative) = dataio::gen_synthetic_with(
        a.subjects.unwrap_or(100),
        &modalities,
        a.noise.unwrap_or(1.0),
        a.separation.unwrap_or(1.0),
        a.seed.unwrap_or(0),
    )?;
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    dataio::save_dataset(
        &out.join("features.csv"),
        &out.join("labels.csv"),
        Some(&out.join("blocks.json")),
        &ds,
    )?;
    emit_json(&informative, Some(&out.join("informative.json")))?;
    println!(
        "wrote {} subjects x {} features to {}",
        ds.len(),
        ds.width(),
        out.display()
    );
    Ok(Outcome::Success)
}

pub fn fc(mut a: FcArgs) -> Result<Outcome> {
    let file: FcFile = load_config(a.cfg.config.as_deref())?;
    overlay!(a <- file: inputs, components, ages, z_cut, labels_out, out);
    let inputs = required(a.inputs, "input")?;
    let out = required(a.out, "out")?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no --input files".into()));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
    for path in &inputs {
        let tc = dataio::load_timecourses(path)?;
        let c = tc.components().nrows();
        if let Some(expected) = a.components {
            if c != expected {
                return Err(format_err(
                    path,
                    0,
                    format!("expected {expected} components, found {c}"),
                ));
            }
        }
        if let Some(first) = rows.first() {
            if first.len() != c * (c - 1) / 2 {
                return Err(format_err(path, 0, "component count differs from the first input"));
            }
        }
        rows.push(dataio::fc_from_timecourses(&tc));
    }
    let mut keep: Vec<usize> = (0..rows.len()).collect();
    if let Some(ages_path) = &a.ages {
        let ages = load_ages(ages_path)?;
        if ages.len() != rows.len() {
            return Err(format_err(
                ages_path,
                0,
                format!("{} ages for {} inputs", ages.len(), rows.len()),
            ));
        }
        let (kept, labels) = dataio::binarize_ages(&ages, a.z_cut.unwrap_or(1.0))?;
        let labels_out = required(a.labels_out.as_deref(), "labels-out")?;
        dataio::save_labels(labels_out, &labels)?;
        info!("kept {} of {} subjects after age binarisation", kept.len(), ages.len());
        keep = kept;
    }
    let width = rows[0].len();
    let x = reselm::DMatrix::from_fn(keep.len(), width, |i, j| rows[keep[i]][j]);
    dataio::save_features(&out, &x)?;
    println!("wrote {} rows x {} connectivity features to {}", x.nrows(), width, out.display());
    Ok(Outcome::Success)
}

/// Single-column CSV with header `age`.
fn load_ages(path: &Path) -> Result<Vec<f64>> {
    let x = dataio::load_features(path)?;
    if x.ncols() != 1 {
        return Err(format_err(path, 1, "ages file must have exactly one column"));
    }
    Ok(x.column(0).iter().copied().collect())
}

struct ModelChoice {
    kind: ModelKind,
    activation: Activation,
    neurons: usize,
    sparsity: u32,
    epsilon: f64,
    ridge: f64,
    seed: u64,
}

fn model_choice(mut m: ModelArgs, file: ModelFile) -> Result<ModelChoice> {
    overlay!(m <- file: model, activation, neurons, sp, epsilon, z, seed);
    let kind = m.model.unwrap_or(ModelKind::ResElm);
    let sparsity = match kind {
        ModelKind::Elm => 100,
        _ => m.sp.unwrap_or(10),
    };
    let choice = ModelChoice {
        kind,
        activation: m.activation.unwrap_or(Activation::Sigmoid),
        neurons: m.neurons.unwrap_or(300),
        sparsity,
        epsilon: m.epsilon.unwrap_or(DEFAULT_EPSILON),
        ridge: m.z.unwrap_or(1.0),
        seed: m.seed.unwrap_or(0),
    };
    if !(1..=100).contains(&choice.sparsity) {
        return Err(Error::InvalidArgument(format!("--sp must be in 1..=100, got {}", choice.sparsity)));
    }
    if !(choice.ridge.is_finite() && choice.ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("--z must be finite and >= 0, got {}", choice.ridge)));
    }
    TruncationPolicy::new(choice.epsilon)?;
    Ok(choice)
}

/// Layer plus retained neurons, on already-normalised features.
fn select_neurons(x: &reselm::DMatrix<f64>, c: &ModelChoice) -> Result<(HiddenLayer, pruning::PruneResult)> {
    let layer_seed = seeds::derive(c.seed, Stream::Layer, 0, c.neurons as u64);
    let layer = HiddenLayer::generate(x.ncols(), c.neurons, c.activation, layer_seed)?;
    let selection = match c.kind {
        ModelKind::Elm => pruning::rp_elm_prune(c.neurons, 100, 0)?,
        ModelKind::ResElm => {
            let h = elm::design_matrix(x, &layer)?;
            pruning::res_elm_prune(&h, c.sparsity, &TruncationPolicy::new(c.epsilon)?)?
        }
        ModelKind::RpElm => {
            let rp_seed = seeds::derive(c.seed, Stream::RandomPrune, 0, c.neurons as u64);
            pruning::rp_elm_prune(c.neurons, c.sparsity, rp_seed)?
        }
    };
    Ok((layer, selection))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model: ModelKind,
    neurons: usize,
    retained: usize,
    training_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    attribution: Option<Vec<harness::ModalityShare>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_file: Option<&'a Path>,
}

pub fn train(a: TrainArgs) -> Result<Outcome> {
    let file: TrainFile = load_config(a.cfg.config.as_deref())?;
    let data = merge_data(a.data, file.data);
    let choice = model_choice(a.model, file.model)?;
    let out = a.out.or(file.out);
    let ds = load_data(&data)?;
    let norm = Normalizer::fit(ds.features())?;
    let x = norm.apply(ds.features())?;
    let (layer, selection) = select_neurons(&x, &choice)?;
    let model = ElmModel::fit(&x, ds.labels(), 2, layer, selection.selected().to_vec(), choice.ridge)?;
    let training_accuracy = elm::accuracy(&elm::predict(&x, &model)?, ds.labels());
    let attribution = if data.blocks.is_some() {
        Some(harness::modality_attribution(&model, ds.blocks())?)
    } else {
        None
    };
    let summary = TrainSummary {
        model: choice.kind,
        neurons: choice.neurons,
        retained: model.selected().len(),
        training_accuracy,
        attribution,
        model_file: out.as_deref(),
    };
    if let Some(path) = &out {
        let saved = SavedModel {
            kind: choice.kind,
            model,
            normalization: Some(norm),
            sparsity: (choice.kind != ModelKind::Elm).then_some(choice.sparsity),
            epsilon: (choice.kind == ModelKind::ResElm).then_some(choice.epsilon),
        };
        model_io::save_model(path, &saved)?;
    }
    emit_json(&summary, None)?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct PruneOutput {
    model: ModelKind,
    neurons: usize,
    sparsity: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    selected: Vec<usize>,
    scores: Vec<f64>,
}

pub fn prune(a: PruneArgs) -> Result<Outcome> {
    let file: PruneFile = load_config(a.cfg.config.as_deref())?;
    let data = merge_data(a.data, file.data);
    let choice = model_choice(a.model, file.model)?;
    let out = a.out.or(file.out);
    let ds = load_data(&data)?;
    let x = Normalizer::fit(ds.features())?.apply(ds.features())?;
    let (_, selection) = select_neurons(&x, &choice)?;
    let output = PruneOutput {
        model: choice.kind,
        neurons: choice.neurons,
        sparsity: choice.sparsity,
        epsilon: (choice.kind == ModelKind::ResElm).then_some(choice.epsilon),
        selected: selection.selected().to_vec(),
        scores: selection.scores().to_vec(),
    };
    emit_json(&output, out.as_deref())?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct Evaluation {
    model: ModelKind,
    subjects: usize,
    accuracy: f64,
}

pub fn evaluate(a: EvaluateArgs) -> Result<Outcome> {
    let file: EvaluateFile = load_config(a.cfg.config.as_deref())?;
    let data = merge_data(a.data, file.data);
    let model_file = required(a.model_file.or(file.model_file), "model-file")?;
    let out = a.out.or(file.out);
    let saved = model_io::load_model(&model_file)?;
    let features_path = required(data.features.as_deref(), "features")?;
    let labels_path = required(data.labels.as_deref(), "labels")?;
    let x = dataio::load_features(features_path)?;
    let labels = dataio::load_labels(labels_path)?;
    if x.nrows() != labels.len() {
        return Err(format_err(
            labels_path,
            0,
            format!("{} labels for {} feature rows", labels.len(), x.nrows()),
        ));
    }
    if x.ncols() != saved.model.layer().features() {
        return Err(Error::InvalidInput(format!(
            "model expects {} features, data has {}",
            saved.model.layer().features(),
            x.ncols()
        )));
    }
    let predicted = saved.predict(&x)?;
    if let Some(path) = &out {
        dataio::save_labels(path, &predicted)?;
    }
    emit_json(
        &Evaluation {
            model: saved.kind,
            subjects: labels.len(),
            accuracy: elm::accuracy(&predicted, &labels),
        },
        None,
    )?;
    Ok(Outcome::Success)
}

fn read_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    report: &'a Path,
    table: &'a Path,
    best: &'a [harness::BestPoint],
}

pub fn sweep(a: SweepArgs) -> Result<Outcome> {
    let mut config = match &a.config {
        Some(p) => read_experiment_config(p)?,
        None if a.full_grid => ExperimentConfig::full_grid(),
        None => ExperimentConfig::default(),
    };
    if let Some(v) = a.models {
        config.models = v;
    }
    if let Some(v) = a.activation {
        config.activation = v;
    }
    if let Some(v) = a.neurons {
        config.neurons = v;
    }
    if let Some(v) = a.sp {
        config.sparsity = v;
    }
    if let Some(v) = a.epsilon {
        config.epsilon = v;
    }
    if let Some(v) = a.z {
        config.ridge = v;
    }
    if let Some(v) = a.reps {
        config.repetitions = v;
    }
    if let Some(v) = a.seed {
        config.master_seed = v;
    }
    if let Some(v) = a.name {
        config.dataset = v;
    }
    if a.sequential {
        config.mode = Mode::Sequential;
    }
    let out = required(a.out, "out")?;
    let ds = load_data(&a.data)?;
    let report = harness::run_experiment(&ds, &config)?;
    let files = harness::report_emit(&report, &out)?;
    info!("sweep finished in {:.2}s", report.timings.wall);
    emit_json(
        &SweepSummary {
            report: &files.report,
            table: &files.table,
            best: &report.best,
        },
        None,
    )?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct Diagnosis {
    epsilon: f64,
    curve: Vec<harness::DiagnosticRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pruning: Option<Vec<harness::PruningComparison>>,
}

pub fn diagnose(mut a: DiagnoseArgs) -> Result<Outcome> {
    let file: DiagnoseFile = load_config(a.cfg.config.as_deref())?;
    let data = merge_data(std::mem::take(&mut a.data), file.data);
    overlay!(a <- file: neurons, activation, epsilon, seed, sp, prune_neurons, trials, out);
    let ds = load_data(&data)?;
    let neurons = a.neurons.unwrap_or_else(|| (50..=500).step_by(50).collect());
    let activation = a.activation.unwrap_or(Activation::Sigmoid);
    let epsilon = a.epsilon.unwrap_or(DEFAULT_EPSILON);
    let policy = TruncationPolicy::new(epsilon)?;
    let seed = a.seed.unwrap_or(0);
    let curve = harness::residual_diagnostics(&ds, &neurons, activation, &policy, seed, Mode::default())?;
    let pruning = match a.sp {
        Some(sp) => {
            let pool = a
                .prune_neurons
                .or_else(|| neurons.iter().copied().max())
                .unwrap_or(1);
            Some(harness::pruning_residuals(
                &ds,
                pool,
                sp,
                activation,
                &policy,
                a.trials.unwrap_or(10),
                seed,
                Mode::default(),
            )?)
        }
        None => None,
    };
    emit_json(&Diagnosis { epsilon, curve, pruning }, a.out.as_deref())?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct VerifyOutput {
    monotonicity: verify::MonotonicityReport,
    interlacing: verify::InterlacingReport,
    passed: bool,
}

pub fn verify(mut a: VerifyArgs) -> Result<Outcome> {
    let file: VerifyFile = load_config(a.cfg.config.as_deref())?;
    overlay!(a <- file: trials, interlacing_trials, seed, out);
    let mut mono = MonotonicityConfig::default();
    let mut inter = InterlacingConfig::default();
    if let Some(t) = a.trials {
        mono.trials = t;
    }
    if let Some(t) = a.interlacing_trials {
        inter.trials = t;
    }
    if let Some(s) = a.seed {
        mono.seed = s;
        inter.seed = s;
    }
    let monotonicity = verify::verify_monotonicity(&mono, Mode::default())?;
    let interlacing = verify::verify_interlacing(&inter, Mode::default())?;
    let passed = monotonicity.passed() && interlacing.passed();
    eprintln!(
        "monotonicity: {} ({} violations in {} steps); interlacing: {} ({} violations in {} comparisons)",
        if monotonicity.passed() { "PASS" } else { "FAIL" },
        monotonicity.violations,
        monotonicity.steps,
        if interlacing.passed() { "PASS" } else { "FAIL" },
        interlacing.violations,
        interlacing.comparisons,
    );
    emit_json(
        &VerifyOutput {
            monotonicity,
            interlacing,
            passed,
        },
        a.out.as_deref(),
    )?;
    Ok(if passed { Outcome::Success } else { Outcome::PropertyViolation })
}
