//! Randomised property suites behind `reselm verify`.
//!
//! * Column-append monotonicity: growing a sigmoid design matrix one neuron
//!   at a time never lowers its residual error.
//! * Interlacing: the eigenvalues of `HᵀH` before and after appending a
//!   column alternate, `γ₁ ≥ μ₁ ≥ γ₂ ≥ … ≥ μ_L ≥ γ_{L+1}`. Checked
//!   non-strictly (repeated eigenvalues and zero columns give equalities)
//!   against nalgebra's symmetric eigensolver, independent of the crate's SVD.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::elm::{self, Activation, HiddenLayer};
use crate::exec::{self, Mode};
use crate::linalg::{self, TruncationPolicy};
use crate::pruning;
use crate::seeds::{self, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityConfig {
    pub trials: usize,
    /// Instances `N`.
    pub rows: usize,
    /// First and last pool size; every size in between is checked.
    pub start: usize,
    pub end: usize,
    /// Input features of the random data behind each design matrix.
    pub features: usize,
    /// `ε` is this quantile of the final matrix's singular values.
    pub epsilon_quantile: f64,
    /// Allowed decrease `E(H_{L−1}) − E(H_L)`.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for MonotonicityConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            rows: 40,
            start: 5,
            end: 60,
            features: 20,
            epsilon_quantile: 0.25,
            tolerance: 1e-9,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub trials: usize,
    pub steps: usize,
    pub violations: usize,
    /// Largest observed `E(H_{L−1}) − E(H_L)`; negative when every step
    /// strictly increased.
    pub worst_drop: f64,
    /// Steps where the error stayed exactly equal.
    pub equal_steps: usize,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Singular value at quantile `q` of the ascending spectrum (lower nearest
/// rank).
pub fn quantile_singular_value(h: &DMatrix<f64>, q: f64) -> Result<f64> {
    let mut values = linalg::svd(h)?.singular_values;
    values.reverse();
    let idx = ((values.len() - 1) as f64 * q).floor() as usize;
    Ok(values[idx])
}

struct TrialOutcome {
    steps: usize,
    violations: usize,
    equal: usize,
    worst_drop: f64,
}

fn monotonicity_trial(config: &MonotonicityConfig, t: usize) -> Result<TrialOutcome> {
    let seed = seeds::derive(config.seed, Stream::Trial, t as u64, 0);
    let mut rng = seeds::rng(seed);
    let x = DMatrix::from_fn(config.rows, config.features, |_, _| rng.random_range(-1.0..1.0));
    let layer = HiddenLayer::generate(config.features, config.end, Activation::Sigmoid, rng.random())?;
    let h = elm::design_matrix_columns(&x, &layer, &(0..config.end).collect::<Vec<_>>(), Mode::Sequential)?;
    let eps = quantile_singular_value(&h, config.epsilon_quantile)?;
    let errors = pruning::lemma1_report(&h, &TruncationPolicy::new(eps)?)?;
    let mut out = TrialOutcome {
        steps: 0,
        violations: 0,
        equal: 0,
        worst_drop: f64::NEG_INFINITY,
    };
    for l in config.start..config.end {
        // errors[k] belongs to the first k + 1 columns
        let (before, after) = (errors[l - 1], errors[l]);
        out.steps += 1;
        let drop = before - after;
        out.worst_drop = out.worst_drop.max(drop);
        if after < before - config.tolerance {
            out.violations += 1;
            log::warn!("trial {t}: E fell from {before} to {after} at L = {}", l + 1);
        }
        if after == before {
            out.equal += 1;
        }
    }
    Ok(out)
}

/// Grows `trials` random sigmoid design matrices from `start` to `end`
/// columns and counts steps where the residual error decreased.
pub fn verify_monotonicity(config: &MonotonicityConfig, mode: Mode) -> Result<MonotonicityReport> {
    if config.trials == 0 || config.rows == 0 || config.features == 0 {
        return Err(Error::InvalidArgument("trials, rows and features must be >= 1".into()));
    }
    if !(1..config.end).contains(&config.start) {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= start < end, got {}..{}",
            config.start, config.end
        )));
    }
    if !(0.0..=1.0).contains(&config.epsilon_quantile) {
        return Err(Error::InvalidArgument("epsilon quantile must be in [0, 1]".into()));
    }
    let outcomes = exec::map_range(mode, config.trials, |t| monotonicity_trial(config, t));
    let mut report = MonotonicityReport {
        trials: config.trials,
        steps: 0,
        violations: 0,
        worst_drop: f64::NEG_INFINITY,
        equal_steps: 0,
    };
    for o in outcomes {
        let o = o?;
        report.steps += o.steps;
        report.violations += o.violations;
        report.equal_steps += o.equal;
        report.worst_drop = report.worst_drop.max(o.worst_drop);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterlacingConfig {
    pub trials: usize,
    pub rows: usize,
    /// Columns before the append.
    pub cols: usize,
    /// Slack relative to the largest eigenvalue of the grown matrix.
    pub relative_tolerance: f64,
    pub seed: u64,
}

impl Default for InterlacingConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            rows: 20,
            cols: 10,
            relative_tolerance: 1e-8,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterlacingReport {
    pub trials: usize,
    /// Inequalities checked, including the fixed edge cases.
    pub comparisons: usize,
    pub violations: usize,
    /// Smallest scaled slack `(larger − smaller) / γ₁` over all checks.
    pub worst_margin: f64,
}

impl InterlacingReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Eigenvalues of `MᵀM`, descending.
pub fn gram_spectrum(m: &DMatrix<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = SymmetricEigen::new(m.tr_mul(m)).eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

/// Checks `γ_i ≥ μ_i ≥ γ_{i+1}` for every `i`; returns (checks, violations,
/// worst scaled margin).
pub fn check_interlacing(mu: &[f64], gamma: &[f64], relative_tolerance: f64) -> (usize, usize, f64) {
    assert_eq!(gamma.len(), mu.len() + 1, "grown spectrum must have one more value");
    let scale = gamma.iter().chain(mu).fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut checks = 0;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for (i, &m) in mu.iter().enumerate() {
        for (hi, lo) in [(gamma[i], m), (m, gamma[i + 1])] {
            checks += 1;
            let margin = (hi - lo) / scale;
            worst = worst.min(margin);
            if margin < -relative_tolerance {
                violations += 1;
            }
        }
    }
    (checks, violations, worst)
}

/// Spectra of `HᵀH` and `[H h]ᵀ[H h]`.
pub fn append_spectra(h: &DMatrix<f64>, column: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut grown = h.clone().insert_column(h.ncols(), 0.0);
    grown.column_mut(h.ncols()).copy_from_slice(column);
    (gram_spectrum(h), gram_spectrum(&grown))
}

/// Random Gaussian `H` and `h` per trial, plus two fixed cases: appending a
/// zero column and the 1×1 base case.
pub fn verify_interlacing(config: &InterlacingConfig, mode: Mode) -> Result<InterlacingReport> {
    if config.trials == 0 || config.rows == 0 || config.cols == 0 {
        return Err(Error::InvalidArgument("trials, rows and cols must be >= 1".into()));
    }
    let tol = config.relative_tolerance;
    let results = exec::map_range(mode, config.trials, |t| {
        let mut rng = seeds::rng(seeds::derive(config.seed, Stream::Trial, t as u64, 1));
        let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
        let h = DMatrix::from_fn(config.rows, config.cols, |_, _| gauss());
        let col: Vec<f64> = (0..config.rows).map(|_| gauss()).collect();
        let (mu, gamma) = append_spectra(&h, &col);
        check_interlacing(&mu, &gamma, tol)
    });

    let mut edge = Vec::new();
    let mut rng = seeds::rng(seeds::derive(config.seed, Stream::Trial, u64::MAX, 1));
    let h = DMatrix::from_fn(config.rows, config.cols, |_, _| rng.random_range(-1.0..1.0));
    let (mu, gamma) = append_spectra(&h, &vec![0.0; config.rows]);
    edge.push(check_interlacing(&mu, &gamma, tol));
    let base = DMatrix::from_element(1, 1, rng.random_range(0.5..2.0));
    let (mu, gamma) = append_spectra(&base, &[rng.random_range(-2.0..2.0)]);
    edge.push(check_interlacing(&mu, &gamma, tol));

    let mut report = InterlacingReport {
        trials: config.trials,
        comparisons: 0,
        violations: 0,
        worst_margin: f64::INFINITY,
    };
    for (checks, violations, worst) in results.into_iter().chain(edge) {
        report.comparisons += checks;
        report.violations += violations;
        report.worst_margin = report.worst_margin.min(worst);
    }
    Ok(report)
}
