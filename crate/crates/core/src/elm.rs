//! Conventional extreme learning machine: random hidden layer, design
//! matrix, ridge output weights and argmax prediction.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{self, Mode};
use crate::linalg::{self, TruncationPolicy};
use crate::{seeds, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `1 / (1 + exp(-(a·x + b)))`
    Sigmoid,
    /// `exp(-b ‖x - a‖²)`
    Rbf,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Rbf => "rbf",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Activation::Sigmoid),
            "rbf" => Ok(Activation::Rbf),
            other => Err(Error::InvalidArgument(format!("unknown activation '{other}'"))),
        }
    }
}

/// Random input weights (one row per neuron) and biases.
///
/// Weights are uniform on `[-1, 1]`. Sigmoid biases are uniform on `[-1, 1]`;
/// RBF widths are uniform on `(0, 1]` so the kernel stays bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    weights: DMatrix<f64>,
    biases: DVector<f64>,
    activation: Activation,
    seed: u64,
}

impl HiddenLayer {
    pub fn generate(features: usize, neurons: usize, activation: Activation, seed: u64) -> Result<Self> {
        if features == 0 || neurons == 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden layer needs p >= 1 and L >= 1, got p={features}, L={neurons}"
            )));
        }
        let mut rng = seeds::rng(seed);
        let mut weights = DMatrix::zeros(neurons, features);
        for i in 0..neurons {
            for j in 0..features {
                weights[(i, j)] = rng.random_range(-1.0..=1.0);
            }
        }
        let biases = DVector::from_fn(neurons, |_, _| match activation {
            Activation::Sigmoid => rng.random_range(-1.0..=1.0),
            Activation::Rbf => 1.0 - rng.random::<f64>(),
        });
        Ok(Self {
            weights,
            biases,
            activation,
            seed,
        })
    }

    /// `L × p`, one row `aᵢ` per neuron.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &DVector<f64> {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn neurons(&self) -> usize {
        self.weights.nrows()
    }

    pub fn features(&self) -> usize {
        self.weights.ncols()
    }
}

pub fn init_hidden_layer(features: usize, neurons: usize, activation: Activation, seed: u64) -> Result<HiddenLayer> {
    HiddenLayer::generate(features, neurons, activation, seed)
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// `H[j][i] = K(aᵢ, bᵢ, xⱼ)` for all neurons.
pub fn design_matrix(x: &DMatrix<f64>, layer: &HiddenLayer) -> Result<DMatrix<f64>> {
    let all: Vec<usize> = (0..layer.neurons()).collect();
    design_matrix_columns(x, layer, &all, Mode::default())
}

/// Design matrix restricted to `neurons`, in the given order.
pub fn design_matrix_columns(
    x: &DMatrix<f64>,
    layer: &HiddenLayer,
    neurons: &[usize],
    mode: Mode,
) -> Result<DMatrix<f64>> {
    if x.ncols() != layer.features() {
        return Err(Error::InvalidArgument(format!(
            "feature matrix has {} columns, layer expects {}",
            x.ncols(),
            layer.features()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("feature matrix has non-finite entries".into()));
    }
    if let Some(&bad) = neurons.iter().find(|&&i| i >= layer.neurons()) {
        return Err(Error::InvalidArgument(format!(
            "neuron index {bad} out of range for {} neurons",
            layer.neurons()
        )));
    }
    let n = x.nrows();
    let columns = exec::map_range(mode, neurons.len(), |c| {
        let i = neurons[c];
        let a = layer.weights.row(i);
        let b = layer.biases[i];
        (0..n)
            .map(|j| {
                let xj = x.row(j);
                match layer.activation {
                    Activation::Sigmoid => sigmoid(a.dot(&xj) + b),
                    Activation::Rbf => {
                        let d2: f64 = xj.iter().zip(a.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
                        (-b * d2).exp()
                    }
                }
            })
            .collect::<Vec<f64>>()
    });
    let mut h = DMatrix::zeros(n, neurons.len());
    for (c, col) in columns.into_iter().enumerate() {
        h.column_mut(c).copy_from_slice(&col);
    }
    Ok(h)
}

/// One-hot targets, rows indexed by instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    matrix: DMatrix<f64>,
}

impl TargetMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn classes(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Labels are 1-based class ids in `1..=classes`.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<TargetMatrix> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
    }
    let mut matrix = DMatrix::zeros(labels.len(), classes);
    for (j, &label) in labels.iter().enumerate() {
        if label == 0 || label > classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} at row {j} outside 1..={classes}"
            )));
        }
        matrix[(j, label - 1)] = 1.0;
    }
    Ok(TargetMatrix { matrix })
}

/// Per-row argmax as a 1-based class id; ties go to the lower class.
pub fn argmax_rows(scores: &DMatrix<f64>) -> Vec<usize> {
    scores
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best + 1
        })
        .collect()
}

/// Minimiser of `‖H B − T‖²_F + z‖B‖²_F`.
///
/// Uses a Cholesky solve of the `l × l` normal equations, or of the `N × N`
/// dual system `H (HᵀH + zI)⁻¹ = (HHᵀ + zI)⁻¹ H` when `l > N`. A singular or
/// numerically unusable system falls back to the SVD: the ridge filter
/// `δ / (δ² + z)` for `z > 0` and the truncated pseudoinverse with the
/// default policy for `z = 0`.
pub fn solve_output_weights(h_sp: &DMatrix<f64>, targets: &TargetMatrix, ridge: f64) -> Result<DMatrix<f64>> {
    let t = targets.matrix();
    if h_sp.nrows() != t.nrows() {
        return Err(Error::InvalidArgument(format!(
            "design matrix has {} rows, targets {}",
            h_sp.nrows(),
            t.nrows()
        )));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    linalg::check_finite(h_sp)?;
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("targets have non-finite entries".into()));
    }

    let (n, l) = h_sp.shape();
    let primal = l <= n;
    let mut gram = if primal {
        h_sp.tr_mul(h_sp)
    } else {
        h_sp * h_sp.transpose()
    };
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    if let Some(chol) = gram.cholesky() {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        let well_posed = lo > 0.0 && (lo / hi).powi(2) > 1e3 * f64::EPSILON;
        if ridge > 0.0 || well_posed {
            let b = if primal {
                chol.solve(&h_sp.tr_mul(t))
            } else {
                h_sp.tr_mul(&chol.solve(t))
            };
            if b.iter().all(|v| v.is_finite()) {
                return Ok(b);
            }
        }
    }
    log::debug!("output solve falling back to SVD (ridge {ridge}, {n}x{l})");
    svd_ridge(h_sp, t, ridge)
}

fn svd_ridge(h: &DMatrix<f64>, t: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if ridge == 0.0 {
        return Ok(linalg::truncated_pinv(h, &TruncationPolicy::default())? * t);
    }
    let thin = linalg::thin_svd(h, true)?;
    let left = thin.left.as_ref().expect("requested");
    let mut b = DMatrix::zeros(h.ncols(), t.ncols());
    for (k, &s) in thin.values.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        let proj = t.tr_mul(&left.column(k)); // c × 1
        b.ger(s / (s * s + ridge), &thin.right.column(k), &proj, 1.0);
    }
    Ok(b)
}

/// A trained network: the full hidden layer, the retained neurons in
/// selection order and their output weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ElmModel {
    layer: HiddenLayer,
    selected: Vec<usize>,
    output_weights: DMatrix<f64>,
    ridge: f64,
}

impl ElmModel {
    pub fn new(layer: HiddenLayer, selected: Vec<usize>, output_weights: DMatrix<f64>, ridge: f64) -> Result<Self> {
        let mut seen = vec![false; layer.neurons()];
        for &i in &selected {
            if i >= layer.neurons() {
                return Err(Error::InvalidArgument(format!("selected neuron {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("selected neuron {i} repeated")));
            }
        }
        if output_weights.nrows() != selected.len() {
            return Err(Error::InvalidArgument(format!(
                "output weights have {} rows for {} selected neurons",
                output_weights.nrows(),
                selected.len()
            )));
        }
        if output_weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("output weights are not finite".into()));
        }
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
        }
        Ok(Self {
            layer,
            selected,
            output_weights,
            ridge,
        })
    }

    /// Solves the output weights on the given training data.
    pub fn fit(
        x: &DMatrix<f64>,
        labels: &[usize],
        classes: usize,
        layer: HiddenLayer,
        selected: Vec<usize>,
        ridge: f64,
    ) -> Result<Self> {
        let h_sp = design_matrix_columns(x, &layer, &selected, Mode::default())?;
        let targets = one_hot(labels, classes)?;
        let b = solve_output_weights(&h_sp, &targets, ridge)?;
        Self::new(layer, selected, b, ridge)
    }

    pub fn layer(&self) -> &HiddenLayer {
        &self.layer
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn output_weights(&self) -> &DMatrix<f64> {
        &self.output_weights
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn classes(&self) -> usize {
        self.output_weights.ncols()
    }

    /// `T̂ = H_sp · B`.
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let h_sp = design_matrix_columns(x, &self.layer, &self.selected, Mode::default())?;
        Ok(h_sp * &self.output_weights)
    }
}

pub fn predict(x: &DMatrix<f64>, model: &ElmModel) -> Result<Vec<usize>> {
    Ok(argmax_rows(&model.scores(x)?))
}

/// Percentage of matching labels.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(predicted.len(), truth.len());
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    100.0 * hits as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeds::rng(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn layer_is_deterministic_and_in_range() {
        let a = HiddenLayer::generate(3, 5, Activation::Sigmoid, 7).unwrap();
        let b = HiddenLayer::generate(3, 5, Activation::Sigmoid, 7).unwrap();
        assert_eq!(a, b);
        let values: Vec<f64> = a.weights().iter().chain(a.biases().iter()).copied().collect();
        assert_eq!(values.len(), 20);
        assert!(values.iter().all(|v| (-1.0..=1.0).contains(v)));

        let r = HiddenLayer::generate(3, 200, Activation::Rbf, 7).unwrap();
        assert!(r.biases().iter().all(|&w| w > 0.0 && w <= 1.0));
        assert!(r.weights().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn layer_weight_mean_near_zero() {
        let layer = HiddenLayer::generate(2, 10_000, Activation::Sigmoid, 1).unwrap();
        let mean = layer.weights().mean();
        assert!(mean.abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn layer_rejects_empty_shapes() {
        assert!(matches!(
            HiddenLayer::generate(0, 5, Activation::Sigmoid, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(HiddenLayer::generate(3, 0, Activation::Rbf, 1).is_err());
    }

    #[test]
    fn sigmoid_midpoint_and_rbf_peak() {
        let layer = HiddenLayer::generate(2, 1, Activation::Sigmoid, 3).unwrap();
        let a = layer.weights().row(0).clone_owned();
        let b = layer.biases()[0];
        // choose x with a·x = -b
        let x1 = 0.25;
        let x2 = (-b - a[0] * x1) / a[1];
        let x = DMatrix::from_row_slice(1, 2, &[x1, x2]);
        let h = design_matrix(&x, &layer).unwrap();
        assert!((h[(0, 0)] - 0.5).abs() < 1e-12);

        let rbf = HiddenLayer::generate(3, 1, Activation::Rbf, 3).unwrap();
        let x = DMatrix::from_row_slice(1, 3, rbf.weights().row(0).clone_owned().as_slice());
        assert_eq!(design_matrix(&x, &rbf).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn design_entries_in_unit_interval() {
        let x = random(4, 3, 2);
        for act in [Activation::Sigmoid, Activation::Rbf] {
            let layer = HiddenLayer::generate(3, 6, act, 9).unwrap();
            let h = design_matrix(&x, &layer).unwrap();
            assert_eq!(h.shape(), (4, 6));
            assert!(h.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn design_dimension_mismatch() {
        let layer = HiddenLayer::generate(3, 2, Activation::Sigmoid, 1).unwrap();
        assert!(matches!(
            design_matrix(&random(4, 2, 1), &layer),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn one_hot_examples() {
        let t = one_hot(&[1, 2, 1], 2).unwrap();
        assert_eq!(t.matrix(), &DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]));
        let t = one_hot(&[2], 2).unwrap();
        assert_eq!(t.matrix(), &DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        assert!(one_hot(&[3], 2).is_err());
        assert!(one_hot(&[0], 2).is_err());
    }

    proptest! {
        #[test]
        fn one_hot_argmax_round_trip(labels in proptest::collection::vec(1usize..=4, 1..40)) {
            let t = one_hot(&labels, 4).unwrap();
            prop_assert_eq!(argmax_rows(t.matrix()), labels);
        }

        #[test]
        fn argmax_invariant_under_positive_row_scaling(
            values in proptest::collection::vec(-5.0f64..5.0, 12),
            scales in proptest::collection::vec(0.01f64..100.0, 4),
        ) {
            let scores = DMatrix::from_row_slice(4, 3, &values);
            let mut scaled = scores.clone();
            for (r, s) in scales.iter().enumerate() {
                scaled.row_mut(r).scale_mut(*s);
            }
            prop_assert_eq!(argmax_rows(&scores), argmax_rows(&scaled));
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        let s = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.9, 0.1]);
        assert_eq!(argmax_rows(&s), vec![1, 1]);
    }

    #[test]
    fn identity_design_returns_targets() {
        let t = one_hot(&[1, 2, 2, 1], 2).unwrap();
        let b = solve_output_weights(&DMatrix::identity(4, 4), &t, 0.0).unwrap();
        assert!(max_abs(&(b - t.matrix())) < 1e-14);
    }

    /// Oracle: explicit inverse of the normal equations.
    fn normal_equations(h: &DMatrix<f64>, t: &DMatrix<f64>, z: f64) -> DMatrix<f64> {
        let g = h.transpose() * h + DMatrix::identity(h.ncols(), h.ncols()) * z;
        g.try_inverse().unwrap() * h.transpose() * t
    }

    #[test]
    fn ridge_matches_normal_equations() {
        let h = random(20, 5, 4);
        let labels: Vec<usize> = (0..20).map(|i| 1 + (i % 2)).collect();
        let t = one_hot(&labels, 2).unwrap();
        let b = solve_output_weights(&h, &t, 0.1).unwrap();
        assert!(max_abs(&(&b - normal_equations(&h, t.matrix(), 0.1))) < 1e-8);

        // first-order optimality
        let grad = h.transpose() * (&h * &b - t.matrix()) + &b * 0.1;
        assert!(max_abs(&grad) < 1e-7);
    }

    #[test]
    fn dual_form_matches_primal_oracle() {
        let h = random(8, 15, 6);
        let labels: Vec<usize> = (0..8).map(|i| 1 + (i % 2)).collect();
        let t = one_hot(&labels, 2).unwrap();
        let b = solve_output_weights(&h, &t, 0.3).unwrap();
        assert!(max_abs(&(&b - normal_equations(&h, t.matrix(), 0.3))) < 1e-8);
        let grad = h.transpose() * (&h * &b - t.matrix()) + &b * 0.3;
        assert!(max_abs(&grad) < 1e-7);
    }

    #[test]
    fn large_ridge_shrinks_weights() {
        let h = random(20, 5, 8).map(|v| v.abs());
        let labels: Vec<usize> = (0..20).map(|i| 1 + (i % 2)).collect();
        let t = one_hot(&labels, 2).unwrap();
        let b = solve_output_weights(&h, &t, 1e6).unwrap();
        // ‖(HᵀH + zI)⁻¹‖₂ ≤ 1/z, so every entry is bounded by ‖HᵀT‖_F / z
        let bound = (h.transpose() * t.matrix()).norm() / 1e6;
        assert!(max_abs(&b) <= bound + 1e-15);
        assert!(max_abs(&b) < 1e-3);
    }

    #[test]
    fn singular_unregularised_falls_back_to_pinv() {
        let mut h = random(10, 4, 12);
        let c = h.column(0).clone_owned();
        h.set_column(3, &c);
        let labels: Vec<usize> = (0..10).map(|i| 1 + (i % 2)).collect();
        let t = one_hot(&labels, 2).unwrap();
        let b = solve_output_weights(&h, &t, 0.0).unwrap();
        let expected = linalg::truncated_pinv(&h, &TruncationPolicy::default()).unwrap() * t.matrix();
        assert!(max_abs(&(b - expected)) < 1e-9);
    }

    #[test]
    fn solve_rejects_bad_inputs() {
        let t = one_hot(&[1, 2], 2).unwrap();
        let mut h = DMatrix::identity(2, 2);
        assert!(solve_output_weights(&h, &t, -1.0).is_err());
        h[(0, 1)] = f64::INFINITY;
        assert!(matches!(solve_output_weights(&h, &t, 0.1), Err(Error::InvalidInput(_))));
        assert!(solve_output_weights(&DMatrix::identity(3, 3), &t, 0.1).is_err());
    }

    #[test]
    fn predict_argmax_of_scores() {
        // B = I₂ with a hand-built layer output (0.9, 0.1) → class 1
        let scores = DMatrix::from_row_slice(1, 2, &[0.9, 0.1]) * DMatrix::<f64>::identity(2, 2);
        assert_eq!(argmax_rows(&scores), vec![1]);
    }

    #[test]
    fn interpolates_small_separable_set() {
        let mut rng = seeds::rng(5);
        let mut x = DMatrix::zeros(20, 2);
        let mut labels = Vec::new();
        for j in 0..20 {
            let class = 1 + j % 2;
            let centre = if class == 1 { -1.0 } else { 1.0 };
            x[(j, 0)] = centre + rng.random_range(-0.3..0.3);
            x[(j, 1)] = centre + rng.random_range(-0.3..0.3);
            labels.push(class);
        }
        let layer = HiddenLayer::generate(2, 40, Activation::Sigmoid, 11).unwrap();
        let model = ElmModel::fit(&x, &labels, 2, layer, (0..40).collect(), 1e-8).unwrap();
        let pred = predict(&x, &model).unwrap();
        assert_eq!(accuracy(&pred, &labels), 100.0);
    }

    #[test]
    fn model_validation() {
        let layer = HiddenLayer::generate(2, 3, Activation::Sigmoid, 1).unwrap();
        let b = DMatrix::zeros(2, 2);
        assert!(ElmModel::new(layer.clone(), vec![0, 0], b.clone(), 0.0).is_err());
        assert!(ElmModel::new(layer.clone(), vec![0, 3], b.clone(), 0.0).is_err());
        assert!(ElmModel::new(layer.clone(), vec![0], b.clone(), 0.0).is_err());
        assert!(ElmModel::new(layer, vec![2, 0], b, 0.0).is_ok());
    }
}
