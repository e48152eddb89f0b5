//! Dense kernels behind pseudo-identity ranking.
//!
//! Everything here is a pure function of its inputs.

mod qr;
mod svd;

pub(crate) use qr::ColumnQr;
pub(crate) use svd::{check_finite, from_qr, thin_svd, ThinSvd};
#[cfg(test)]
pub(crate) use svd::factor_columns;
pub use svd::{svd, SvdFactors};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_NUMERIC_FLOOR: f64 = 1e-12;

/// Which singular values the pseudoinverse keeps.
///
/// Values `δ > epsilon` are inverted; the rest are zeroed. Values at or below
/// `numeric_floor` count as exact zeros in [`residual_error`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    epsilon: f64,
    numeric_floor: f64,
}

impl TruncationPolicy {
    /// Threshold `epsilon` with the default floor, lowered to `epsilon` when
    /// `epsilon` is smaller than the default floor.
    pub fn new(epsilon: f64) -> Result<Self> {
        let floor = if epsilon > 0.0 {
            DEFAULT_NUMERIC_FLOOR.min(epsilon)
        } else {
            DEFAULT_NUMERIC_FLOOR
        };
        Self::with_floor(epsilon, floor)
    }

    pub fn with_floor(epsilon: f64, numeric_floor: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        if !(numeric_floor.is_finite() && numeric_floor > 0.0) {
            return Err(Error::InvalidArgument(format!("numeric floor must be > 0, got {numeric_floor}")));
        }
        if epsilon > 0.0 && numeric_floor > epsilon {
            return Err(Error::InvalidArgument(format!(
                "numeric floor {numeric_floor} exceeds epsilon {epsilon}"
            )));
        }
        Ok(Self { epsilon, numeric_floor })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn numeric_floor(&self) -> f64 {
        self.numeric_floor
    }

    pub fn keeps(&self, singular_value: f64) -> bool {
        singular_value > self.epsilon
    }
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            numeric_floor: DEFAULT_NUMERIC_FLOOR,
        }
    }
}

/// `H†H`, an orthogonal projector onto the retained right singular subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoIdentity {
    matrix: DMatrix<f64>,
}

impl PseudoIdentity {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `Σ |Î − I|` over all entries.
    pub fn abs_deviation(&self) -> f64 {
        let l = self.dim();
        let mut total = 0.0;
        for j in 0..l {
            for i in 0..l {
                let target = if i == j { 1.0 } else { 0.0 };
                total += (self.matrix[(i, j)] - target).abs();
            }
        }
        total
    }

    /// `Σ |Î − I| / sum(I)` with `sum(I) = L`.
    pub fn relative_deviation(&self) -> f64 {
        self.abs_deviation() / self.dim() as f64
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.matrix
    }
}

/// `Q · R† · Pᵀ` with singular values `δ ≤ ε` zeroed.
pub fn truncated_pinv(h: &DMatrix<f64>, policy: &TruncationPolicy) -> Result<DMatrix<f64>> {
    let thin = thin_svd(h, true)?;
    let left = thin.left.as_ref().expect("requested");
    let mut out = DMatrix::zeros(h.ncols(), h.nrows());
    for (k, &s) in thin.values.iter().enumerate() {
        if !policy.keeps(s) {
            continue;
        }
        // rank-one update v_k u_kᵀ / δ_k
        out.ger(1.0 / s, &thin.right.column(k), &left.column(k), 1.0);
    }
    Ok(out)
}

/// `Î = H†H`, formed as `Σ_{δ_k > ε} q_k q_kᵀ`. When every one of the `L`
/// singular values is retained the product is exactly the identity.
pub fn pseudo_identity(h: &DMatrix<f64>, policy: &TruncationPolicy) -> Result<PseudoIdentity> {
    let thin = thin_svd(h, false)?;
    Ok(pseudo_identity_from(&thin, h.ncols(), policy))
}

pub(crate) fn pseudo_identity_from(thin: &ThinSvd, l: usize, policy: &TruncationPolicy) -> PseudoIdentity {
    let kept = retained(thin, policy);
    if kept == l {
        return PseudoIdentity {
            matrix: DMatrix::identity(l, l),
        };
    }
    let basis = thin.right.columns(0, kept);
    PseudoIdentity {
        matrix: &basis * basis.transpose(),
    }
}

/// Number of leading singular values above `ε` (values are sorted).
pub(crate) fn retained(thin: &ThinSvd, policy: &TruncationPolicy) -> usize {
    thin.values.iter().take_while(|&&s| policy.keeps(s)).count()
}

/// Residual error `E(H) = Σ_{δ_k ≤ ε} 1 / max(δ_k, floor)` over the full
/// spectrum of `HᵀH`: the `min(N, L)` singular values plus `L − N` exact
/// zeros when `L > N`.
pub fn residual_error(h: &DMatrix<f64>, policy: &TruncationPolicy) -> Result<f64> {
    let thin = thin_svd(h, false)?;
    Ok(residual_error_from_values(&thin.values, h.ncols(), policy))
}

pub(crate) fn residual_error_from_values(values: &[f64], l: usize, policy: &TruncationPolicy) -> f64 {
    let floor = policy.numeric_floor();
    let mut capped = l - values.len();
    let mut terms: Vec<f64> = Vec::new();
    for &s in values {
        if policy.keeps(s) {
            continue;
        }
        if s <= floor {
            capped += 1;
        } else {
            terms.push(1.0 / s);
        }
    }
    terms.sort_by(f64::total_cmp);
    let partial: f64 = terms.iter().sum();
    capped as f64 / floor + partial
}

/// `v_j = ‖Î_j − I_j‖₁ / L` for every column.
pub fn column_relative_errors(pseudo_id: &PseudoIdentity) -> Vec<f64> {
    let l = pseudo_id.dim();
    (0..l).map(|j| column_error(pseudo_id.matrix.column(j).iter().copied(), j, l)).collect()
}

pub(crate) fn column_error(column: impl Iterator<Item = f64>, j: usize, l: usize) -> f64 {
    let total: f64 = column
        .enumerate()
        .map(|(i, v)| if i == j { (v - 1.0).abs() } else { v.abs() })
        .sum();
    total / l as f64
}

/// Score of the last column of `[selected | candidate]`, where `qr` factors
/// the selected prefix. Agrees with
/// `column_relative_errors(pseudo_identity(..)).last()` on the assembled
/// matrix.
#[cfg(test)]
pub(crate) fn candidate_score(qr: &ColumnQr, candidate: &[f64], policy: &TruncationPolicy) -> f64 {
    candidate_score_bounded(qr, None, candidate, policy)
}

/// Facts about a selected prefix that let [`candidate_score_bounded`] skip
/// the SVD of candidates that provably keep every singular value.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PrefixBound {
    /// Smallest singular value of the prefix, `+∞` when it is empty.
    sigma_min: f64,
    sigma_max: f64,
}

/// `Some` when the prefix is tall and keeps all of its singular values.
pub(crate) fn prefix_bound(qr: &ColumnQr, policy: &TruncationPolicy) -> Option<PrefixBound> {
    if qr.cols() >= qr.rows() {
        return None;
    }
    if qr.cols() == 0 {
        return Some(PrefixBound {
            sigma_min: f64::INFINITY,
            sigma_max: 0.0,
        });
    }
    let thin = from_qr(qr, None, false);
    let kept = retained(&thin, policy);
    (kept == qr.cols()).then(|| PrefixBound {
        sigma_min: *thin.values.last().expect("non-empty"),
        sigma_max: thin.values[0],
    })
}

/// With the prefix `R` square and invertible, the appended factor is
/// `R' = [R r; 0 ρ]` and `‖R'⁻¹‖ ≤ 1/σ_min(R) + √(‖R⁻¹r‖² + 1)/|ρ|`. When the
/// resulting lower bound on `σ_min(R')` clears `ε` with margin, the candidate
/// keeps every singular value and scores exactly zero.
pub(crate) fn candidate_score_bounded(
    qr: &ColumnQr,
    bound: Option<PrefixBound>,
    candidate: &[f64],
    policy: &TruncationPolicy,
) -> f64 {
    let pending = qr.transform(candidate);
    if let Some(b) = bound {
        let k = qr.cols();
        let r = pending.r();
        let rho = r[k].abs();
        if rho > 0.0 {
            let y = back_substitute(qr, &r[..k]);
            let y2: f64 = y.iter().map(|v| v * v).sum();
            let inverse_norm = 1.0 / b.sigma_min + (y2 + 1.0).sqrt() / rho;
            let lower = 1.0 / inverse_norm;
            let scale = b.sigma_max.max(r.iter().map(|v| v * v).sum::<f64>().sqrt());
            if lower > policy.epsilon() * (1.0 + 1e-6) + 1e-12 * scale {
                return 0.0;
            }
        }
    }
    let thin = from_qr(qr, Some(&pending), false);
    let l = qr.cols() + 1;
    let kept = retained(&thin, policy);
    if kept == l {
        return 0.0;
    }
    let j = l - 1;
    let basis = thin.right.columns(0, kept);
    let row_j = basis.row(j);
    let column = (0..l).map(|i| basis.row(i).dot(&row_j));
    column_error(column, j, l)
}

/// Solves `R y = b` for the square upper-triangular prefix factor.
fn back_substitute(qr: &ColumnQr, b: &[f64]) -> Vec<f64> {
    let k = b.len();
    let mut y = b.to_vec();
    for i in (0..k).rev() {
        y[i] /= qr.r_column(i)[i];
        let yi = y[i];
        for (t, &rv) in y[..i].iter_mut().zip(qr.r_column(i)) {
            *t -= rv * yi;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::seeds::rng(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn policy_validation() {
        assert!(TruncationPolicy::new(-1.0).is_err());
        assert!(TruncationPolicy::new(f64::NAN).is_err());
        assert!(TruncationPolicy::with_floor(1e-3, 0.0).is_err());
        assert!(TruncationPolicy::with_floor(1e-6, 1e-3).is_err());
        let p = TruncationPolicy::new(1e-16).unwrap();
        assert_eq!(p.numeric_floor(), 1e-16);
        let p = TruncationPolicy::new(0.0).unwrap();
        assert_eq!(p.numeric_floor(), DEFAULT_NUMERIC_FLOOR);
        assert_eq!(TruncationPolicy::default().epsilon(), 1e-8);
    }

    #[test]
    fn pinv_identity() {
        let p = TruncationPolicy::new(1e-10).unwrap();
        let inv = truncated_pinv(&DMatrix::identity(3, 3), &p).unwrap();
        assert!(max_abs(&(inv - DMatrix::identity(3, 3))) < 1e-15);
    }

    #[test]
    fn pinv_zeroes_small_singular_values() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1e-12]);
        let p = TruncationPolicy::new(1e-6).unwrap();
        let inv = truncated_pinv(&h, &p).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]);
        assert!(max_abs(&(inv - expected)) < 1e-15);
    }

    #[test]
    fn penrose_conditions_rectangular() {
        let p = TruncationPolicy::new(0.0).unwrap();
        for (seed, (r, c)) in [(5, 8), (8, 5), (3, 3)].into_iter().enumerate() {
            let h = random(r, c, seed as u64 + 40);
            let pinv = truncated_pinv(&h, &p).unwrap();
            assert!(max_abs(&(&h * &pinv * &h - &h)) < 1e-9);
            assert!(max_abs(&(&pinv * &h * &pinv - &pinv)) < 1e-9);
            let hp = &h * &pinv;
            let ph = &pinv * &h;
            assert!(max_abs(&(&hp - hp.transpose())) < 1e-9);
            assert!(max_abs(&(&ph - ph.transpose())) < 1e-9);
        }
    }

    #[test]
    fn pseudo_identity_cases() {
        let p = TruncationPolicy::new(0.5).unwrap();
        let pi = pseudo_identity(&DMatrix::identity(4, 4), &p).unwrap();
        assert_eq!(pi.matrix(), &DMatrix::identity(4, 4));

        let h = random(10, 4, 2);
        let pi = pseudo_identity(&h, &TruncationPolicy::default()).unwrap();
        assert!(max_abs(&(pi.matrix() - DMatrix::identity(4, 4))) < 1e-8);
    }

    #[test]
    fn pseudo_identity_projector_and_trace() {
        let h = random(6, 11, 8);
        let thin = thin_svd(&h, false).unwrap();
        let eps = thin.values[3] * 0.999;
        let p = TruncationPolicy::new(eps).unwrap();
        let pi = pseudo_identity(&h, &p).unwrap();
        let m = pi.matrix();
        assert!(max_abs(&(m - m.transpose())) < 1e-9);
        assert!(max_abs(&(m * m - m)) < 1e-6);
        assert!((m.trace() - 4.0).abs() < 1e-6);
    }

    #[test]
    fn pseudo_identity_matches_pinv_product() {
        let h = random(7, 12, 21);
        let p = TruncationPolicy::new(1e-8).unwrap();
        let product = truncated_pinv(&h, &p).unwrap() * &h;
        let pi = pseudo_identity(&h, &p).unwrap();
        assert!(max_abs(&(product - pi.matrix())) < 1e-10);
    }

    #[test]
    fn pseudo_identity_deviation_grows_past_row_count() {
        let p = TruncationPolicy::default();
        let mut last = 0.0;
        for l in [12, 20, 30, 45] {
            let pi = pseudo_identity(&random(10, l, 77), &p).unwrap();
            let dev = pi.abs_deviation();
            assert!(dev > 0.0);
            assert!(dev > last, "{dev} <= {last} at L={l}");
            last = dev;
        }
    }

    #[test]
    fn residual_error_examples() {
        let p = TruncationPolicy::new(0.5).unwrap();
        let h = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 1.0]));
        assert_eq!(residual_error(&h, &p).unwrap(), 0.0);

        let p = TruncationPolicy::with_floor(0.1, 1e-12).unwrap();
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.01]);
        assert!((residual_error(&h, &p).unwrap() - 100.0).abs() < 1e-9);

        let p = TruncationPolicy::new(0.5).unwrap();
        let one = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let two = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(residual_error(&one, &p).unwrap(), 0.0);
        assert_eq!(residual_error(&two, &p).unwrap(), 0.0);
    }

    #[test]
    fn residual_error_counts_padding_zeros() {
        // 1×3: one singular value, two structural zeros.
        let h = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let p = TruncationPolicy::new(0.1).unwrap();
        assert_eq!(residual_error(&h, &p).unwrap(), 2.0 / DEFAULT_NUMERIC_FLOOR);
    }

    #[test]
    fn residual_error_non_decreasing_in_epsilon() {
        let h = random(8, 8, 5);
        let values = thin_svd(&h, false).unwrap().values;
        let mut last = 0.0;
        for k in 0..60 {
            let eps = 1e-4 * 1.25f64.powi(k);
            let e = residual_error_from_values(&values, 8, &TruncationPolicy::new(eps).unwrap());
            assert!(e >= last);
            last = e;
        }
    }

    #[test]
    fn column_errors_examples() {
        let pi = PseudoIdentity {
            matrix: DMatrix::identity(4, 4),
        };
        assert_eq!(column_relative_errors(&pi), vec![0.0; 4]);

        let mut m = DMatrix::identity(4, 4);
        m[(0, 0)] = 0.9;
        m[(1, 0)] = 0.1;
        let v = column_relative_errors(&PseudoIdentity { matrix: m });
        assert!((v[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn column_errors_sum_to_total_deviation() {
        let h = random(5, 9, 3);
        let pi = pseudo_identity(&h, &TruncationPolicy::default()).unwrap();
        let v = column_relative_errors(&pi);
        let lhs: f64 = v.iter().sum::<f64>() * 9.0;
        assert!((lhs - pi.abs_deviation()).abs() < 1e-12);
    }

    #[test]
    fn column_errors_follow_permutation() {
        let h = random(4, 6, 13);
        let pi = pseudo_identity(&h, &TruncationPolicy::default()).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let m = pi.matrix();
        let permuted = DMatrix::from_fn(6, 6, |i, j| m[(perm[i], perm[j])]);
        let v = column_relative_errors(&pi);
        let w = column_relative_errors(&PseudoIdentity { matrix: permuted });
        for j in 0..6 {
            assert!((w[j] - v[perm[j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn candidate_score_agrees_with_full_path() {
        let h = random(6, 9, 17);
        let thin = thin_svd(&h, false).unwrap();
        let p = TruncationPolicy::new(thin.values[4]).unwrap();
        let prefix = h.columns(0, 8).clone_owned();
        let qr = factor_columns(&prefix);
        let fast = candidate_score(&qr, h.column(8).as_slice(), &p);
        let slow = *column_relative_errors(&pseudo_identity(&h, &p).unwrap()).last().unwrap();
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }

    #[test]
    fn bounded_score_matches_unbounded() {
        let h = random(12, 9, 23);
        let values = thin_svd(&h, false).unwrap().values;
        for eps in [1e-8, values[5], values[7], 0.5 * values[8], 0.0] {
            let p = TruncationPolicy::new(eps).unwrap();
            for k in 0..8 {
                let prefix = h.columns(0, k).clone_owned();
                let qr = factor_columns(&prefix);
                let bound = prefix_bound(&qr, &p);
                for j in k..9 {
                    let col = h.column(j).clone_owned();
                    let a = candidate_score(&qr, col.as_slice(), &p);
                    let b = candidate_score_bounded(&qr, bound, col.as_slice(), &p);
                    assert_eq!(a, b, "eps {eps}, prefix {k}, candidate {j}");
                }
            }
        }
    }

    #[test]
    fn back_substitution_inverts_r() {
        let h = random(7, 4, 29);
        let qr = factor_columns(&h);
        let b = [0.3, -1.2, 2.0, 0.7];
        let y = back_substitute(&qr, &b);
        for i in 0..4 {
            let lhs: f64 = (i..4).map(|j| qr.r_column(j)[i] * y[j]).sum();
            assert!((lhs - b[i]).abs() < 1e-12);
        }
    }
}
