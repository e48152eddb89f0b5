//! One-sided Jacobi SVD on a Householder-reduced matrix.
//!
//! `A = Q R` is computed column by column, then Hestenes rotations
//! orthogonalise the columns of `Rᵀ`. Singular values come out with high
//! relative accuracy, which matters here because the truncation threshold
//! sits among the smallest singular values.

use nalgebra::DMatrix;

use super::qr::{ColumnQr, PendingColumn};
use crate::{Error, Result};

const MAX_SWEEPS: usize = 100;
/// Entries with magnitude at or below this are ignored when fixing signs.
const SIGN_EPS: f64 = 1e-12;

/// Full factorisation `M = P · R · Qᵀ`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// `P`, `N × N` orthogonal.
    pub left_vectors: DMatrix<f64>,
    /// `δ₁ ≥ … ≥ δ_min(N,L) ≥ 0`.
    pub singular_values: Vec<f64>,
    /// `Q`, `L × L` orthogonal.
    pub right_vectors: DMatrix<f64>,
}

impl SvdFactors {
    /// `P · R · Qᵀ` with `R` the `N × L` diagonal of singular values.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let n = self.left_vectors.nrows();
        let l = self.right_vectors.nrows();
        let mut r = DMatrix::zeros(n, l);
        for (k, &s) in self.singular_values.iter().enumerate() {
            r[(k, k)] = s;
        }
        &self.left_vectors * r * self.right_vectors.transpose()
    }
}

/// Economy decomposition: `r = min(m, n)` singular triplets.
#[derive(Debug, Clone)]
pub(crate) struct ThinSvd {
    pub(crate) values: Vec<f64>,
    /// `n × r`; columns for exactly-zero singular values are zero.
    pub(crate) right: DMatrix<f64>,
    /// `m × r` when requested.
    pub(crate) left: Option<DMatrix<f64>>,
}

pub(crate) fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::InvalidInput(format!(
            "matrix must be non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % m.nrows(), pos / m.nrows());
        return Err(Error::InvalidInput(format!("non-finite entry at ({r}, {c})")));
    }
    Ok(())
}

pub(crate) fn factor_columns(m: &DMatrix<f64>) -> ColumnQr {
    let mut qr = ColumnQr::new(m.nrows());
    for col in m.column_iter() {
        qr.push_column(col.as_slice());
    }
    qr
}

pub(crate) fn thin_svd(m: &DMatrix<f64>, with_left: bool) -> Result<ThinSvd> {
    check_finite(m)?;
    let qr = factor_columns(m);
    Ok(from_qr(&qr, None, with_left))
}

/// SVD of the matrix factored in `qr`, optionally with one extra pending
/// column appended on the right. Left vectors are only available without an
/// extra column.
pub(crate) fn from_qr(qr: &ColumnQr, extra: Option<&PendingColumn>, with_left: bool) -> ThinSvd {
    assert!(!(with_left && extra.is_some()), "left vectors need a committed factorisation");
    let n = qr.cols() + usize::from(extra.is_some());
    let r = qr.rows().min(n);

    // W = Rᵀ, n × r, column-major.
    let mut w = vec![0.0; n * r];
    let mut put = |j: usize, col: &[f64]| {
        for (i, &v) in col.iter().enumerate().take(r) {
            w[i * n + j] = v;
        }
    };
    for j in 0..qr.cols() {
        put(j, qr.r_column(j));
    }
    if let Some(p) = extra {
        put(n - 1, p.r());
    }

    let mut rot = with_left.then(|| identity(r));
    hestenes(&mut w, n, r, rot.as_deref_mut());

    let norms: Vec<f64> = (0..r).map(|i| norm(&w[i * n..(i + 1) * n])).collect();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let mut values = Vec::with_capacity(r);
    let mut right = DMatrix::zeros(n, r);
    let mut left_block = vec![0.0; if with_left { r * r } else { 0 }];
    for (k, &src) in order.iter().enumerate() {
        let s = norms[src];
        values.push(s);
        let col = &w[src * n..(src + 1) * n];
        let mut sign = 1.0;
        if s > 0.0 {
            if let Some(first) = col.iter().map(|v| v / s).find(|v| v.abs() > SIGN_EPS) {
                if first < 0.0 {
                    sign = -1.0;
                }
            }
            for (i, v) in col.iter().enumerate() {
                right[(i, k)] = sign * v / s;
            }
        }
        if let Some(rot) = &rot {
            for i in 0..r {
                left_block[k * r + i] = sign * rot[src * r + i];
            }
        }
    }

    let left = with_left.then(|| {
        let data = qr.apply_q(&left_block, r, r);
        DMatrix::from_column_slice(qr.rows(), r, &data)
    });
    ThinSvd { values, right, left }
}

fn identity(r: usize) -> Vec<f64> {
    let mut m = vec![0.0; r * r];
    for i in 0..r {
        m[i * r + i] = 1.0;
    }
    m
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn two_columns(buf: &mut [f64], len: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (lo, hi) = buf.split_at_mut(q * len);
    (&mut lo[p * len..(p + 1) * len], &mut hi[..len])
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let t = *a;
        *a = c * t - s * *b;
        *b = s * t + c * *b;
    }
}

/// Orthogonalises the `cols` columns (each of length `len`) of `w` in place,
/// applying the same rotations to the `cols × cols` matrix `acc`.
fn hestenes(w: &mut [f64], len: usize, cols: usize, mut acc: Option<&mut [f64]>) {
    let tol = f64::EPSILON * (len as f64).sqrt();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (x, y) = two_columns(w, len, p, q);
                let alpha = dot(x, x);
                let beta = dot(y, y);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(x, y);
                if gamma.abs() <= tol * (alpha.sqrt() * beta.sqrt()) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(x, y, c, s);
                if let Some(acc) = acc.as_deref_mut() {
                    let (ax, ay) = two_columns(acc, cols, p, q);
                    rotate(ax, ay, c, s);
                }
            }
        }
        if !rotated {
            return;
        }
    }
    log::warn!("Jacobi SVD did not converge in {MAX_SWEEPS} sweeps ({len}x{cols})");
}

/// Full SVD with orthogonal `P` (`N × N`) and `Q` (`L × L`).
///
/// Each right singular vector is signed so that its first numerically
/// nonzero entry is positive; left vectors follow.
pub fn svd(m: &DMatrix<f64>) -> Result<SvdFactors> {
    let thin = thin_svd(m, true)?;
    let left = thin.left.expect("requested");
    Ok(SvdFactors {
        left_vectors: complete_basis(&left),
        singular_values: thin.values,
        right_vectors: complete_basis(&thin.right),
    })
}

/// Extends the nonzero orthonormal columns of `basis` to a full orthogonal
/// matrix, filling zero columns and the remainder from the standard basis.
fn complete_basis(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = basis.nrows();
    let mut out = DMatrix::zeros(dim, dim);
    let mut filled = vec![false; dim];
    let mut accepted: Vec<usize> = Vec::new();
    for k in 0..basis.ncols() {
        if basis.column(k).norm() > 0.5 {
            out.set_column(k, &basis.column(k));
            filled[k] = true;
            accepted.push(k);
        }
    }
    let mut unit = 0;
    for k in 0..dim {
        if filled[k] {
            continue;
        }
        loop {
            assert!(unit < dim, "standard basis exhausted while completing");
            let mut v = nalgebra::DVector::zeros(dim);
            v[unit] = 1.0;
            unit += 1;
            for _ in 0..2 {
                for &a in &accepted {
                    let proj = out.column(a).dot(&v);
                    v -= out.column(a) * proj;
                }
            }
            let nv = v.norm();
            if nv > 1e-6 {
                out.set_column(k, &(v / nv));
                accepted.push(k);
                break;
            }
        }
    }
    out
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

    fn check_factors(m: &DMatrix<f64>) {
        let f = svd(m).unwrap();
        let err = (f.reconstruct() - m).norm() / m.norm().max(1e-300);
        assert!(err < 1e-10, "reconstruction {err}");
        let p = &f.left_vectors;
        let q = &f.right_vectors;
        assert!(max_abs(&(p.transpose() * p - DMatrix::identity(p.ncols(), p.ncols()))) < 1e-10);
        assert!(max_abs(&(q.transpose() * q - DMatrix::identity(q.ncols(), q.ncols()))) < 1e-10);
        assert!(f.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(f.singular_values.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn identity_singular_values() {
        let f = svd(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(f.singular_values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_case() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0]);
        let f = svd(&m).unwrap();
        assert!((f.singular_values[0] - 3.0).abs() < 1e-15);
        assert!((f.singular_values[1] - 2.0).abs() < 1e-15);
        for k in 0..2 {
            assert!((f.right_vectors[(k, k)].abs() - 1.0).abs() < 1e-15);
            assert!((f.left_vectors[(k, k)].abs() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn random_shapes_reconstruct() {
        for (i, &(r, c)) in [(5, 8), (8, 5), (1, 4), (4, 1), (1, 1), (12, 12), (30, 7)]
            .iter()
            .enumerate()
        {
            check_factors(&random(r, c, i as u64));
        }
    }

    #[test]
    fn rank_deficient_and_zero() {
        let mut m = random(6, 4, 3);
        let c0 = m.column(0).clone_owned();
        m.set_column(2, &(c0 * 2.0));
        check_factors(&m);
        let f = svd(&m).unwrap();
        assert!(f.singular_values[3] < 1e-13);

        let z = DMatrix::zeros(3, 2);
        let f = svd(&z).unwrap();
        assert_eq!(f.singular_values, vec![0.0, 0.0]);
        assert!(max_abs(&(f.right_vectors.transpose() * &f.right_vectors - DMatrix::identity(2, 2))) < 1e-12);
    }

    #[test]
    fn sign_convention() {
        let f = svd(&random(7, 5, 11)).unwrap();
        for k in 0..5 {
            let first = f.right_vectors.column(k).iter().copied().find(|v| v.abs() > SIGN_EPS).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = DMatrix::zeros(2, 2);
        m[(1, 0)] = f64::NAN;
        assert!(matches!(svd(&m), Err(Error::InvalidInput(_))));
        assert!(svd(&DMatrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn matches_nalgebra_singular_values() {
        let m = random(9, 6, 5);
        let ours = svd(&m).unwrap().singular_values;
        let mut theirs: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in ours.iter().zip(&theirs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_singular_values_keep_relative_accuracy() {
        // diag(1, 1e-10, 1e-14) rotated by an orthogonal matrix.
        let q = svd(&random(3, 3, 9)).unwrap().left_vectors;
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1e-10, 1e-14]));
        let m = &q * d;
        let s = svd(&m).unwrap().singular_values;
        assert!((s[1] / 1e-10 - 1.0).abs() < 1e-4);
        assert!((s[2] / 1e-14 - 1.0).abs() < 1e-1);
    }
}
