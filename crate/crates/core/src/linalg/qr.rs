//! Column-incremental Householder QR.
//!
//! Columns are pushed one at a time. Transforming a column by the stored
//! reflectors and then appending it gives bitwise the same `R` as factoring
//! the whole matrix at once, which lets greedy pruning score a candidate
//! column against a fixed prefix without refactoring the prefix.

#[derive(Debug, Clone)]
struct Reflector {
    /// Rows `start..m` of the Householder vector.
    v: Vec<f64>,
    beta: f64,
    start: usize,
}

impl Reflector {
    fn apply(&self, x: &mut [f64]) {
        if self.beta == 0.0 {
            return;
        }
        let tail = &mut x[self.start..];
        let dot: f64 = self.v.iter().zip(tail.iter()).map(|(a, b)| a * b).sum();
        let scale = self.beta * dot;
        for (t, v) in tail.iter_mut().zip(&self.v) {
            *t -= scale * v;
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ColumnQr {
    rows: usize,
    reflectors: Vec<Reflector>,
    /// Column `j` of `R`, holding its first `min(rows, j + 1)` entries.
    r_columns: Vec<Vec<f64>>,
}

/// Result of transforming one column by the existing reflectors.
pub(crate) struct PendingColumn {
    r: Vec<f64>,
    reflector: Option<Reflector>,
}

impl PendingColumn {
    /// Entries of the would-be `R` column.
    pub(crate) fn r(&self) -> &[f64] {
        &self.r
    }
}

impl ColumnQr {
    pub(crate) fn new(rows: usize) -> Self {
        Self {
            rows,
            reflectors: Vec::new(),
            r_columns: Vec::new(),
        }
    }

    pub(crate) fn rows(&self) -> usize {
        self.rows
    }

    pub(crate) fn cols(&self) -> usize {
        self.r_columns.len()
    }

    /// Number of rows of `R`, `min(m, n)`.
    #[cfg(test)]
    pub(crate) fn rank_rows(&self) -> usize {
        self.rows.min(self.cols())
    }

    pub(crate) fn r_column(&self, j: usize) -> &[f64] {
        &self.r_columns[j]
    }

    pub(crate) fn transform(&self, column: &[f64]) -> PendingColumn {
        assert_eq!(column.len(), self.rows, "column length must equal row count");
        let mut x = column.to_vec();
        for refl in &self.reflectors {
            refl.apply(&mut x);
        }
        let i = self.reflectors.len();
        if i >= self.rows {
            return PendingColumn { r: x, reflector: None };
        }
        let norm = x[i..].iter().map(|t| t * t).sum::<f64>().sqrt();
        let alpha = if x[i] >= 0.0 { -norm } else { norm };
        let mut v = x[i..].to_vec();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|t| t * t).sum();
        let beta = if vtv > 0.0 { 2.0 / vtv } else { 0.0 };
        let mut r = x[..i].to_vec();
        r.push(alpha);
        PendingColumn {
            r,
            reflector: Some(Reflector { v, beta, start: i }),
        }
    }

    pub(crate) fn commit(&mut self, pending: PendingColumn) {
        if let Some(refl) = pending.reflector {
            self.reflectors.push(refl);
        }
        self.r_columns.push(pending.r);
    }

    pub(crate) fn push_column(&mut self, column: &[f64]) {
        let pending = self.transform(column);
        self.commit(pending);
    }

    /// Computes `Q[:, :k] · x` for a block of `k`-vectors given column-major
    /// with `cols` columns, returning an `m × cols` column-major block.
    pub(crate) fn apply_q(&self, block: &[f64], k: usize, cols: usize) -> Vec<f64> {
        let m = self.rows;
        let mut out = vec![0.0; m * cols];
        for c in 0..cols {
            let dst = &mut out[c * m..(c + 1) * m];
            dst[..k].copy_from_slice(&block[c * k..(c + 1) * k]);
            for refl in self.reflectors.iter().rev() {
                refl.apply(dst);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstructs_small_matrix() {
        // columns (3,4,0), (1,1,1)
        let cols = [vec![3.0, 4.0, 0.0], vec![1.0, 1.0, 1.0]];
        let mut qr = ColumnQr::new(3);
        for c in &cols {
            qr.push_column(c);
        }
        assert_eq!(qr.rank_rows(), 2);
        assert!((qr.r_column(0)[0].abs() - 5.0).abs() < 1e-14);
        // Q R reproduces each column
        let k = qr.rank_rows();
        for (j, c) in cols.iter().enumerate() {
            let mut padded = qr.r_column(j).to_vec();
            padded.resize(k, 0.0);
            let back = qr.apply_q(&padded, k, 1);
            for (a, b) in back.iter().zip(c) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn wide_matrix_keeps_full_columns_after_rank_rows() {
        let mut qr = ColumnQr::new(2);
        qr.push_column(&[1.0, 0.0]);
        qr.push_column(&[0.0, 2.0]);
        qr.push_column(&[1.0, 1.0]);
        assert_eq!(qr.rank_rows(), 2);
        assert_eq!(qr.r_column(2).len(), 2);
    }

    #[test]
    fn transform_then_commit_matches_push() {
        let a = [0.3, -1.2, 2.0, 0.7];
        let b = [1.1, 0.4, -0.5, 0.9];
        let mut one = ColumnQr::new(4);
        one.push_column(&a);
        let pending = one.transform(&b);
        let r_pending = pending.r().to_vec();
        let mut two = ColumnQr::new(4);
        two.push_column(&a);
        two.push_column(&b);
        assert_eq!(r_pending, two.r_column(1));
    }
}
