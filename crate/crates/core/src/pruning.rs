//! Hidden-neuron selection.
//!
//! RES-ELM grows the retained set greedily: each round scores every unused
//! column by the pseudo-identity deviation it shows when appended to the
//! columns chosen so far, and keeps the lowest. RP-ELM keeps a uniformly
//! random subset of the same size.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::exec::{self, Mode};
use crate::linalg::{self, ColumnQr, TruncationPolicy};
use crate::{seeds, Error, Result};

/// Candidate scores within this distance of the round minimum count as tied;
/// ties go to the lowest original index.
pub const SCORE_TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    selected: Vec<usize>,
    scores: Vec<f64>,
    sparsity_percent: u32,
}

impl PruneResult {
    /// Retained neuron indices, in selection order.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    /// Relative error of each retained neuron when it was chosen.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn sparsity_percent(&self) -> u32 {
        self.sparsity_percent
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// `H` restricted to the retained columns, in selection order.
    pub fn sparse_design(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        h.select_columns(self.selected.iter())
    }

    /// First `k` selections; greedy and random-order selections are nested,
    /// so this equals the result for the smaller target.
    pub fn prefix(&self, k: usize, sparsity_percent: u32) -> PruneResult {
        PruneResult {
            selected: self.selected[..k].to_vec(),
            scores: self.scores[..k].to_vec(),
            sparsity_percent,
        }
    }
}

fn check_sparsity(sparsity_percent: u32) -> Result<()> {
    if !(1..=100).contains(&sparsity_percent) {
        return Err(Error::InvalidArgument(format!(
            "sparsity percent must be in 1..=100, got {sparsity_percent}"
        )));
    }
    Ok(())
}

/// `round(S_p / 100 · L_max)`, at least 1.
pub fn target_size(l_max: usize, sparsity_percent: u32) -> usize {
    ((sparsity_percent as usize * l_max + 50) / 100).max(1)
}

pub fn res_elm_prune(h: &DMatrix<f64>, sparsity_percent: u32, policy: &TruncationPolicy) -> Result<PruneResult> {
    res_elm_prune_with(h, sparsity_percent, policy, Mode::default())
}

pub fn res_elm_prune_with(
    h: &DMatrix<f64>,
    sparsity_percent: u32,
    policy: &TruncationPolicy,
    mode: Mode,
) -> Result<PruneResult> {
    check_sparsity(sparsity_percent)?;
    linalg::check_finite(h)?;
    let l_max = h.ncols();
    if sparsity_percent == 100 {
        return Ok(PruneResult {
            selected: (0..l_max).collect(),
            scores: vec![0.0; l_max],
            sparsity_percent,
        });
    }
    let mut result = greedy_select(h, target_size(l_max, sparsity_percent), policy, mode)?;
    result.sparsity_percent = sparsity_percent;
    Ok(result)
}

/// Runs the greedy selection until `target` columns are retained.
pub fn greedy_select(h: &DMatrix<f64>, target: usize, policy: &TruncationPolicy, mode: Mode) -> Result<PruneResult> {
    linalg::check_finite(h)?;
    let (n, l_max) = h.shape();
    if target == 0 || target > l_max {
        return Err(Error::InvalidArgument(format!("cannot select {target} of {l_max} neurons")));
    }
    let column = |j: usize| &h.as_slice()[j * n..(j + 1) * n];

    let mut qr = ColumnQr::new(n);
    let mut pool: Vec<usize> = (0..l_max).collect();
    let mut selected = Vec::with_capacity(target);
    let mut scores = Vec::with_capacity(target);
    while selected.len() < target {
        let bound = linalg::prefix_bound(&qr, policy);
        let round = exec::map_range(mode, pool.len(), |c| {
            linalg::candidate_score_bounded(&qr, bound, column(pool[c]), policy)
        });
        let pos = pick_minimum(&round);
        let winner = pool.remove(pos);
        qr.push_column(column(winner));
        selected.push(winner);
        scores.push(round[pos]);
    }
    Ok(PruneResult {
        selected,
        scores,
        sparsity_percent: 0,
    })
}

/// Position of the first score within tolerance of the minimum. `scores`
/// follows ascending neuron index, so this is the lowest-index winner.
pub(crate) fn pick_minimum(scores: &[f64]) -> usize {
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    scores
        .iter()
        .position(|&v| v <= best + SCORE_TIE_TOLERANCE)
        .expect("non-empty candidate pool")
}

/// Seeded permutation of `0..l_max`; its prefixes are uniform random subsets.
pub fn random_order(l_max: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..l_max).collect();
    order.shuffle(&mut seeds::rng(seed));
    order
}

/// Uniform random subset of `round(S_p% · L_max)` neurons, ascending. Scores
/// are zero.
pub fn rp_elm_prune(l_max: usize, sparsity_percent: u32, seed: u64) -> Result<PruneResult> {
    check_sparsity(sparsity_percent)?;
    if l_max == 0 {
        return Err(Error::InvalidArgument("L_max must be >= 1".into()));
    }
    let k = target_size(l_max, sparsity_percent);
    let mut selected = random_order(l_max, seed);
    selected.truncate(k);
    selected.sort_unstable();
    Ok(PruneResult {
        selected,
        scores: vec![0.0; k],
        sparsity_percent,
    })
}

/// Residual error of every column prefix `H[:, ..k]`, `k = 1..=L`.
pub fn lemma1_report(h: &DMatrix<f64>, policy: &TruncationPolicy) -> Result<Vec<f64>> {
    linalg::check_finite(h)?;
    let n = h.nrows();
    let mut qr = ColumnQr::new(n);
    let mut out = Vec::with_capacity(h.ncols());
    for j in 0..h.ncols() {
        qr.push_column(&h.as_slice()[j * n..(j + 1) * n]);
        let thin = linalg::from_qr(&qr, None, false);
        out.push(linalg::residual_error_from_values(&thin.values, j + 1, policy));
    }
    Ok(out)
}
