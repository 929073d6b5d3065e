use nalgebra::DMatrix;

use super::SnapshotMatrix;
use crate::error::{Error, Result};

/// Pivots smaller than this fraction of the largest initial squared norm end
/// the factorization.
const PIVOT_TOL: f64 = 1e-12;

/// Outcome of the greedy pivoted Cholesky factorization of the Gramian.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    /// Selected row indices in order of importance.
    pub indices: Vec<usize>,
    /// Full permutation: position `t` of the factor holds candidate `order[t]`.
    pub order: Vec<usize>,
    /// `M × k` factor in permuted order; `L·Lᵀ` reproduces the Gramian on the
    /// leading `k × k` block.
    pub factor: DMatrix<f64>,
    /// `residuals[s][i]`: squared distance of candidate `i` (original index)
    /// to the span of the first `s` selections; `len() + 1` entries.
    pub residuals: Vec<Vec<f64>>,
    /// Squared norms of the candidates.
    pub norms_sq: Vec<f64>,
    /// Fewer than the requested points were selectable.
    pub truncated: bool,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `max_i √d_i / ‖v_i‖` after `k ≤ len()` selections (zero-norm
    /// candidates contribute 0).
    pub fn max_relative_distance(&self, k: usize) -> f64 {
        self.residuals[k]
            .iter()
            .zip(&self.norms_sq)
            .map(|(&r, &n)| if n > 0.0 { (r / n).sqrt() } else { 0.0 })
            .fold(0.0, f64::max)
    }
}

/// Greedy selection of up to `m` rows of `v`. At every step the candidate
/// with the largest remaining squared distance to the span of the rows
/// chosen so far becomes the pivot; ties go to the lowest original index.
pub fn pivoted_cholesky_select(v: &SnapshotMatrix, m: usize) -> Result<SelectionResult> {
    let big_m = v.n_rows();
    if m == 0 || m > big_m {
        return Err(Error::invalid(format!(
            "cannot select {m} points from {big_m} candidates"
        )));
    }
    let norms_sq: Vec<f64> = v.rows().iter().map(|r| r.dot(r)).collect();
    let max_d = norms_sq.iter().copied().fold(0.0, f64::max);
    if max_d <= 0.0 {
        return Err(Error::invalid("all candidate snapshots are zero"));
    }
    let floor = PIVOT_TOL * max_d;

    let mut order: Vec<usize> = (0..big_m).collect();
    let mut d = norms_sq.clone();
    let mut factor = DMatrix::<f64>::zeros(big_m, m);
    let mut residuals = Vec::with_capacity(m);
    let mut truncated = false;
    let mut k = 0;

    while k < m {
        let mut snapshot = vec![0.0; big_m];
        for (t, &orig) in order.iter().enumerate() {
            snapshot[orig] = if t < k { 0.0 } else { d[t] };
        }
        residuals.push(snapshot);

        // 1. pivot on the largest remaining distance
        let mut p = k;
        for t in k + 1..big_m {
            if d[t] > d[p] || (d[t] == d[p] && order[t] < order[p]) {
                p = t;
            }
        }
        if d[p] < floor {
            truncated = true;
            break;
        }
        // 2. exchange
        order.swap(k, p);
        d.swap(k, p);
        factor.swap_rows(k, p);
        // 3-5. new column of the factor
        let pivot_row = v.row(order[k]);
        let lkk = d[k].sqrt();
        factor[(k, k)] = lkk;
        for t in k + 1..big_m {
            let mut r = v.row(order[t]).dot(pivot_row);
            for j in 0..k {
                r -= factor[(t, j)] * factor[(k, j)];
            }
            let ltk = r / lkk;
            factor[(t, k)] = ltk;
            // 6. downdate, clamping roundoff below zero
            d[t] = (d[t] - ltk * ltk).max(0.0);
        }
        k += 1;
    }

    if !truncated {
        let mut last = vec![0.0; big_m];
        for (t, &orig) in order.iter().enumerate() {
            last[orig] = if t < k { 0.0 } else { d[t] };
        }
        residuals.push(last);
    }

    Ok(SelectionResult {
        indices: order[..k].to_vec(),
        factor: factor.columns(0, k).into_owned(),
        order,
        residuals,
        norms_sq,
        truncated,
    })
}
