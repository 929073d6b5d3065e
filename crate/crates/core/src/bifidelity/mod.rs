//! Bi-fidelity surrogate: greedy point selection through a pivoted Cholesky
//! factorization of the low-fidelity Gramian, a high-fidelity basis at the
//! selected points, and reconstruction with coefficients computed from the
//! low-fidelity solution alone.

mod archive;
mod estimate;
mod model;
mod select;

pub use archive::{load_model, read_model, save_model, write_model, write_report_csv, write_selected_csv};
pub use estimate::{error_bound, error_ratio_re, model_similarity_rs};
pub use model::{
    bf_coefficients, bf_predict, train_bf, BfModel, StopReason, TrainOptions, TrainingStep,
};
pub use select::{pivoted_cholesky_select, SelectionResult};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::forward::{ParamPoint, Snapshot};

/// Snapshots stacked as rows, with the parameter point of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    rows: Vec<DVector<f64>>,
    params: Vec<ParamPoint>,
}

impl SnapshotMatrix {
    pub fn new(rows: Vec<DVector<f64>>, params: Vec<ParamPoint>) -> Result<Self> {
        let n = rows
            .first()
            .map(|r| r.len())
            .ok_or_else(|| Error::invalid("snapshot matrix needs at least one row"))?;
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                context: "snapshot matrix row",
                expected: n,
                actual: bad.len(),
            });
        }
        if params.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                context: "snapshot matrix parameters",
                expected: rows.len(),
                actual: params.len(),
            });
        }
        Ok(Self { rows, params })
    }

    /// Rows without meaningful parameters (each gets an empty point).
    pub fn from_rows(rows: Vec<DVector<f64>>) -> Result<Self> {
        let params = vec![DVector::zeros(0); rows.len()];
        Self::new(rows, params)
    }

    pub fn from_snapshots(snaps: Vec<Snapshot>, params: Vec<ParamPoint>) -> Result<Self> {
        Self::new(snaps.into_iter().map(|s| s.values).collect(), params)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn state_dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, i: usize) -> &DVector<f64> {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[DVector<f64>] {
        &self.rows
    }

    pub fn params(&self) -> &[ParamPoint] {
        &self.params
    }

    /// Sub-matrix made of the given rows, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            params: indices.iter().map(|&i| self.params[i].clone()).collect(),
        }
    }

    pub fn truncate(&self, k: usize) -> Self {
        Self {
            rows: self.rows[..k].to_vec(),
            params: self.params[..k].to_vec(),
        }
    }

    /// `Σ_k c_k row_k`.
    pub fn combine(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.state_dim());
        for (row, c) in self.rows.iter().zip(coeffs.iter()) {
            out.axpy(*c, row, 1.0);
        }
        out
    }

    /// `[⟨v, row_k⟩]_k`.
    pub fn inner_products(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "projection onto snapshot rows",
                expected: self.state_dim(),
                actual: v.len(),
            });
        }
        Ok(DVector::from_iterator(
            self.n_rows(),
            self.rows.iter().map(|r| r.dot(v)),
        ))
    }
}

/// `G[i, j] = ⟨v_i, v_j⟩`, symmetrized.
pub fn gramian(v: &SnapshotMatrix) -> DMatrix<f64> {
    let m = v.n_rows();
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let x = v.rows[i].dot(&v.rows[j]);
            g[(i, j)] = x;
            g[(j, i)] = x;
        }
    }
    g
}

/// Cholesky solver for a Gramian. If the plain factorization fails, the
/// diagonal is shifted by `1e-12 · trace / m` and factored again.
#[derive(Debug, Clone)]
pub struct GramSolver {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl GramSolver {
    pub fn new(g: &DMatrix<f64>) -> Result<Self> {
        if g.nrows() == 0 {
            return Err(Error::invalid("empty Gramian"));
        }
        if let Some(chol) = Cholesky::new(g.clone()) {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let m = g.nrows() as f64;
        let jitter = 1e-12 * g.trace() / m;
        let mut shifted = g.clone();
        for i in 0..g.nrows() {
            shifted[(i, i)] += jitter;
        }
        let chol = Cholesky::new(shifted).ok_or_else(|| {
            Error::NotPositiveDefinite(format!(
                "Gramian of size {} not factorable even with jitter {jitter:e}",
                g.nrows()
            ))
        })?;
        Ok(Self { chol, jitter })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

/// Orthogonal projection of `v` onto the span of `basis` rows.
pub fn project(v: &DVector<f64>, basis: &SnapshotMatrix, solver: &GramSolver) -> Result<DVector<f64>> {
    let g = basis.inner_products(v)?;
    Ok(basis.combine(&solver.solve(&g)))
}

/// `‖v − P_W v‖` with `W = span(basis rows)`.
pub fn subspace_distance(v: &DVector<f64>, basis: &SnapshotMatrix) -> Result<f64> {
    let solver = GramSolver::new(&gramian(basis))?;
    distance_with(v, basis, &solver)
}

pub(crate) fn distance_with(v: &DVector<f64>, basis: &SnapshotMatrix, solver: &GramSolver) -> Result<f64> {
    Ok((v - project(v, basis, solver)?).norm())
}
