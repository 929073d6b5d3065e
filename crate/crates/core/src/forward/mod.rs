//! Forward models `F: z ↦ v(z)` and their discretization types.

mod banded;
mod convdiff;
mod linear;
mod pair;
pub mod snapshot_io;

pub use banded::FivePointSystem;
pub use convdiff::{
    prolongate, solve_convdiff, BoundaryCurve, ConvDiffConfig, ConvDiffModel, ConvectionScheme,
    Diffusivity, LeftBottomBc,
};
pub use linear::LinearToy;
pub use pair::{make_fidelity_pair, FidelityPair, PairSpec};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in parameter space.
pub type ParamPoint = DVector<f64>;

/// Cell-centred structured grid on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    nx: usize,
    ny: usize,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::invalid(format!(
                "grid needs at least 2×2 cells, got {nx}×{ny}"
            )));
        }
        Ok(Self { nx, ny })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Row-major index of cell `(i, j)` (i along x).
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy())
    }
}

/// A discretized state vector. `grid` is `None` for models without a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub values: DVector<f64>,
    pub grid: Option<GridSpec>,
}

impl Snapshot {
    pub fn on_grid(grid: GridSpec, values: DVector<f64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(Error::DimensionMismatch {
                context: "snapshot on grid",
                expected: grid.cells(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("snapshot contains non-finite values"));
        }
        Ok(Self {
            values,
            grid: Some(grid),
        })
    }

    pub fn gridless(values: DVector<f64>) -> Self {
        Self { values, grid: None }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Contract shared by every forward solver. Implementations must be pure:
/// the same `z` always yields a bit-identical snapshot.
pub trait ForwardModel: Send + Sync {
    fn param_dim(&self) -> usize;

    fn state_dim(&self) -> usize;

    fn evaluate(&self, z: &ParamPoint) -> Result<Snapshot>;

    /// Relative cost of one evaluation, used for budget accounting.
    fn cost_weight(&self) -> f64 {
        self.state_dim() as f64
    }

    fn grid(&self) -> Option<GridSpec> {
        None
    }

    fn evaluate_checked(&self, z: &ParamPoint) -> Result<Snapshot> {
        if z.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                context: "forward model parameter",
                expected: self.param_dim(),
                actual: z.len(),
            });
        }
        self.evaluate(z).map_err(|e| Error::ModelFailure {
            z: z.iter().copied().collect(),
            source: Box::new(e),
        })
    }
}

pub type SharedModel = Arc<dyn ForwardModel>;

/// `n_s` parameter points of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEnsemble {
    dim: usize,
    members: Vec<ParamPoint>,
}

impl ParamEnsemble {
    pub fn new(members: Vec<ParamPoint>) -> Result<Self> {
        let dim = members
            .first()
            .map(|m| m.len())
            .ok_or_else(|| Error::invalid("ensemble must have at least one member"))?;
        if let Some(bad) = members.iter().find(|m| m.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "ensemble member",
                expected: dim,
                actual: bad.len(),
            });
        }
        Ok(Self { dim, members })
    }

    /// Rows of `m` become members.
    pub fn from_rows(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(m.row_iter().map(|r| r.transpose()).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[ParamPoint] {
        &self.members
    }

    pub fn get(&self, i: usize) -> &ParamPoint {
        &self.members[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ParamPoint> {
        self.members.iter()
    }

    /// `n_s × d` matrix with one member per row.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim, |i, j| self.members[i][j])
    }

    pub fn mean(&self) -> ParamPoint {
        let mut acc = DVector::zeros(self.dim);
        for m in &self.members {
            acc += m;
        }
        acc / self.len() as f64
    }

    /// Per-coordinate sample standard deviation (`n_s − 1` normalization,
    /// zero for a single member).
    pub fn std(&self) -> ParamPoint {
        let n = self.len();
        if n < 2 {
            return DVector::zeros(self.dim);
        }
        let mean = self.mean();
        let mut acc = DVector::zeros(self.dim);
        for m in &self.members {
            let d = m - &mean;
            acc += d.component_mul(&d);
        }
        (acc / (n - 1) as f64).map(f64::sqrt)
    }
}

impl<'a> IntoIterator for &'a ParamEnsemble {
    type Item = &'a ParamPoint;
    type IntoIter = std::slice::Iter<'a, ParamPoint>;

    fn into_iter(self) -> Self::IntoIter {
        self.members.iter()
    }
}

/// Evaluates `model` on every member in parallel; output order follows the
/// ensemble order regardless of scheduling.
pub fn evaluate_all(model: &dyn ForwardModel, points: &[ParamPoint]) -> Result<Vec<Snapshot>> {
    use rayon::prelude::*;
    points
        .par_iter()
        .map(|z| model.evaluate_checked(z))
        .collect()
}
