use nalgebra::DMatrix;

use super::{ForwardModel, ParamPoint, Snapshot};
use crate::error::{Error, Result};

/// `z ↦ A·z`. Gives closed-form posteriors for testing the Kalman machinery.
#[derive(Debug, Clone)]
pub struct LinearToy {
    matrix: DMatrix<f64>,
}

impl LinearToy {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl ForwardModel for LinearToy {
    fn param_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn state_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn evaluate(&self, z: &ParamPoint) -> Result<Snapshot> {
        if z.len() != self.matrix.ncols() {
            return Err(Error::DimensionMismatch {
                context: "linear toy parameter",
                expected: self.matrix.ncols(),
                actual: z.len(),
            });
        }
        Ok(Snapshot::gridless(&self.matrix * z))
    }
}
