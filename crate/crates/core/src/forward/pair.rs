use std::sync::Arc;

use super::{ConvDiffConfig, ConvDiffModel, GridSpec, SharedModel};
use crate::error::{Error, Result};

/// Coarse and fine discretizations of the same physics.
#[derive(Debug, Clone)]
pub struct PairSpec {
    pub config: ConvDiffConfig,
    pub lf_grid: GridSpec,
    pub hf_grid: GridSpec,
}

impl PairSpec {
    /// 7×7 / 100×100 grids, `z = [D_T]`.
    pub fn scalar_diffusivity() -> Self {
        Self {
            config: ConvDiffConfig::scalar_diffusivity(),
            lf_grid: GridSpec::square(7).expect("valid grid"),
            hf_grid: GridSpec::square(100).expect("valid grid"),
        }
    }
}

#[derive(Clone)]
pub struct FidelityPair {
    pub lf: SharedModel,
    pub hf: SharedModel,
}

impl FidelityPair {
    pub fn new(lf: SharedModel, hf: SharedModel) -> Result<Self> {
        if lf.param_dim() != hf.param_dim() {
            return Err(Error::DimensionMismatch {
                context: "fidelity pair parameter dimension",
                expected: hf.param_dim(),
                actual: lf.param_dim(),
            });
        }
        Ok(Self { lf, hf })
    }

    /// LF cost in units of one HF solve.
    pub fn cost_ratio(&self) -> f64 {
        self.lf.cost_weight() / self.hf.cost_weight()
    }
}

impl std::fmt::Debug for FidelityPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FidelityPair")
            .field("lf_grid", &self.lf.grid())
            .field("hf_grid", &self.hf.grid())
            .finish()
    }
}

pub fn make_fidelity_pair(spec: &PairSpec) -> FidelityPair {
    let lf = Arc::new(ConvDiffModel::new(spec.config.clone(), spec.lf_grid));
    let hf = Arc::new(ConvDiffModel::new(spec.config.clone(), spec.hf_grid));
    FidelityPair { lf, hf }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn default_pair_has_case_one_grids() {
        let pair = make_fidelity_pair(&PairSpec::scalar_diffusivity());
        assert_eq!(pair.lf.state_dim(), 49);
        assert_eq!(pair.hf.state_dim(), 10_000);
        assert_eq!(pair.lf.param_dim(), pair.hf.param_dim());
        assert!((pair.cost_ratio() - 0.0049).abs() < 1e-15);
    }

    #[test]
    fn identical_grids_give_identical_snapshots() {
        let mut spec = PairSpec::scalar_diffusivity();
        spec.lf_grid = GridSpec::square(12).unwrap();
        spec.hf_grid = spec.lf_grid;
        let pair = make_fidelity_pair(&spec);
        for d in [0.03, 0.4, 1.7] {
            let z = DVector::from_vec(vec![d]);
            assert_eq!(pair.lf.evaluate(&z).unwrap(), pair.hf.evaluate(&z).unwrap());
        }
    }
}
