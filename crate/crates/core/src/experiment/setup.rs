use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;

use super::config::{CaseConfig, CaseKind, SamplerSpec, SchemeName};
use crate::error::Result;
use crate::fields::{build_kl_basis, gaussian_sample, lhs_sample, BoxPrior, KernelSpec, KlBasis};
use crate::forward::{
    BoundaryCurve, ConvDiffConfig, ConvDiffModel, ConvectionScheme, Diffusivity, ForwardModel,
    GridSpec, LeftBottomBc, LinearToy, ParamEnsemble, ParamPoint, SharedModel, Snapshot,
};
use crate::rng;

/// Seed purposes below the master seed.
pub(crate) mod purpose {
    pub const CANDIDATES: u64 = 11;
    pub const PRIOR: u64 = 12;
    pub const OBSERVATIONS: u64 = 13;
    pub const KALMAN: u64 = 14;
    pub const VALIDATION: u64 = 15;
}

pub(crate) fn seed_for(master: u64, purpose: u64) -> u64 {
    rng::derive_seed(master, &[purpose])
}

/// Forward model wrapper that counts solves.
pub struct CountingModel {
    inner: SharedModel,
    count: AtomicUsize,
}

impl CountingModel {
    pub fn new(inner: SharedModel) -> Self {
        Self {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

impl ForwardModel for CountingModel {
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn evaluate(&self, z: &ParamPoint) -> Result<Snapshot> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate(z)
    }

    fn cost_weight(&self) -> f64 {
        self.inner.cost_weight()
    }

    fn grid(&self) -> Option<GridSpec> {
        self.inner.grid()
    }
}

/// The models of a configured case.
pub struct CaseModels {
    pub lf: SharedModel,
    pub hf: SharedModel,
    pub kl: Option<Arc<KlBasis>>,
}

impl CaseModels {
    /// LF cost in units of one HF solve.
    pub fn cost_ratio(&self) -> f64 {
        self.lf.cost_weight() / self.hf.cost_weight()
    }
}

pub fn kl_basis_for(cfg: &CaseConfig) -> Result<KlBasis> {
    let f = &cfg.field;
    let nodes = BoundaryCurve::nodes(f.n_nodes);
    let points = DMatrix::from_fn(nodes.len(), 2, |i, j| nodes[i][j]);
    build_kl_basis(&points, KernelSpec::new(f.sigma0, f.length_scale)?, f.n_modes)
}

pub fn build_models(cfg: &CaseConfig) -> Result<CaseModels> {
    if cfg.case == CaseKind::LinearOracle {
        let rows = cfg.linear.len();
        let cols = cfg.param_dim();
        let a = DMatrix::from_fn(rows, cols, |i, j| cfg.linear[i][j]);
        let m: SharedModel = Arc::new(LinearToy::new(a));
        return Ok(CaseModels {
            lf: m.clone(),
            hf: m,
            kl: None,
        });
    }

    let p = &cfg.physics;
    let (diffusivity, left_bottom, kl) = match cfg.case {
        CaseKind::Case1 => (Diffusivity::Parameter, LeftBottomBc::Constant(p.boundary_value), None),
        _ => {
            let basis = Arc::new(kl_basis_for(cfg)?);
            log::info!(
                "K-L basis: {} modes keep {:.1}% of the energy",
                basis.n_modes(),
                100.0 * basis.retained_energy()
            );
            let bc = LeftBottomBc::KlLogField {
                base: p.boundary_value,
                basis: basis.clone(),
            };
            (Diffusivity::Fixed(p.diffusivity), bc, Some(basis))
        }
    };
    let config = ConvDiffConfig {
        velocity: p.velocity,
        left_bottom,
        right_top: p.right_top,
        diffusivity,
        scheme: match cfg.grid.scheme {
            SchemeName::Central => ConvectionScheme::Central,
            SchemeName::Upwind => ConvectionScheme::Upwind,
        },
    };
    let hf: SharedModel = Arc::new(ConvDiffModel::new(config.clone(), GridSpec::square(cfg.grid.hf)?));
    let lf: SharedModel = if cfg.training.identical_fidelity {
        hf.clone()
    } else {
        Arc::new(ConvDiffModel::new(config, GridSpec::square(cfg.grid.lf)?))
    };
    Ok(CaseModels { lf, hf, kl })
}

pub fn sample(spec: &SamplerSpec, n: usize, seed: u64) -> Result<ParamEnsemble> {
    match spec {
        SamplerSpec::Box { lower, upper } => {
            lhs_sample(&BoxPrior::new(lower.clone(), upper.clone())?, n, seed)
        }
        SamplerSpec::Gaussian { dim } => gaussian_sample(n, *dim, seed),
    }
}
