use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use super::ObservationSet;
use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Ensemble of augmented states `[H v_i, z_i]`, one row per member.
///
/// Only the observed components of the state are kept: the gain sees the
/// state through `H` alone and the full state is recomputed by the next
/// propagation, so dropping the rest loses nothing for the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEnsemble {
    pub obs_states: DMatrix<f64>,
    pub params: DMatrix<f64>,
    /// Stable member ids; the perturbation stream of a member is keyed by
    /// its id, never by its row position.
    pub member_ids: Vec<u64>,
}

impl AugmentedEnsemble {
    pub fn new(obs_states: DMatrix<f64>, params: DMatrix<f64>) -> Result<Self> {
        let ids = (0..obs_states.nrows() as u64).collect();
        Self::with_ids(obs_states, params, ids)
    }

    pub fn with_ids(obs_states: DMatrix<f64>, params: DMatrix<f64>, member_ids: Vec<u64>) -> Result<Self> {
        let n = obs_states.nrows();
        for (context, actual) in [
            ("augmented ensemble parameter rows", params.nrows()),
            ("augmented ensemble member ids", member_ids.len()),
        ] {
            if actual != n {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n,
                    actual,
                });
            }
        }
        Ok(Self {
            obs_states,
            params,
            member_ids,
        })
    }

    pub fn n_members(&self) -> usize {
        self.obs_states.nrows()
    }

    fn stacked(&self) -> DMatrix<f64> {
        let (n, q, d) = (self.n_members(), self.obs_states.ncols(), self.params.ncols());
        let mut x = DMatrix::zeros(n, q + d);
        x.columns_mut(0, q).copy_from(&self.obs_states);
        x.columns_mut(q, d).copy_from(&self.params);
        x
    }
}

/// Kalman analysis `x̂_i = x_i + P_m Hᵀ (H P_m Hᵀ + P_d)⁻¹ (y + η_i − H x_i)`.
///
/// `P_m` is the sample covariance (divisor `n_s − 1`) and never formed: with
/// anomalies `A` (all components) and `B` (observed components) the update
/// is `Δ = D C⁻¹ Bᵀ A / (n_s − 1)` with `C = BᵀB / (n_s − 1) + P_d`, so the
/// only solve is `n_obs × n_obs`. When `perturbed`, member `i` draws
/// `η_i ~ N(0, P_d)` from the stream `(seed, member id)`; otherwise `η_i = 0`.
pub fn kalman_update(
    ens: &AugmentedEnsemble,
    obs: &ObservationSet,
    seed: u64,
    perturbed: bool,
) -> Result<AugmentedEnsemble> {
    let n = ens.n_members();
    if n < 2 {
        return Err(Error::invalid(format!("Kalman update needs n_s ≥ 2, got {n}")));
    }
    let q = obs.n_obs();
    if ens.obs_states.ncols() != q {
        return Err(Error::DimensionMismatch {
            context: "observed states",
            expected: q,
            actual: ens.obs_states.ncols(),
        });
    }

    let x = ens.stacked();
    let mean = x.row_mean();
    let mut a = x.clone();
    for mut row in a.row_iter_mut() {
        row -= &mean;
    }
    let b = a.columns(0, q);
    let scale = 1.0 / (n as f64 - 1.0);

    let mut c = b.transpose() * b * scale;
    for (k, s) in obs.noise_std().iter().enumerate() {
        c[(k, k)] += s * s;
    }
    let chol = c.cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite("innovation covariance H P_m Hᵀ + P_d".into())
    })?;

    // innovations as columns: n_obs × n_s
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut innov = DMatrix::zeros(q, n);
    for (i, mut col) in innov.column_iter_mut().enumerate() {
        let eta = if perturbed {
            let mut rng = rng::stream(seed, &[domain::KALMAN, ens.member_ids[i]]);
            DVector::from_iterator(
                q,
                obs.noise_std().iter().map(|s| s * normal.sample(&mut rng)),
            )
        } else {
            DVector::zeros(q)
        };
        for k in 0..q {
            col[k] = obs.y()[k] + eta[k] - ens.obs_states[(i, k)];
        }
    }
    let w = chol.solve(&innov);
    let cross = b.transpose() * &a * scale; // n_obs × (n_obs + d)
    let updated = x + w.transpose() * cross;

    AugmentedEnsemble::with_ids(
        updated.columns(0, q).into_owned(),
        updated.columns(q, ens.params.ncols()).into_owned(),
        ens.member_ids.clone(),
    )
}
