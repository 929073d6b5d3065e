use log::{debug, info};
use nalgebra::{DMatrix, DVector};

use super::estimate::{ratio, relative_distance};
use super::{gramian, pivoted_cholesky_select, GramSolver, SelectionResult, SnapshotMatrix};
use crate::error::{Error, Result};
use crate::forward::{evaluate_all, ForwardModel, GridSpec, ParamEnsemble, ParamPoint, Snapshot};

/// Offline training knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub m_max: usize,
    /// Stop adding HF samples once `R_e` reaches this value.
    pub re_threshold: f64,
    /// Stop when the error bound decreased by less than `plateau_rel` over
    /// the last `plateau_window` steps.
    pub plateau_rel: f64,
    pub plateau_window: usize,
    /// Disable both early-stopping rules.
    pub early_stop: bool,
}

impl TrainOptions {
    pub fn new(m_max: usize) -> Self {
        Self {
            m_max,
            re_threshold: 10.0,
            plateau_rel: 0.01,
            plateau_window: 5,
            early_stop: true,
        }
    }
}

/// Diagnostics recorded when the basis holds `k` members and candidate
/// `validation_index` (the next greedy pick) is checked against it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingStep {
    pub k: usize,
    pub validation_index: usize,
    /// `max_z d(v^L(z), U^L_k) / ‖v^L(z)‖` over all candidates.
    pub max_lf_rel_dist: f64,
    pub lf_rel_dist: f64,
    pub hf_rel_dist: f64,
    pub rs: f64,
    pub re: f64,
    pub error_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Reached `m_max`.
    BasisFull,
    /// The candidate set ran out of linearly independent LF snapshots.
    RankExhausted,
    ErrorRatio,
    BoundPlateau,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::BasisFull => "basis_full",
            StopReason::RankExhausted => "rank_exhausted",
            StopReason::ErrorRatio => "error_ratio",
            StopReason::BoundPlateau => "bound_plateau",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "basis_full" => StopReason::BasisFull,
            "rank_exhausted" => StopReason::RankExhausted,
            "error_ratio" => StopReason::ErrorRatio,
            "bound_plateau" => StopReason::BoundPlateau,
            _ => return None,
        })
    }
}

/// Trained surrogate. Immutable once built; share freely across threads.
#[derive(Debug, Clone)]
pub struct BfModel {
    pub(crate) selected_indices: Vec<usize>,
    pub(crate) lf_basis: SnapshotMatrix,
    pub(crate) hf_basis: SnapshotMatrix,
    pub(crate) lf_grid: Option<GridSpec>,
    pub(crate) hf_grid: Option<GridSpec>,
    pub(crate) gramian_lf: DMatrix<f64>,
    pub(crate) lf_solver: GramSolver,
    pub(crate) hf_solver: GramSolver,
    pub(crate) report: Vec<TrainingStep>,
    pub(crate) stop_reason: StopReason,
    pub(crate) n_candidates: usize,
    pub(crate) final_bound: Option<f64>,
}

impl BfModel {
    /// Assembles a model from matched LF/HF bases (row `k` of each belongs to
    /// the same parameter point).
    pub fn from_bases(
        lf_basis: SnapshotMatrix,
        hf_basis: SnapshotMatrix,
        lf_grid: Option<GridSpec>,
        hf_grid: Option<GridSpec>,
    ) -> Result<Self> {
        if lf_basis.n_rows() != hf_basis.n_rows() {
            return Err(Error::DimensionMismatch {
                context: "LF/HF basis sizes",
                expected: lf_basis.n_rows(),
                actual: hf_basis.n_rows(),
            });
        }
        let gramian_lf = gramian(&lf_basis);
        let lf_solver = GramSolver::new(&gramian_lf)?;
        let hf_solver = GramSolver::new(&gramian(&hf_basis))?;
        let m = lf_basis.n_rows();
        Ok(Self {
            selected_indices: (0..m).collect(),
            lf_basis,
            hf_basis,
            lf_grid,
            hf_grid,
            gramian_lf,
            lf_solver,
            hf_solver,
            report: Vec::new(),
            stop_reason: StopReason::BasisFull,
            n_candidates: m,
            final_bound: None,
        })
    }

    pub fn basis_size(&self) -> usize {
        self.lf_basis.n_rows()
    }

    pub fn selected_params(&self) -> &[ParamPoint] {
        self.lf_basis.params()
    }

    /// Indices of the selected points within the training candidates.
    pub fn selected_indices(&self) -> &[usize] {
        &self.selected_indices
    }

    pub fn lf_basis(&self) -> &SnapshotMatrix {
        &self.lf_basis
    }

    pub fn hf_basis(&self) -> &SnapshotMatrix {
        &self.hf_basis
    }

    pub fn gramian_lf(&self) -> &DMatrix<f64> {
        &self.gramian_lf
    }

    pub fn lf_grid(&self) -> Option<GridSpec> {
        self.lf_grid
    }

    pub fn hf_grid(&self) -> Option<GridSpec> {
        self.hf_grid
    }

    pub fn training_report(&self) -> &[TrainingStep] {
        &self.report
    }

    pub fn stop_reason(&self) -> StopReason {
        self.stop_reason
    }

    pub fn n_candidates(&self) -> usize {
        self.n_candidates
    }

    /// Error bound quoted for the trained surrogate: the one recorded at the
    /// last training step, one member short of the final basis and so on the
    /// safe side. Using the full basis instead would collapse to zero once the
    /// LF candidates are rank-exhausted, while the HF residual does not.
    /// `None` for a single-member basis or a model assembled by hand.
    pub fn final_error_bound(&self) -> Option<f64> {
        self.final_bound
    }

    /// HF solves spent in training.
    pub fn hf_solves(&self) -> usize {
        self.basis_size()
    }

    /// The same surrogate restricted to its first `k` basis members.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.basis_size() {
            return Err(Error::invalid(format!(
                "cannot truncate a {}-member basis to {k}",
                self.basis_size()
            )));
        }
        let mut out = Self::from_bases(
            self.lf_basis.truncate(k),
            self.hf_basis.truncate(k),
            self.lf_grid,
            self.hf_grid,
        )?;
        out.selected_indices = self.selected_indices[..k].to_vec();
        out.n_candidates = self.n_candidates;
        Ok(out)
    }

    /// Reconstruction from LF coefficients.
    pub fn reconstruct(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        self.hf_basis.combine(coeffs)
    }

    pub(crate) fn hf_projection(&self, v_hf: &DVector<f64>) -> Result<DVector<f64>> {
        super::project(v_hf, &self.hf_basis, &self.hf_solver)
    }

    pub(crate) fn lf_projection(&self, v_lf: &DVector<f64>) -> Result<DVector<f64>> {
        super::project(v_lf, &self.lf_basis, &self.lf_solver)
    }
}

/// Solves `G^L c = [⟨v^L, v^L(z_k)⟩]_k`.
pub fn bf_coefficients(model: &BfModel, v_lf: &DVector<f64>) -> Result<DVector<f64>> {
    let g = model.lf_basis.inner_products(v_lf)?;
    Ok(model.lf_solver.solve(&g))
}

/// One LF solve at `z`, reconstructed on the HF grid.
pub fn bf_predict(model: &BfModel, z: &ParamPoint, lf: &dyn ForwardModel) -> Result<Snapshot> {
    let v_lf = lf.evaluate_checked(z)?;
    predict_from_lf(model, &v_lf.values)
}

pub(crate) fn predict_from_lf(model: &BfModel, v_lf: &DVector<f64>) -> Result<Snapshot> {
    let c = bf_coefficients(model, v_lf)?;
    let values = model.reconstruct(&c);
    Ok(match model.hf_grid {
        Some(g) => Snapshot::on_grid(g, values)?,
        None => Snapshot::gridless(values),
    })
}

/// Offline phase: LF solves on every candidate, greedy selection, HF solves
/// at the selected points one at a time with the a-priori diagnostics.
pub fn train_bf(
    lf: &dyn ForwardModel,
    hf: &dyn ForwardModel,
    candidates: &ParamEnsemble,
    opts: TrainOptions,
) -> Result<BfModel> {
    if opts.m_max == 0 || opts.m_max > candidates.len() {
        return Err(Error::invalid(format!(
            "m_max = {} must be in 1..={}",
            opts.m_max,
            candidates.len()
        )));
    }
    info!("LF solves on {} candidates", candidates.len());
    let lf_snaps = evaluate_all(lf, candidates.members())?;
    let lf_all = SnapshotMatrix::from_snapshots(lf_snaps, candidates.members().to_vec())?;
    let selection = pivoted_cholesky_select(&lf_all, opts.m_max)?;
    train_from_selection(lf_all, &selection, hf, opts, lf.grid())
}

fn train_from_selection(
    lf_all: SnapshotMatrix,
    selection: &SelectionResult,
    hf: &dyn ForwardModel,
    opts: TrainOptions,
    lf_grid: Option<GridSpec>,
) -> Result<BfModel> {
    let picks = &selection.indices;
    let hf_solve = |idx: usize| -> Result<DVector<f64>> {
        Ok(hf.evaluate_checked(&lf_all.params()[idx])?.values)
    };

    let mut hf_rows = vec![hf_solve(picks[0])?];
    let mut report: Vec<TrainingStep> = Vec::new();
    let mut stop = if selection.truncated {
        StopReason::RankExhausted
    } else {
        StopReason::BasisFull
    };

    for k in 1..picks.len() {
        let basis_idx = &picks[..k];
        let lf_basis = lf_all.select(basis_idx);
        let hf_basis = SnapshotMatrix::new(hf_rows.clone(), lf_basis.params().to_vec())?;
        let model = BfModel::from_bases(lf_basis, hf_basis, lf_grid, hf.grid())?;

        let next = picks[k];
        let v_lf = lf_all.row(next);
        let v_hf = hf_solve(next)?;

        let lf_rel = relative_distance(v_lf, &model.lf_projection(v_lf)?);
        let hf_rel = relative_distance(&v_hf, &model.hf_projection(&v_hf)?);
        let rs = ratio(hf_rel, lf_rel, 1.0);
        let re = super::estimate::re_from_parts(&model, &v_hf, v_lf)?;
        let max_lf = selection.max_relative_distance(k);
        let bound = max_lf * (1.0 + re);
        debug!("k={k} max_lf={max_lf:.3e} R_s={rs:.3} R_e={re:.3} bound={bound:.3e}");
        report.push(TrainingStep {
            k,
            validation_index: next,
            max_lf_rel_dist: max_lf,
            lf_rel_dist: lf_rel,
            hf_rel_dist: hf_rel,
            rs,
            re,
            error_bound: bound,
        });
        // the validation solve becomes basis member k + 1
        hf_rows.push(v_hf);

        if opts.early_stop {
            if re >= opts.re_threshold {
                stop = StopReason::ErrorRatio;
                break;
            }
            let w = opts.plateau_window;
            if report.len() > w {
                let old = report[report.len() - 1 - w].error_bound;
                if old - bound < opts.plateau_rel * old {
                    stop = StopReason::BoundPlateau;
                    break;
                }
            }
        }
    }

    let m = hf_rows.len();
    let lf_basis = lf_all.select(&picks[..m]);
    let hf_basis = SnapshotMatrix::new(hf_rows, lf_basis.params().to_vec())?;
    let mut model = BfModel::from_bases(lf_basis, hf_basis, lf_grid, hf.grid())?;
    model.selected_indices = picks[..m].to_vec();
    model.report = report;
    model.stop_reason = stop;
    model.n_candidates = lf_all.n_rows();
    model.final_bound = model.report.last().map(|s| s.error_bound);
    info!("trained {m}-member basis ({})", stop.as_str());
    Ok(model)
}
