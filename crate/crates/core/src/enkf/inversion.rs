use std::io::Write;

use log::info;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{kalman_update, observe, AugmentedEnsemble, ObservationSet};
use crate::error::{Error, Result};
use crate::forward::{ForwardModel, ParamEnsemble, ParamPoint, Snapshot};
use crate::rng::{self, domain};

/// Anything that maps a parameter point to a state on the observation grid:
/// the BF surrogate, an LF solve with prolongation, or an HF solve.
pub trait Propagator: Sync {
    fn propagate(&self, z: &ParamPoint) -> Result<Snapshot>;
}

impl<F> Propagator for F
where
    F: Fn(&ParamPoint) -> Result<Snapshot> + Sync,
{
    fn propagate(&self, z: &ParamPoint) -> Result<Snapshot> {
        self(z)
    }
}

/// Adapts a forward model whose state already lives on the observation grid.
pub struct ModelPropagator<'a>(pub &'a dyn ForwardModel);

impl Propagator for ModelPropagator<'_> {
    fn propagate(&self, z: &ParamPoint) -> Result<Snapshot> {
        self.0.evaluate_checked(z)
    }
}

/// Plain relative error `‖z_p − z_t‖ / ‖z_t‖` and its square root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetric {
    pub plain: f64,
    pub literal: f64,
}

pub fn relative_error_e(z_post_mean: &ParamPoint, z_true: &ParamPoint) -> Result<ErrorMetric> {
    if z_post_mean.len() != z_true.len() {
        return Err(Error::DimensionMismatch {
            context: "relative error",
            expected: z_true.len(),
            actual: z_post_mean.len(),
        });
    }
    let t = z_true.norm();
    if t == 0.0 {
        return Err(Error::invalid("relative error against a zero truth vector"));
    }
    let plain = (z_post_mean - z_true).norm() / t;
    Ok(ErrorMetric {
        plain,
        literal: plain.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionOptions {
    pub max_iter: usize,
    pub min_iter: usize,
    pub seed: u64,
    /// Perturbed-observation update (default). Off gives a deterministic
    /// update, useful for debugging.
    pub perturbed: bool,
    pub truth: Option<ParamPoint>,
}

impl InversionOptions {
    pub fn new(max_iter: usize, min_iter: usize, seed: u64) -> Self {
        Self {
            max_iter,
            min_iter,
            seed,
            perturbed: true,
            truth: None,
        }
    }
}

/// One propagate-and-update cycle. `misfit` belongs to the ensemble that was
/// propagated; mean, spread and error describe the updated parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub misfit: f64,
    pub error: Option<ErrorMetric>,
    pub param_mean: ParamPoint,
    pub param_std: ParamPoint,
}

#[derive(Debug, Clone)]
pub struct InversionState {
    pub iteration: usize,
    pub params: ParamEnsemble,
    pub prior_mean: ParamPoint,
    pub prior_std: ParamPoint,
    pub prior_error: Option<ErrorMetric>,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
}

impl InversionState {
    pub fn posterior_mean(&self) -> ParamPoint {
        self.params.mean()
    }

    pub fn final_error(&self) -> Option<ErrorMetric> {
        self.history.last().and_then(|r| r.error)
    }

    pub fn misfits(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.misfit).collect()
    }

    /// Columns `iter, misfit, e_literal, e_plain, param_mean_1..d,
    /// param_std_1..d`. Row `iter = 0` holds the prior with an empty misfit;
    /// error columns are empty when no truth was given.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let d = self.prior_mean.len();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["iter", "misfit", "e_literal", "e_plain"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=d).map(|i| format!("param_mean_{i}")));
        header.extend((1..=d).map(|i| format!("param_std_{i}")));
        wtr.write_record(&header)?;

        let fmt = |x: f64| format!("{x:e}");
        let row = |iter: usize, misfit: Option<f64>, e: Option<ErrorMetric>, m: &ParamPoint, s: &ParamPoint| {
            let mut r = vec![
                iter.to_string(),
                misfit.map(fmt).unwrap_or_default(),
                e.map(|e| fmt(e.literal)).unwrap_or_default(),
                e.map(|e| fmt(e.plain)).unwrap_or_default(),
            ];
            r.extend(m.iter().map(|&x| fmt(x)));
            r.extend(s.iter().map(|&x| fmt(x)));
            r
        };
        wtr.write_record(row(0, None, self.prior_error, &self.prior_mean, &self.prior_std))?;
        for rec in &self.history {
            wtr.write_record(row(rec.iter, Some(rec.misfit), rec.error, &rec.param_mean, &rec.param_std))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Propagate the ensemble, update it against the data, carry the updated
/// parameters to the next iteration. Stops once the normalized misfit of the
/// propagated ensemble mean is at most 1 and at least `min_iter` iterations
/// ran, or after `max_iter`.
pub fn run_inversion(
    propagator: &dyn Propagator,
    prior: &ParamEnsemble,
    obs: &ObservationSet,
    opts: &InversionOptions,
) -> Result<InversionState> {
    if opts.max_iter == 0 || opts.min_iter > opts.max_iter {
        return Err(Error::invalid(format!(
            "need 1 ≤ max_iter and min_iter ≤ max_iter, got min {} max {}",
            opts.min_iter, opts.max_iter
        )));
    }
    if prior.len() < 2 {
        return Err(Error::invalid("ensemble needs at least 2 members"));
    }
    let error_of = |m: &ParamPoint| opts.truth.as_ref().map(|t| relative_error_e(m, t)).transpose();

    let prior_mean = prior.mean();
    let mut state = InversionState {
        iteration: 0,
        params: prior.clone(),
        prior_error: error_of(&prior_mean)?,
        prior_mean,
        prior_std: prior.std(),
        history: Vec::new(),
        converged: false,
    };

    for k in 1..=opts.max_iter {
        let observed: Vec<DVector<f64>> = state
            .params
            .members()
            .par_iter()
            .map(|z| propagator.propagate(z).and_then(|s| observe(&s, obs)))
            .collect::<Result<_>>()
            .map_err(|e| Error::Propagation {
                iteration: k,
                source: Box::new(e),
            })?;

        let n = observed.len();
        let hx = DMatrix::from_fn(n, obs.n_obs(), |i, j| observed[i][j]);
        let misfit = obs.normalized_misfit(&hx.row_mean().transpose());

        let ens = AugmentedEnsemble::new(hx, state.params.to_matrix())?;
        let seed = rng::derive_seed(opts.seed, &[domain::ITERATION, k as u64]);
        let updated = kalman_update(&ens, obs, seed, opts.perturbed)?;
        state.params = ParamEnsemble::from_rows(&updated.params)?;
        state.iteration = k;

        let mean = state.params.mean();
        let error = error_of(&mean)?;
        info!(
            "iteration {k}: misfit {misfit:.4e}{}",
            error.map(|e| format!(", relative error {:.4e}", e.plain)).unwrap_or_default()
        );
        state.history.push(IterationRecord {
            iter: k,
            misfit,
            error,
            param_std: state.params.std(),
            param_mean: mean,
        });

        if misfit <= 1.0 && k >= opts.min_iter {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}
