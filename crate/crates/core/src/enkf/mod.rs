//! Iterative ensemble Kalman inversion: observations, the analysis update,
//! and the propagate/update loop.

mod inversion;
mod update;

pub use inversion::{
    relative_error_e, run_inversion, ErrorMetric, InversionOptions, InversionState,
    IterationRecord, ModelPropagator, Propagator,
};
pub use update::{kalman_update, AugmentedEnsemble};

use std::io::{Read, Write};

use nalgebra::DVector;
use rand::seq::index;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, ParamPoint, Snapshot};
use crate::rng::{self, domain};

/// Relative floor applied to the noise level, as a fraction of `RMS(y)`.
pub const NOISE_FLOOR: f64 = 1e-3;

/// Data `y = H v + noise` with a diagonal noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    y: DVector<f64>,
    obs_indices: Vec<usize>,
    noise_std: DVector<f64>,
}

impl ObservationSet {
    pub fn new(y: DVector<f64>, obs_indices: Vec<usize>, noise_std: DVector<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::invalid("at least one observation is required"));
        }
        if obs_indices.len() != y.len() || noise_std.len() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "observation set",
                expected: y.len(),
                actual: if obs_indices.len() != y.len() {
                    obs_indices.len()
                } else {
                    noise_std.len()
                },
            });
        }
        let mut sorted = obs_indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("observation indices must be distinct"));
        }
        if noise_std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("noise standard deviations must be positive"));
        }
        Ok(Self {
            y,
            obs_indices,
            noise_std,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn indices(&self) -> &[usize] {
        &self.obs_indices
    }

    pub fn noise_std(&self) -> &DVector<f64> {
        &self.noise_std
    }

    /// `‖(y − h) / σ‖ / √n_obs`.
    pub fn normalized_misfit(&self, h: &DVector<f64>) -> f64 {
        let s: f64 = self
            .y
            .iter()
            .zip(h.iter())
            .zip(self.noise_std.iter())
            .map(|((y, h), s)| ((y - h) / s).powi(2))
            .sum();
        (s / self.n_obs() as f64).sqrt()
    }

    /// CSV with columns `index,y,noise_std`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["index", "y", "noise_std"])?;
        for ((i, y), s) in self.obs_indices.iter().zip(self.y.iter()).zip(self.noise_std.iter()) {
            wtr.write_record([i.to_string(), format!("{y:e}"), format!("{s:e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut idx = Vec::new();
        let mut y = Vec::new();
        let mut s = Vec::new();
        for rec in csv::Reader::from_reader(r).records() {
            let rec = rec?;
            let bad = |what: &str| Error::invalid(format!("bad {what} in observation CSV"));
            idx.push(rec[0].trim().parse().map_err(|_| bad("index"))?);
            y.push(rec[1].trim().parse().map_err(|_| bad("y"))?);
            s.push(rec[2].trim().parse().map_err(|_| bad("noise_std"))?);
        }
        Self::new(DVector::from_vec(y), idx, DVector::from_vec(s))
    }
}

/// Gathers the observed entries of a snapshot (the linear map `H`).
pub fn observe(snapshot: &Snapshot, obs: &ObservationSet) -> Result<DVector<f64>> {
    gather(&snapshot.values, &obs.obs_indices)
}

fn gather(v: &DVector<f64>, indices: &[usize]) -> Result<DVector<f64>> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= v.len()) {
        return Err(Error::invalid(format!(
            "observation index {bad} out of range for a state of length {}",
            v.len()
        )));
    }
    Ok(DVector::from_iterator(indices.len(), indices.iter().map(|&i| v[i])))
}

/// Runs the truth model at `z_true`, observes `⌈obs_fraction · n⌉` distinct
/// random cells, and adds Gaussian noise with standard deviation
/// `noise_fraction · |truth|` per entry. The recorded `noise_std` is floored
/// at [`NOISE_FLOOR`]` · RMS(truth)` so noise-free data stays usable.
pub fn synthesize_data(
    truth_model: &dyn ForwardModel,
    z_true: &ParamPoint,
    obs_fraction: f64,
    noise_fraction: f64,
    seed: u64,
) -> Result<ObservationSet> {
    if !(obs_fraction > 0.0 && obs_fraction <= 1.0) {
        return Err(Error::invalid(format!("obs_fraction {obs_fraction} not in (0, 1]")));
    }
    if !(noise_fraction >= 0.0 && noise_fraction.is_finite()) {
        return Err(Error::invalid(format!("noise_fraction {noise_fraction} must be ≥ 0")));
    }
    let truth = truth_model.evaluate_checked(z_true)?;
    let n = truth.len();
    let n_obs = ((obs_fraction * n as f64).ceil() as usize).clamp(1, n);

    let mut rng = rng::stream(seed, &[domain::OBSERVATION]);
    let mut indices = index::sample(&mut rng, n, n_obs).into_vec();
    indices.sort_unstable();
    let clean = gather(&truth.values, &indices)?;

    let std_true = clean.map(|v| noise_fraction * v.abs());
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let y = DVector::from_iterator(
        n_obs,
        clean
            .iter()
            .zip(std_true.iter())
            .map(|(v, s)| v + s * normal.sample(&mut rng)),
    );

    let rms = (clean.norm_squared() / n_obs as f64).sqrt();
    let floor = if rms > 0.0 { NOISE_FLOOR * rms } else { NOISE_FLOOR };
    let noise_std = std_true.map(|s| s.max(floor));
    ObservationSet::new(y, indices, noise_std)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sets() {
        let v = |x: &[f64]| DVector::from_vec(x.to_vec());
        assert!(ObservationSet::new(v(&[]), vec![], v(&[])).is_err());
        assert!(ObservationSet::new(v(&[1.0, 2.0]), vec![3, 3], v(&[1.0, 1.0])).is_err());
        assert!(ObservationSet::new(v(&[1.0]), vec![0], v(&[0.0])).is_err());
        assert!(ObservationSet::new(v(&[1.0]), vec![0, 1], v(&[1.0])).is_err());
        let o = ObservationSet::new(v(&[1.0]), vec![5], v(&[1.0])).unwrap();
        assert!(observe(&Snapshot::gridless(v(&[1.0, 2.0])), &o).is_err());
    }

    #[test]
    fn misfit_is_normalized() {
        let o = ObservationSet::new(
            DVector::from_vec(vec![1.0, 1.0]),
            vec![0, 1],
            DVector::from_vec(vec![0.5, 0.5]),
        )
        .unwrap();
        let h = DVector::from_vec(vec![1.5, 0.5]);
        assert!((o.normalized_misfit(&h) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let o = ObservationSet::new(
            DVector::from_vec(vec![0.25, -1.5e-7]),
            vec![7, 2],
            DVector::from_vec(vec![1e-3, 0.1]),
        )
        .unwrap();
        let mut buf = Vec::new();
        o.write_csv(&mut buf).unwrap();
        assert_eq!(ObservationSet::read_csv(buf.as_slice()).unwrap(), o);
    }
}
