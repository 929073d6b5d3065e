use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ParamEnsemble;
use crate::rng::{self, domain};

/// Axis-aligned box `∏ [lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPrior {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxPrior {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::invalid("box bounds must be non-empty and equal length"));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
        {
            return Err(Error::invalid("box requires finite lower < upper"));
        }
        Ok(Self { lower, upper })
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        z.len() == self.dim()
            && z
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| (l..=u).contains(&v))
    }
}

/// Latin hypercube design: in every dimension each of the `n_s` equal-width
/// strata holds exactly one point.
pub fn lhs_sample(prior: &BoxPrior, n_s: usize, seed: u64) -> Result<ParamEnsemble> {
    if n_s == 0 {
        return Err(Error::invalid("LHS needs at least one sample"));
    }
    let d = prior.dim();
    let mut points = vec![DVector::zeros(d); n_s];
    for dim in 0..d {
        let mut rng = rng::stream(seed, &[domain::LHS, dim as u64]);
        let mut strata: Vec<usize> = (0..n_s).collect();
        strata.shuffle(&mut rng);
        let (lo, hi) = (prior.lower[dim], prior.upper[dim]);
        for (point, &k) in points.iter_mut().zip(&strata) {
            let u: f64 = rng.random();
            let t = (k as f64 + u) / n_s as f64;
            point[dim] = (lo + (hi - lo) * t).min(hi);
        }
    }
    ParamEnsemble::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stratum(x: f64, lo: f64, hi: f64, n: usize) -> usize {
        (((x - lo) / (hi - lo)) * n as f64).floor().min((n - 1) as f64) as usize
    }

    #[test]
    fn single_sample_is_inside() {
        let b = BoxPrior::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let e = lhs_sample(&b, 1, 3).unwrap();
        assert_eq!(e.len(), 1);
        assert!(b.contains(e.get(0)));
    }

    #[test]
    fn four_strata_on_zero_four() {
        let b = BoxPrior::interval(0.0, 4.0).unwrap();
        let e = lhs_sample(&b, 4, 99).unwrap();
        let mut hit = [false; 4];
        for z in &e {
            hit[z[0].floor() as usize] = true;
        }
        assert_eq!(hit, [true; 4]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(BoxPrior::interval(1.0, 1.0).is_err());
        assert!(BoxPrior::new(vec![0.0], vec![1.0, 2.0]).is_err());
        let b = BoxPrior::interval(0.0, 1.0).unwrap();
        assert!(lhs_sample(&b, 0, 0).is_err());
    }

    #[test]
    fn reproducible_case_one_prior() {
        let b = BoxPrior::interval(0.15, 0.25).unwrap();
        let a = lhs_sample(&b, 30, 2024).unwrap();
        assert_eq!(a, lhs_sample(&b, 30, 2024).unwrap());
        assert_ne!(a, lhs_sample(&b, 30, 2025).unwrap());
        // histogram oracle: 30 bins of width 1/300, one count each
        let mut counts = [0usize; 30];
        for z in &a {
            counts[stratum(z[0], 0.15, 0.25, 30)] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1));
    }

    proptest! {
        #[test]
        fn stratification_holds(n in 1usize..60, d in 1usize..5, seed in any::<u64>()) {
            let lower: Vec<f64> = (0..d).map(|i| -(i as f64) - 0.5).collect();
            let upper: Vec<f64> = (0..d).map(|i| 2.0 * i as f64 + 1.0).collect();
            let b = BoxPrior::new(lower.clone(), upper.clone()).unwrap();
            let e = lhs_sample(&b, n, seed).unwrap();
            for dim in 0..d {
                let mut counts = vec![0usize; n];
                for z in &e {
                    prop_assert!(b.contains(z));
                    counts[stratum(z[dim], lower[dim], upper[dim], n)] += 1;
                }
                prop_assert!(counts.iter().all(|&c| c == 1));
            }
        }
    }
}
