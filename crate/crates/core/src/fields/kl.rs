use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::artifact::{self, KL_TAG};
use crate::error::{Error, Result};
use crate::forward::ParamEnsemble;
use crate::rng::{self, domain};

/// Eigenvalues below `-NEGATIVE_TOL · λ_1` mean the kernel is not a covariance.
const NEGATIVE_TOL: f64 = 1e-10;

/// Stationary exponential covariance `k(r) = σ0² exp(−r / (2 l²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub sigma0: f64,
    pub length_scale: f64,
}

impl KernelSpec {
    pub fn new(sigma0: f64, length_scale: f64) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) || !(length_scale > 0.0 && length_scale.is_finite())
        {
            return Err(Error::invalid("kernel needs sigma0 > 0 and length_scale > 0"));
        }
        Ok(Self {
            sigma0,
            length_scale,
        })
    }

    pub fn eval(&self, r: f64) -> f64 {
        let l = self.length_scale;
        self.sigma0 * self.sigma0 * (-r / (2.0 * l * l)).exp()
    }

    /// Covariance matrix over the rows of `points`.
    pub fn covariance(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let n = points.nrows();
        DMatrix::from_fn(n, n, |i, j| {
            let r = (points.row(i) - points.row(j)).norm();
            self.eval(r)
        })
    }
}

/// Truncated discrete K-L basis over a fixed point set.
#[derive(Debug, Clone, PartialEq)]
pub struct KlBasis {
    kernel: KernelSpec,
    /// one point per row
    points: DMatrix<f64>,
    /// full spectrum, non-increasing, clamped at zero
    eigenvalues: DVector<f64>,
    /// `n_points × n_k`, orthonormal columns
    modes: DMatrix<f64>,
}

impl KlBasis {
    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn retained_eigenvalues(&self) -> DVector<f64> {
        self.eigenvalues.rows(0, self.n_modes()).into_owned()
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    /// `Σ_{i<n} λ_i / Σ_i λ_i`.
    pub fn energy_fraction(&self, n: usize) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return 1.0;
        }
        self.eigenvalues.iter().take(n).sum::<f64>() / total
    }

    pub fn retained_energy(&self) -> f64 {
        self.energy_fraction(self.n_modes())
    }

    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        artifact::write_header(w, KL_TAG)?;
        artifact::write_u64(w, self.n_points() as u64)?;
        artifact::write_u64(w, self.points.ncols() as u64)?;
        artifact::write_u64(w, self.n_modes() as u64)?;
        artifact::write_f64s(w, [self.kernel.sigma0, self.kernel.length_scale].iter())?;
        for r in self.points.row_iter() {
            artifact::write_f64s(w, r.iter())?;
        }
        artifact::write_f64s(w, self.eigenvalues.iter())?;
        for r in self.modes.row_iter() {
            artifact::write_f64s(w, r.iter())?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        artifact::read_header(r, KL_TAG)?;
        let n = artifact::read_u64(r)? as usize;
        let dim = artifact::read_u64(r)? as usize;
        let n_k = artifact::read_u64(r)? as usize;
        if n_k > n {
            return Err(Error::invalid("KL artifact has more modes than points"));
        }
        let k = artifact::read_f64s(r, 2)?;
        let kernel = KernelSpec::new(k[0], k[1])?;
        let points = DMatrix::from_row_slice(n, dim, &artifact::read_f64s(r, n * dim)?);
        let eigenvalues = DVector::from_vec(artifact::read_f64s(r, n)?);
        let modes = DMatrix::from_row_slice(n, n_k, &artifact::read_f64s(r, n * n_k)?);
        Ok(Self {
            kernel,
            points,
            eigenvalues,
            modes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_binary(&mut BufReader::new(File::open(path)?))
    }

    /// Point coordinates followed by `phi_1..phi_nk`, one row per point.
    pub fn write_modes_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.points.ncols()).map(|d| format!("x{d}")).collect();
        header.extend((1..=self.n_modes()).map(|k| format!("phi_{k}")));
        wtr.write_record(&header)?;
        for i in 0..self.n_points() {
            let row: Vec<String> = self
                .points
                .row(i)
                .iter()
                .chain(self.modes.row(i).iter())
                .map(|v| format!("{v:e}"))
                .collect();
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Eigendecomposition of the kernel covariance over `points` (one per row),
/// truncated to the leading `n_k` modes.
pub fn build_kl_basis(points: &DMatrix<f64>, kernel: KernelSpec, n_k: usize) -> Result<KlBasis> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::invalid("K-L basis needs at least one point"));
    }
    if n_k == 0 || n_k > n {
        return Err(Error::invalid(format!(
            "truncation n_k = {n_k} must be in 1..={n}"
        )));
    }
    let cov = kernel.covariance(points);
    let asym = (&cov - cov.transpose()).amax();
    if asym > 1e-12 * cov.amax() {
        return Err(Error::invalid(format!(
            "covariance not symmetric (max asymmetry {asym:e})"
        )));
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let largest = eig.eigenvalues[order[0]];
    let mut eigenvalues = DVector::zeros(n);
    for (slot, &k) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[k];
        if lambda < -NEGATIVE_TOL * largest.abs() {
            return Err(Error::IndefiniteKernel {
                eigenvalue: lambda,
                largest,
            });
        }
        eigenvalues[slot] = lambda.max(0.0);
    }

    let mut modes = DMatrix::zeros(n, n_k);
    for (slot, &k) in order.iter().take(n_k).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        // sign convention: positive sum, else positive first significant entry
        let sum: f64 = v.iter().sum();
        let flip = if sum.abs() > 1e-10 {
            sum < 0.0
        } else {
            v.iter().find(|x| x.abs() > 1e-10).is_some_and(|&x| x < 0.0)
        };
        if flip {
            v.neg_mut();
        }
        modes.set_column(slot, &v);
    }

    Ok(KlBasis {
        kernel,
        points: points.clone(),
        eigenvalues,
        modes,
    })
}

/// `Σ_i √λ_i ω_i φ_i` at every basis point.
pub fn sample_field(basis: &KlBasis, omega: &DVector<f64>) -> Result<DVector<f64>> {
    if omega.len() != basis.n_modes() {
        return Err(Error::DimensionMismatch {
            context: "K-L coefficients",
            expected: basis.n_modes(),
            actual: omega.len(),
        });
    }
    let scaled = DVector::from_fn(basis.n_modes(), |i, _| {
        basis.eigenvalues[i].sqrt() * omega[i]
    });
    Ok(&basis.modes * scaled)
}

/// `n_s` i.i.d. standard normal coefficient vectors of length `n_k`.
pub fn gaussian_sample(n_s: usize, n_k: usize, seed: u64) -> Result<ParamEnsemble> {
    if n_k == 0 {
        return Err(Error::invalid("Gaussian prior needs at least one parameter"));
    }
    if n_s == 0 {
        return Err(Error::invalid("Gaussian prior needs at least one sample"));
    }
    let members = (0..n_s)
        .map(|i| {
            let mut rng = rng::stream(seed, &[domain::GAUSSIAN, i as u64]);
            DVector::from_fn(n_k, |_, _| StandardNormal.sample(&mut rng))
        })
        .collect();
    ParamEnsemble::new(members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_points(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 1, |i, _| i as f64 / (n.max(2) - 1) as f64)
    }

    #[test]
    fn single_point() {
        let k = KernelSpec::new(0.3, 0.5).unwrap();
        let b = build_kl_basis(&DMatrix::zeros(1, 2), k, 1).unwrap();
        assert!((b.eigenvalues()[0] - 0.09).abs() < 1e-15);
        assert!((b.modes()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn long_correlation_is_rank_one() {
        let k = KernelSpec::new(0.5, 1e4).unwrap();
        let pts = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let b = build_kl_basis(&pts, k, 2).unwrap();
        assert!((b.eigenvalues()[0] - 0.5).abs() < 1e-8);
        assert!(b.eigenvalues()[1].abs() < 1e-8);
        let phi = b.modes().column(0);
        assert!((phi[0] - phi[1]).abs() < 1e-8);
        assert!((phi[0] - 0.5f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_truncation_and_kernel() {
        let k = KernelSpec::new(1.0, 1.0).unwrap();
        assert!(build_kl_basis(&line_points(4), k, 0).is_err());
        assert!(build_kl_basis(&line_points(4), k, 5).is_err());
        assert!(KernelSpec::new(0.0, 1.0).is_err());
        assert!(KernelSpec::new(1.0, -1.0).is_err());
    }

    #[test]
    fn sample_field_unit_vectors_and_zero() {
        let k = KernelSpec::new(0.7, 0.4).unwrap();
        let b = build_kl_basis(&line_points(12), k, 3).unwrap();
        assert_eq!(sample_field(&b, &DVector::zeros(3)).unwrap(), DVector::zeros(12));
        let f = sample_field(&b, &DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        let expected = b.modes().column(0) * b.eigenvalues()[0].sqrt();
        assert!((f - expected).amax() < 1e-15);
        assert!(sample_field(&b, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let k = KernelSpec::new(0.2, 0.6).unwrap();
        let b = build_kl_basis(&line_points(7), k, 3).unwrap();
        let mut buf = Vec::new();
        b.write_binary(&mut buf).unwrap();
        assert_eq!(KlBasis::read_binary(&mut buf.as_slice()).unwrap(), b);
    }

    #[test]
    fn gaussian_sampling_moments_and_errors() {
        let e = gaussian_sample(10_000, 3, 17).unwrap();
        let mean = e.mean();
        let std = e.std();
        for i in 0..3 {
            assert!(mean[i].abs() < 0.05, "mean {}", mean[i]);
            assert!((std[i] * std[i] - 1.0).abs() < 0.05, "var {}", std[i] * std[i]);
        }
        assert_eq!(e, gaussian_sample(10_000, 3, 17).unwrap());
        assert!(gaussian_sample(10, 0, 1).is_err());
    }

    proptest! {
        #[test]
        fn spectrum_sorted_modes_orthonormal_energy_monotone(
            n in 2usize..25,
            sigma in 0.05f64..3.0,
            l in 0.05f64..2.0,
        ) {
            let k = KernelSpec::new(sigma, l).unwrap();
            let b = build_kl_basis(&line_points(n), k, n).unwrap();
            let ev = b.eigenvalues();
            for i in 1..n {
                prop_assert!(ev[i - 1] >= ev[i]);
                prop_assert!(ev[i] >= 0.0);
            }
            let gram = b.modes().transpose() * b.modes();
            prop_assert!((gram - DMatrix::identity(n, n)).amax() < 1e-8);
            let mut prev = 0.0;
            for nk in 1..=n {
                let f = b.energy_fraction(nk);
                prop_assert!(f >= prev - 1e-15);
                prev = f;
            }
            prop_assert!((prev - 1.0).abs() < 1e-12);
        }

        #[test]
        fn sample_field_is_linear(
            a in -3.0f64..3.0, c in -3.0f64..3.0,
            w1 in proptest::collection::vec(-2.0f64..2.0, 4),
            w2 in proptest::collection::vec(-2.0f64..2.0, 4),
        ) {
            let k = KernelSpec::new(1.0, 0.5).unwrap();
            let b = build_kl_basis(&line_points(9), k, 4).unwrap();
            let (w1, w2) = (DVector::from_vec(w1), DVector::from_vec(w2));
            let lhs = sample_field(&b, &(&w1 * a + &w2 * c)).unwrap();
            let rhs = sample_field(&b, &w1).unwrap() * a + sample_field(&b, &w2).unwrap() * c;
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }
    }
}
