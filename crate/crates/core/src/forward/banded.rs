//! Band storage LU with partial pivoting for the structured-grid systems.
//!
//! A five-point stencil on an `nx × ny` row-major grid has lower and upper
//! bandwidth `nx`. Row exchanges can push fill up to `kl + ku` above the
//! diagonal, so each row keeps a window of `2·kl + ku + 1` columns.

use crate::error::{Error, Result};

/// Five-point operator on a structured grid, stored by coefficient.
#[derive(Debug, Clone)]
pub struct FivePointSystem {
    pub nx: usize,
    pub ny: usize,
    pub diag: Vec<f64>,
    pub east: Vec<f64>,
    pub west: Vec<f64>,
    pub north: Vec<f64>,
    pub south: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl FivePointSystem {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        let n = nx * ny;
        Self {
            nx,
            ny,
            diag: vec![0.0; n],
            east: vec![0.0; n],
            west: vec![0.0; n],
            north: vec![0.0; n],
            south: vec![0.0; n],
            rhs: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `A·x` using the stencil coefficients.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = vec![0.0; self.len()];
        for j in 0..ny {
            for i in 0..nx {
                let p = j * nx + i;
                let mut acc = self.diag[p] * x[p];
                if i + 1 < nx {
                    acc += self.east[p] * x[p + 1];
                }
                if i > 0 {
                    acc += self.west[p] * x[p - 1];
                }
                if j + 1 < ny {
                    acc += self.north[p] * x[p + nx];
                }
                if j > 0 {
                    acc += self.south[p] * x[p - nx];
                }
                out[p] = acc;
            }
        }
        out
    }

    pub fn residual_norm(&self, x: &[f64]) -> f64 {
        self.apply(x)
            .iter()
            .zip(&self.rhs)
            .map(|(ax, b)| (ax - b) * (ax - b))
            .sum::<f64>()
            .sqrt()
    }

    fn to_band(&self) -> BandMatrix {
        let (nx, ny) = (self.nx, self.ny);
        let mut band = BandMatrix::zeros(self.len(), nx, nx);
        for j in 0..ny {
            for i in 0..nx {
                let p = j * nx + i;
                band.set(p, p, self.diag[p]);
                if i + 1 < nx {
                    band.set(p, p + 1, self.east[p]);
                }
                if i > 0 {
                    band.set(p, p - 1, self.west[p]);
                }
                if j + 1 < ny {
                    band.set(p, p + nx, self.north[p]);
                }
                if j > 0 {
                    band.set(p, p - nx, self.south[p]);
                }
            }
        }
        band
    }

    /// Direct solve with up to two steps of iterative refinement. Fails if the
    /// final residual exceeds `rel_tol · ‖rhs‖`.
    pub fn solve(&self, rel_tol: f64) -> Result<Vec<f64>> {
        let lu = self.to_band().factor()?;
        let mut x = lu.solve(&self.rhs);
        let rhs_norm = self.rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
        let target = rel_tol * rhs_norm.max(f64::MIN_POSITIVE);
        let mut res = self.residual_norm(&x);
        for _ in 0..2 {
            if res <= target {
                break;
            }
            let ax = self.apply(&x);
            let r: Vec<f64> = self.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let dx = lu.solve(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            res = self.residual_norm(&x);
        }
        if !res.is_finite() || res > target {
            return Err(Error::SolverFailure {
                reason: "residual above tolerance after refinement".into(),
                residual: res,
            });
        }
        Ok(x)
    }
}

/// Row-windowed band matrix. Row `i` stores absolute columns
/// `i - kl ..= i + kl + ku` (clipped), leaving room for pivoting fill.
#[derive(Debug, Clone)]
struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    #[inline]
    fn offset(&self, row: usize, col: usize) -> usize {
        debug_assert!(col + self.kl >= row && col <= row + self.kl + self.ku);
        row * self.width + (col + self.kl - row)
    }

    #[inline]
    fn get(&self, row: usize, col: usize) -> f64 {
        self.data[self.offset(row, col)]
    }

    #[inline]
    fn set(&mut self, row: usize, col: usize, v: f64) {
        let o = self.offset(row, col);
        self.data[o] = v;
    }

    fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let reach = self.kl + self.ku;
        let mut pivots = vec![0usize; n];
        let scale = self
            .data
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + reach).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-14 * scale {
                return Err(Error::SolverFailure {
                    reason: format!("zero pivot in column {k}"),
                    residual: f64::NAN,
                });
            }
            pivots[k] = p;
            if p != k {
                for c in k..=last_col {
                    let a = self.offset(k, c);
                    let b = self.offset(p, c);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last_row {
                let factor = self.get(i, k) / pivot;
                if factor == 0.0 {
                    continue;
                }
                self.set(i, k, factor);
                let src = self.offset(k, k + 1);
                let dst = self.offset(i, k + 1);
                let len = last_col - k;
                for t in 0..len {
                    let v = self.data[src + t];
                    self.data[dst + t] -= factor * v;
                }
            }
        }
        Ok(BandLu {
            band: self,
            pivots,
        })
    }
}

#[derive(Debug, Clone)]
struct BandLu {
    band: BandMatrix,
    pivots: Vec<usize>,
}

impl BandLu {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let a = &self.band;
        let n = a.n;
        let mut x = rhs.to_vec();
        // forward: apply row swaps and unit-lower multipliers in factor order
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + a.kl).min(n - 1) {
                    x[i] -= a.get(i, k) * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut acc = x[k];
            for c in k + 1..=(k + a.kl + a.ku).min(n - 1) {
                acc -= a.get(k, c) * x[c];
            }
            x[k] = acc / a.get(k, k);
        }
        x
    }
}
