//! Steady 2-D convection-diffusion, `∇·(u T) − D ∇²T = 0`, on the unit square.
//!
//! Cell-centred finite volumes with Dirichlet data on all four sides. Boundary
//! faces take the prescribed value and the ghost cell is the linear
//! extrapolation `T_g = 2 T_b − T_P`, so the boundary diffusive flux uses the
//! half-cell distance. The resulting linear system is solved directly.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::banded::FivePointSystem;
use super::{ForwardModel, GridSpec, ParamPoint, Snapshot};
use crate::error::{Error, Result};
use crate::fields::{sample_field, KlBasis};

const SOLVE_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvectionScheme {
    /// Second-order linear interpolation of face values.
    #[default]
    Central,
    /// First-order upwind face values.
    Upwind,
}

/// Where the diffusion coefficient comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Diffusivity {
    /// `z[0]`.
    Parameter,
    Fixed(f64),
}

/// The L-shaped boundary made of the left side (walked top to bottom) then
/// the bottom side (left to right), parameterized by arc length `s ∈ [0, 2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryCurve;

impl BoundaryCurve {
    pub const LENGTH: f64 = 2.0;

    pub fn point(s: f64) -> [f64; 2] {
        if s <= 1.0 {
            [0.0, 1.0 - s]
        } else {
            [s - 1.0, 0.0]
        }
    }

    /// `n` uniformly spaced nodes including both end points.
    pub fn nodes(n: usize) -> Vec<[f64; 2]> {
        if n == 1 {
            return vec![Self::point(0.5 * Self::LENGTH)];
        }
        (0..n)
            .map(|k| Self::point(Self::LENGTH * k as f64 / (n - 1) as f64))
            .collect()
    }

    /// Piecewise-linear interpolation of nodal values at arc position `s`.
    pub fn interpolate(values: &[f64], s: f64) -> f64 {
        let n = values.len();
        if n == 1 {
            return values[0];
        }
        let t = (s / Self::LENGTH).clamp(0.0, 1.0) * (n - 1) as f64;
        let k = (t.floor() as usize).min(n - 2);
        let w = t - k as f64;
        (1.0 - w) * values[k] + w * values[k + 1]
    }
}

/// Boundary data on the left and bottom sides.
#[derive(Debug, Clone)]
pub enum LeftBottomBc {
    Constant(f64),
    /// `base + Σ √λ_i ω_i φ_i(s)` with `ω` read from the parameter vector,
    /// `basis` built on [`BoundaryCurve::nodes`].
    KlField { base: f64, basis: Arc<KlBasis> },
    /// `base · exp(Σ √λ_i ω_i φ_i(s))`: a log-normal field, positive and
    /// nonlinear in `ω`.
    KlLogField { base: f64, basis: Arc<KlBasis> },
}

#[derive(Debug, Clone)]
pub struct ConvDiffConfig {
    pub velocity: [f64; 2],
    pub left_bottom: LeftBottomBc,
    pub right_top: f64,
    pub diffusivity: Diffusivity,
    pub scheme: ConvectionScheme,
}

impl ConvDiffConfig {
    /// `u = [1, 1]`, `T = 1` on left/bottom, `T = 0` on right/top, `z = [D_T]`.
    pub fn scalar_diffusivity() -> Self {
        Self {
            velocity: [1.0, 1.0],
            left_bottom: LeftBottomBc::Constant(1.0),
            right_top: 0.0,
            diffusivity: Diffusivity::Parameter,
            scheme: ConvectionScheme::Central,
        }
    }

    /// Fixed diffusivity with a random-field left/bottom boundary;
    /// `z` holds the K-L coefficients.
    pub fn boundary_field(diffusivity: f64, base: f64, basis: Arc<KlBasis>) -> Self {
        Self {
            velocity: [1.0, 1.0],
            left_bottom: LeftBottomBc::KlField { base, basis },
            right_top: 0.0,
            diffusivity: Diffusivity::Fixed(diffusivity),
            scheme: ConvectionScheme::Central,
        }
    }

    /// As [`Self::boundary_field`] with a log-normal boundary.
    pub fn boundary_log_field(diffusivity: f64, base: f64, basis: Arc<KlBasis>) -> Self {
        Self {
            velocity: [1.0, 1.0],
            left_bottom: LeftBottomBc::KlLogField { base, basis },
            right_top: 0.0,
            diffusivity: Diffusivity::Fixed(diffusivity),
            scheme: ConvectionScheme::Central,
        }
    }

    pub fn with_scheme(mut self, scheme: ConvectionScheme) -> Self {
        self.scheme = scheme;
        self
    }

    fn kl_offset(&self) -> usize {
        match self.diffusivity {
            Diffusivity::Parameter => 1,
            Diffusivity::Fixed(_) => 0,
        }
    }

    pub fn param_dim(&self) -> usize {
        let kl = match &self.left_bottom {
            LeftBottomBc::Constant(_) => 0,
            LeftBottomBc::KlField { basis, .. } | LeftBottomBc::KlLogField { basis, .. } => {
                basis.n_modes()
            }
        };
        self.kl_offset() + kl
    }

    fn resolve_diffusivity(&self, z: &ParamPoint) -> f64 {
        match self.diffusivity {
            Diffusivity::Parameter => z[0],
            Diffusivity::Fixed(d) => d,
        }
    }

    /// Nodal values along [`BoundaryCurve`] for the left/bottom data, or
    /// `None` for a constant.
    fn boundary_nodes(&self, z: &ParamPoint) -> Result<Option<Vec<f64>>> {
        match &self.left_bottom {
            LeftBottomBc::Constant(_) => Ok(None),
            LeftBottomBc::KlField { base, basis } => {
                let off = self.kl_offset();
                let omega = z.rows(off, basis.n_modes()).into_owned();
                let field = sample_field(basis, &omega)?;
                Ok(Some(field.iter().map(|f| base + f).collect()))
            }
            LeftBottomBc::KlLogField { base, basis } => {
                let off = self.kl_offset();
                let omega = z.rows(off, basis.n_modes()).into_owned();
                let field = sample_field(basis, &omega)?;
                Ok(Some(field.iter().map(|f| base * f.exp()).collect()))
            }
        }
    }
}

/// Face value weights `(w_owner, w_other)` for an interior face carrying
/// outward flux `flux`.
fn face_weights(scheme: ConvectionScheme, flux: f64) -> (f64, f64) {
    match scheme {
        ConvectionScheme::Central => (0.5, 0.5),
        ConvectionScheme::Upwind if flux >= 0.0 => (1.0, 0.0),
        ConvectionScheme::Upwind => (0.0, 1.0),
    }
}

/// Assembles the finite-volume system for the given boundary values.
/// `left[j]`, `right[j]` are indexed by row, `bottom[i]`, `top[i]` by column.
#[allow(clippy::too_many_arguments)]
fn assemble(
    grid: GridSpec,
    velocity: [f64; 2],
    diffusivity: f64,
    scheme: ConvectionScheme,
    left: &[f64],
    right: &[f64],
    bottom: &[f64],
    top: &[f64],
) -> FivePointSystem {
    let (nx, ny) = (grid.nx(), grid.ny());
    let (hx, hy) = (grid.hx(), grid.hy());
    let mut sys = FivePointSystem::zeros(nx, ny);
    let [ux, uy] = velocity;

    // (outward flux, diffusive conductance, half-cell conductance) per direction
    let ew_area = hy;
    let ns_area = hx;
    let d_ew = diffusivity * ew_area / hx;
    let d_ns = diffusivity * ns_area / hy;

    for j in 0..ny {
        for i in 0..nx {
            let p = grid.index(i, j);
            let mut diag = 0.0;
            let mut rhs = 0.0;

            // east
            let f = ux * ew_area;
            if i + 1 < nx {
                let (wp, wn) = face_weights(scheme, f);
                diag += f * wp + d_ew;
                sys.east[p] = f * wn - d_ew;
            } else {
                let tb = right[j];
                let (wp, wb) = boundary_weights(scheme, f);
                diag += f * wp + 2.0 * d_ew;
                rhs += -f * wb * tb + 2.0 * d_ew * tb;
            }
            // west
            let f = -ux * ew_area;
            if i > 0 {
                let (wp, wn) = face_weights(scheme, f);
                diag += f * wp + d_ew;
                sys.west[p] = f * wn - d_ew;
            } else {
                let tb = left[j];
                let (wp, wb) = boundary_weights(scheme, f);
                diag += f * wp + 2.0 * d_ew;
                rhs += -f * wb * tb + 2.0 * d_ew * tb;
            }
            // north
            let f = uy * ns_area;
            if j + 1 < ny {
                let (wp, wn) = face_weights(scheme, f);
                diag += f * wp + d_ns;
                sys.north[p] = f * wn - d_ns;
            } else {
                let tb = top[i];
                let (wp, wb) = boundary_weights(scheme, f);
                diag += f * wp + 2.0 * d_ns;
                rhs += -f * wb * tb + 2.0 * d_ns * tb;
            }
            // south
            let f = -uy * ns_area;
            if j > 0 {
                let (wp, wn) = face_weights(scheme, f);
                diag += f * wp + d_ns;
                sys.south[p] = f * wn - d_ns;
            } else {
                let tb = bottom[i];
                let (wp, wb) = boundary_weights(scheme, f);
                diag += f * wp + 2.0 * d_ns;
                rhs += -f * wb * tb + 2.0 * d_ns * tb;
            }

            sys.diag[p] = diag;
            sys.rhs[p] = rhs;
        }
    }
    sys
}

/// Face value weights on a Dirichlet face: central uses the boundary value,
/// upwind takes the cell value on outflow.
fn boundary_weights(scheme: ConvectionScheme, flux: f64) -> (f64, f64) {
    match scheme {
        ConvectionScheme::Central => (0.0, 1.0),
        ConvectionScheme::Upwind if flux >= 0.0 => (1.0, 0.0),
        ConvectionScheme::Upwind => (0.0, 1.0),
    }
}

/// Steady solution of the configured problem at parameter `z`.
pub fn solve_convdiff(config: &ConvDiffConfig, grid: GridSpec, z: &ParamPoint) -> Result<Snapshot> {
    if z.len() != config.param_dim() {
        return Err(Error::DimensionMismatch {
            context: "convection-diffusion parameter",
            expected: config.param_dim(),
            actual: z.len(),
        });
    }
    let diffusivity = config.resolve_diffusivity(z);
    if !(diffusivity.is_finite() && diffusivity > 0.0) {
        return Err(Error::SolverFailure {
            reason: format!("diffusivity must be positive, got {diffusivity}"),
            residual: f64::NAN,
        });
    }
    if config.velocity.iter().any(|u| !u.is_finite()) || !config.right_top.is_finite() {
        return Err(Error::invalid("velocity and boundary values must be finite"));
    }

    let (nx, ny) = (grid.nx(), grid.ny());
    let (left, bottom) = match config.boundary_nodes(z)? {
        None => {
            let LeftBottomBc::Constant(c) = config.left_bottom else {
                unreachable!()
            };
            (vec![c; ny], vec![c; nx])
        }
        Some(nodes) => {
            let left = (0..ny)
                .map(|j| BoundaryCurve::interpolate(&nodes, 1.0 - grid.cell_center(0, j).1))
                .collect();
            let bottom = (0..nx)
                .map(|i| BoundaryCurve::interpolate(&nodes, 1.0 + grid.cell_center(i, 0).0))
                .collect();
            (left, bottom)
        }
    };
    if left.iter().chain(&bottom).any(|v: &f64| !v.is_finite()) {
        return Err(Error::invalid("boundary values must be finite"));
    }
    let right = vec![config.right_top; ny];
    let top = vec![config.right_top; nx];

    let sys = assemble(
        grid,
        config.velocity,
        diffusivity,
        config.scheme,
        &left,
        &right,
        &bottom,
        &top,
    );
    let x = sys.solve(SOLVE_REL_TOL)?;
    Snapshot::on_grid(grid, DVector::from_vec(x))
}

/// Forward model wrapper around [`solve_convdiff`].
#[derive(Debug, Clone)]
pub struct ConvDiffModel {
    pub config: ConvDiffConfig,
    pub grid: GridSpec,
}

impl ConvDiffModel {
    pub fn new(config: ConvDiffConfig, grid: GridSpec) -> Self {
        Self { config, grid }
    }
}

impl ForwardModel for ConvDiffModel {
    fn param_dim(&self) -> usize {
        self.config.param_dim()
    }

    fn state_dim(&self) -> usize {
        self.grid.cells()
    }

    fn evaluate(&self, z: &ParamPoint) -> Result<Snapshot> {
        solve_convdiff(&self.config, self.grid, z)
    }

    fn grid(&self) -> Option<GridSpec> {
        Some(self.grid)
    }
}

/// Bilinear interpolation of a cell-centred field onto another grid's cell
/// centres; points outside the source's centre hull take the nearest edge
/// value along each axis.
pub fn prolongate(src: &Snapshot, target: GridSpec) -> Result<Snapshot> {
    let grid = src
        .grid
        .ok_or_else(|| Error::invalid("cannot prolongate a gridless snapshot"))?;
    let axis = |x: f64, h: f64, n: usize| -> (usize, f64) {
        let t = (x / h - 0.5).clamp(0.0, (n - 1) as f64);
        let k = (t.floor() as usize).min(n - 2);
        (k, t - k as f64)
    };
    let v = &src.values;
    let mut out = DVector::zeros(target.cells());
    for j in 0..target.ny() {
        for i in 0..target.nx() {
            let (x, y) = target.cell_center(i, j);
            let (ki, wx) = axis(x, grid.hx(), grid.nx());
            let (kj, wy) = axis(y, grid.hy(), grid.ny());
            let at = |a: usize, b: usize| v[grid.index(a, b)];
            out[target.index(i, j)] = (1.0 - wx) * (1.0 - wy) * at(ki, kj)
                + wx * (1.0 - wy) * at(ki + 1, kj)
                + (1.0 - wx) * wy * at(ki, kj + 1)
                + wx * wy * at(ki + 1, kj + 1);
        }
    }
    Snapshot::on_grid(target, out)
}
