use std::path::PathBuf;

use bfenkf::forward::snapshot_io;
use bfenkf::forward::*;
use nalgebra::DVector;

fn dt(d: f64) -> DVector<f64> {
    DVector::from_vec(vec![d])
}

fn rel_l2(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Independent point-SOR solver for the same cell-centred Laplace problem
/// (ghost-cell Dirichlet faces), left/bottom = 1, right/top = 0.
fn sor_laplace(n: usize) -> DVector<f64> {
    let mut t = vec![0.5; n * n];
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / n as f64).sin());
    for _ in 0..50_000 {
        let mut change: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                let p = j * n + i;
                let (mut sum, mut weight) = (0.0, 0.0);
                let mut face = |v: f64, w: f64| {
                    sum += w * v;
                    weight += w;
                };
                if i + 1 < n { face(t[p + 1], 1.0) } else { face(0.0, 2.0) }
                if i > 0 { face(t[p - 1], 1.0) } else { face(1.0, 2.0) }
                if j + 1 < n { face(t[p + n], 1.0) } else { face(0.0, 2.0) }
                if j > 0 { face(t[p - n], 1.0) } else { face(1.0, 2.0) }
                let new = t[p] + omega * (sum / weight - t[p]);
                change = change.max((new - t[p]).abs());
                t[p] = new;
            }
        }
        if change < 1e-14 {
            break;
        }
    }
    DVector::from_vec(t)
}

/// Independent node-based central finite differences, solved by SOR.
fn fd_nodes(n: usize, d: f64) -> Vec<f64> {
    let m = n + 1;
    let mut t = vec![0.0; m * m];
    for k in 0..m {
        t[k] = 1.0;
        t[k * m] = 1.0;
    }
    let h = 1.0 / n as f64;
    let (dd, c) = (d / (h * h), 1.0 / (2.0 * h));
    for _ in 0..200_000 {
        let mut change: f64 = 0.0;
        for j in 1..n {
            for i in 1..n {
                let p = j * m + i;
                let val = ((dd - c) * (t[p + 1] + t[p + m]) + (dd + c) * (t[p - 1] + t[p - m]))
                    / (4.0 * dd);
                let new = t[p] + 1.5 * (val - t[p]);
                change = change.max((new - t[p]).abs());
                t[p] = new;
            }
        }
        if change < 1e-13 {
            break;
        }
    }
    t
}

fn bilinear_nodes(t: &[f64], n: usize, x: f64, y: f64) -> f64 {
    let m = n + 1;
    let (fx, fy) = (x * n as f64, y * n as f64);
    let (ki, kj) = ((fx.floor() as usize).min(n - 1), (fy.floor() as usize).min(n - 1));
    let (wx, wy) = (fx - ki as f64, fy - kj as f64);
    (1.0 - wx) * (1.0 - wy) * t[kj * m + ki]
        + wx * (1.0 - wy) * t[kj * m + ki + 1]
        + (1.0 - wx) * wy * t[(kj + 1) * m + ki]
        + wx * wy * t[(kj + 1) * m + ki + 1]
}

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/convdiff_dt0025_100x100.bin")
}

#[test]
fn sharp_front_field_matches_fixture_and_fd_cross_check() {
    let cfg = ConvDiffConfig::scalar_diffusivity();
    let g = GridSpec::square(100).unwrap();
    let s = solve_convdiff(&cfg, g, &dt(0.025)).unwrap();

    // bounded, small overshoot at most
    let eps = 1e-6;
    assert!(s.values.min() >= -eps && s.values.max() <= 1.0 + eps);

    if std::env::var_os("BFENKF_REGEN_FIXTURES").is_some() {
        snapshot_io::save_binary(&fixture_path(), &s).unwrap();
    }
    let fixture = snapshot_io::load_binary(&fixture_path()).unwrap();
    assert_eq!(fixture.grid, Some(g));
    assert!((&fixture.values - &s.values).amax() < 1e-12);

    // coarse node-based FD converges toward the FV field
    let mut errs = Vec::new();
    for n in [40usize, 50, 80] {
        let t = fd_nodes(n, 0.025);
        let fd = DVector::from_fn(g.cells(), |p, _| {
            let (x, y) = g.cell_center(p % 100, p / 100);
            bilinear_nodes(&t, n, x, y)
        });
        errs.push(rel_l2(&s.values, &fd));
    }
    assert!(errs[1] < 2e-2, "FD(50) vs FV(100) {:e}", errs[1]);
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn diffusion_dominated_limit_approaches_laplace() {
    let cfg = ConvDiffConfig::scalar_diffusivity();
    let g = GridSpec::square(100).unwrap();
    let laplace = sor_laplace(100);
    let gap = |d: f64| rel_l2(&solve_convdiff(&cfg, g, &dt(d)).unwrap().values, &laplace);
    let (g100, g1000) = (gap(100.0), gap(1000.0));
    // convection perturbs the Laplace field at O(1/D)
    assert!(g100 < 1.5e-3, "{g100:e}");
    assert!(g1000 < 1e-3, "{g1000:e}");
    assert!((g100 / g1000 - 10.0).abs() < 0.1, "{g100:e} {g1000:e}");
}

#[test]
fn solution_is_linear_in_boundary_data() {
    let g = GridSpec::new(17, 13).unwrap();
    for scheme in [ConvectionScheme::Central, ConvectionScheme::Upwind] {
        let base = ConvDiffConfig::scalar_diffusivity().with_scheme(scheme);
        let one = solve_convdiff(&base, g, &dt(0.07)).unwrap();
        for alpha in [-2.5, 0.3, 4.0] {
            let mut cfg = base.clone();
            cfg.left_bottom = LeftBottomBc::Constant(alpha);
            let scaled = solve_convdiff(&cfg, g, &dt(0.07)).unwrap();
            assert!((&scaled.values - &one.values * alpha).amax() < 1e-10 * alpha.abs());
        }
    }
}

fn coarsen(s: &Snapshot) -> DVector<f64> {
    let g = s.grid.unwrap();
    let (nx, ny) = (g.nx() / 2, g.ny() / 2);
    DVector::from_fn(nx * ny, |p, _| {
        let (i, j) = (p % nx, p / nx);
        let at = |a: usize, b: usize| s.values[g.index(a, b)];
        0.25 * (at(2 * i, 2 * j) + at(2 * i + 1, 2 * j) + at(2 * i, 2 * j + 1) + at(2 * i + 1, 2 * j + 1))
    })
}

#[test]
fn refinement_differences_shrink() {
    let cfg = ConvDiffConfig::scalar_diffusivity();
    let solve = |n| solve_convdiff(&cfg, GridSpec::square(n).unwrap(), &dt(0.025)).unwrap();
    let (s50, s100, s200) = (solve(50), solve(100), solve(200));
    let coarse_diff = rel_l2(&coarsen(&s100), &s50.values);
    let fine_diff = rel_l2(&coarsen(&s200), &s100.values);
    assert!(fine_diff < coarse_diff, "{fine_diff:e} vs {coarse_diff:e}");
}

#[test]
fn low_fidelity_grid_is_grossly_wrong_but_deterministic() {
    let pair = make_fidelity_pair(&PairSpec::scalar_diffusivity());
    let z = dt(0.025);
    let lf = pair.lf.evaluate(&z).unwrap();
    assert_eq!(lf, pair.lf.evaluate(&z).unwrap());
    let hf = pair.hf.evaluate(&z).unwrap();
    assert_eq!(hf, pair.hf.evaluate(&z).unwrap());
    let lf_up = prolongate(&lf, hf.grid.unwrap()).unwrap();
    let err = rel_l2(&lf_up.values, &hf.values);
    eprintln!("LF(7x7) vs HF(100x100) relative L2 at D_T=0.025: {err:.3}");
    // cell Peclet ≈ 5.7 on the coarse grid: central differencing oscillates
    assert!(lf.values.max() > 1.0);
}
