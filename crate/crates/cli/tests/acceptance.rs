//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Run with `cargo test -p bfenkf-cli --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use bfenkf::bifidelity::{bf_predict, pivoted_cholesky_select, train_bf, SnapshotMatrix, TrainOptions};
use bfenkf::enkf::{kalman_update, AugmentedEnsemble, ObservationSet};
use bfenkf::experiment::{cmd_sweep, cmd_train, cmd_validate, kl_basis_for, CaseConfig, Mode};
use bfenkf::fields::{build_kl_basis, gaussian_sample, sample_field};
use bfenkf::forward::{ForwardModel, LinearToy};
use bfenkf::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn case1(dir: &Path) -> CaseConfig {
    let mut c = CaseConfig::case1();
    c.out_dir = dir.to_path_buf();
    c
}

fn final_errors(cfg: &CaseConfig, mode: Mode) -> Vec<f64> {
    let sweep = cmd_sweep(cfg, None, mode, &SEEDS).expect("sweep");
    sweep
        .runs
        .iter()
        .map(|(_, st)| st.final_error().expect("truth set").plain)
        .collect()
}

fn case1_reproduction(cfg: &CaseConfig) -> Outcome {
    let errs = final_errors(cfg, Mode::Bf);
    let med = median(&errs);
    outcome(
        med < 0.02,
        format!("median BF error over {} seeds {med:.4} (< 0.02); runs {errs:.4?}", errs.len()),
    )
}

fn baseline_ordering(cfg: &CaseConfig) -> Outcome {
    let bf = median(&final_errors(cfg, Mode::Bf));
    let hf = median(&final_errors(cfg, Mode::Hf));
    let lf = median(&final_errors(cfg, Mode::Lf));
    let ordered = bf < hf && hf < lf;
    outcome(
        ordered && lf > 0.5 && hf > 0.2,
        format!("median errors BF {bf:.4} < HF-budget {hf:.4} < LF {lf:.4}; LF > 0.5, HF > 0.2"),
    )
}

// brute-force greedy: farthest remaining row from the span of the picks,
// distances from a QR least-squares fit, lowest index on ties
fn greedy_oracle(rows: &[DVector<f64>], m: usize) -> Vec<usize> {
    let dist = |v: &DVector<f64>, sel: &[usize]| -> f64 {
        if sel.is_empty() {
            return v.norm();
        }
        let a = DMatrix::from_fn(v.len(), sel.len(), |i, j| rows[sel[j]][i]);
        let qr = a.clone().qr();
        let c = qr.r().solve_upper_triangular(&(qr.q().transpose() * v)).expect("full rank");
        (v - a * c).norm()
    };
    let mut sel = Vec::new();
    for _ in 0..m {
        let (mut best, mut best_d) = (usize::MAX, -1.0);
        for (i, row) in rows.iter().enumerate() {
            if !sel.contains(&i) {
                let d = dist(row, &sel);
                if d > best_d {
                    best_d = d;
                    best = i;
                }
            }
        }
        sel.push(best);
    }
    sel
}

fn selection_oracle() -> Outcome {
    let mut matches = 0;
    let trials = 100;
    for t in 0..trials {
        let mut r = rng::stream(31, &[t]);
        let big_m = r.random_range(2..=30);
        let n = r.random_range(2..=50);
        let rows: Vec<DVector<f64>> = (0..big_m)
            .map(|_| DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0)))
            .collect();
        // stop one short of the rank so the last pick is not a roundoff race
        let m = (big_m.min(n) - 1).max(1);
        let sel = pivoted_cholesky_select(&SnapshotMatrix::from_rows(rows.clone()).unwrap(), m).unwrap();
        if sel.indices == greedy_oracle(&rows, m) {
            matches += 1;
        }
    }
    outcome(matches == trials, format!("{matches}/{trials} random instances match the brute-force greedy order"))
}

fn linear_gaussian() -> Outcome {
    let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.8, 0.8]);
    let mu = DVector::from_vec(vec![1.0, 2.0]);
    let sigma = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
    let chol = sigma.clone().cholesky().unwrap().l();
    let y = &a * DVector::from_vec(vec![1.4, 1.6]);
    let r = DVector::from_element(3, 0.2);
    let obs = ObservationSet::new(y.clone(), vec![0, 1, 2], r.clone()).unwrap();
    let s = &a * &sigma * a.transpose() + DMatrix::from_diagonal(&r.map(|x| x * x));
    let exact = &mu + &sigma * a.transpose() * s.try_inverse().unwrap() * (&y - &a * &mu);

    let mut medians = Vec::new();
    let mut worst_at_max = 0.0f64;
    for (e, n_s) in [100usize, 1_000, 10_000, 100_000].into_iter().enumerate() {
        let errs: Vec<f64> = (0..20u64)
            .map(|seed| {
                let xi = gaussian_sample(n_s, 2, 1000 * e as u64 + seed).unwrap();
                let params = DMatrix::from_fn(n_s, 2, |i, j| (&mu + &chol * xi.get(i))[j]);
                let states = &params * a.transpose();
                let ens = AugmentedEnsemble::new(states, params).unwrap();
                let out = kalman_update(&ens, &obs, 7000 + seed, true).unwrap();
                let mean = out.params.row_mean().transpose();
                (0..2).map(|j| ((mean[j] - exact[j]) / exact[j]).abs()).fold(0.0, f64::max)
            })
            .collect();
        if n_s == 100_000 {
            worst_at_max = errs.iter().cloned().fold(0.0, f64::max);
        }
        medians.push(median(&errs));
    }
    let monotone = medians.windows(2).all(|w| w[1] < w[0]);
    outcome(
        monotone && worst_at_max < 0.02,
        format!(
            "median relative error at n_s = 1e2..1e5: {medians:.5?}; worst of 20 seeds at 1e5 {worst_at_max:.5} (< 0.02)"
        ),
    )
}

fn interpolation(cfg: &CaseConfig) -> Outcome {
    let model = bfenkf::bifidelity::load_model(&cfg.out_dir.join("bf_model.bin")).unwrap();
    let models = bfenkf::experiment::build_models(cfg).unwrap();
    let mut worst_train = 0.0f64;
    for (z, v_hf) in model.selected_params().iter().zip(model.hf_basis().rows()) {
        let v = bf_predict(&model, z, models.lf.as_ref()).unwrap().values;
        worst_train = worst_train.max((v - v_hf).norm() / v_hf.norm());
    }

    // identical fidelities with a basis spanning the whole solution space
    let mut r = rng::stream(5, &[0]);
    let a = DMatrix::from_fn(60, 4, |_, _| r.random_range(-1.0..1.0));
    let toy = LinearToy::new(a);
    let cands = gaussian_sample(40, 4, 6).unwrap();
    let bf = train_bf(&toy, &toy, &cands, TrainOptions { early_stop: false, ..TrainOptions::new(4) }).unwrap();
    let mut worst_any = 0.0f64;
    for z in &gaussian_sample(25, 4, 8).unwrap() {
        let exact = toy.evaluate(z).unwrap().values;
        let v = bf_predict(&bf, z, &toy).unwrap().values;
        worst_any = worst_any.max((v - &exact).norm() / exact.norm());
    }
    outcome(
        worst_train < 1e-9 && worst_any < 1e-9,
        format!(
            "training points reproduced to {worst_train:.2e}; identical fidelities with full basis to {worst_any:.2e} (< 1e-9)"
        ),
    )
}

fn bound_validity(cfg: &CaseConfig) -> Outcome {
    let v = cmd_validate(cfg, None, 20, cfg.seed).unwrap();
    let frac = v.fraction_held();
    let worst = v.points.iter().map(|p| p.bf_rel_error).fold(0.0, f64::max);
    outcome(
        frac >= 0.9,
        format!(
            "bound {:.3e} held at {frac:.2} of 20 points (>= 0.9); largest measured error {worst:.3e}",
            v.points[0].bound
        ),
    )
}

fn kl_properties() -> Outcome {
    let cfg = CaseConfig::field_analog();
    let truncated = kl_basis_for(&cfg).unwrap();
    let n = truncated.n_points();
    let full = build_kl_basis(truncated.points(), truncated.kernel(), n).unwrap();
    let ev = full.eigenvalues();
    let sorted = ev.iter().zip(ev.iter().skip(1)).all(|(a, b)| a >= b) && ev.iter().all(|&x| x >= 0.0);
    let ortho = (full.modes().transpose() * full.modes() - DMatrix::identity(n, n)).amax();

    let draws = gaussian_sample(10_000, n, 404).unwrap();
    let mut cov = DMatrix::zeros(n, n);
    for w in &draws {
        let f = sample_field(&full, w).unwrap();
        cov += &f * f.transpose();
    }
    cov /= draws.len() as f64;
    let k = full.kernel().covariance(full.points());
    let rel = (&cov - &k).norm() / k.norm();
    outcome(
        sorted && ortho < 1e-8 && rel < 0.05,
        format!(
            "{n} nodes: eigenvalues sorted and non-negative {sorted}; orthonormality defect {ortho:.1e} (< 1e-8); \
             Monte-Carlo covariance error {rel:.4} (< 0.05) at 1e4 draws; first {} modes keep {:.1}% energy",
            truncated.n_modes(),
            100.0 * truncated.retained_energy()
        ),
    )
}

fn field_analog(root: &Path) -> Outcome {
    let mut cfg = CaseConfig::field_analog();
    cfg.out_dir = root.join("field");
    cmd_train(&cfg).unwrap();
    let sweep = cmd_sweep(&cfg, None, Mode::Bf, &SEEDS).unwrap();
    let hist: Vec<f64> = sweep.rows.iter().map(|r| r.e_plain_median).collect();
    let iters = hist.len() - 1;
    let monotone = hist.windows(2).all(|w| w[1] < w[0]);
    let factor = hist[0] / hist[iters];
    outcome(
        monotone && iters >= cfg.inversion.min_iter && factor >= 3.0,
        format!(
            "median error over {} seeds by iteration {hist:.4?}; monotone {monotone}; prior/final {factor:.1} (>= 3)",
            SEEDS.len()
        ),
    )
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_bfenkf"))
}

fn run_cli(args: &[String]) {
    let status = Command::new(bin())
        .args(args)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .status()
        .expect("spawn bfenkf");
    assert!(status.success(), "bfenkf {args:?} failed: {status}");
}

fn collect_outputs(dir: &Path, base: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_outputs(&path, base, out);
        } else if matches!(path.extension().and_then(|e| e.to_str()), Some("csv" | "bin")) {
            out.insert(path.strip_prefix(base).unwrap().to_path_buf(), fs::read(&path).unwrap());
        }
    }
}

fn thread_determinism(root: &Path) -> Outcome {
    let mut runs = Vec::new();
    for threads in ["1", "4"] {
        let out = root.join(format!("threads_{threads}"));
        let o = out.to_str().unwrap();
        let with = |cmd: &[&'static str]| -> Vec<String> {
            cmd.iter().map(|s| s.to_string()).chain(["--threads", threads, "--out", o].map(String::from)).collect()
        };
        run_cli(&with(&["train"]));
        run_cli(&with(&["invert", "--mode", "bf"]));
        run_cli(&with(&["invert", "--mode", "hf"]));
        run_cli(&with(&["validate", "--n-test", "8"]));
        run_cli(&with(&["sweep", "--mode", "bf", "--seeds", "3,4"]));
        run_cli(&with(&["train", "--case", "field-analog"]));
        run_cli(&with(&["invert", "--case", "field-analog", "--mode", "bf"]));
        let mut files = BTreeMap::new();
        collect_outputs(&out, &out, &mut files);
        runs.push(files);
    }
    let (a, b) = (&runs[0], &runs[1]);
    let same_names = a.keys().eq(b.keys());
    let differing: Vec<_> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    outcome(
        same_names && differing.is_empty() && !a.is_empty(),
        format!(
            "{} CSV/binary artifacts compared between --threads 1 and 4; differing {differing:?}",
            a.len()
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let c1 = case1(&root.join("case1"));
    let t = Instant::now();
    cmd_train(&c1).expect("Case-1 training");
    eprintln!("Case-1 training took {:.1}s", t.elapsed().as_secs_f64());

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("Case-1 reproduction", Box::new(|| case1_reproduction(&c1))),
        ("baseline ordering", Box::new(|| baseline_ordering(&c1))),
        ("selection oracle", Box::new(selection_oracle)),
        ("linear-Gaussian oracle", Box::new(linear_gaussian)),
        ("BF interpolation and degenerate exactness", Box::new(|| interpolation(&c1))),
        ("error-bound validity", Box::new(|| bound_validity(&c1))),
        ("K-L properties", Box::new(kl_properties)),
        ("field-inversion analog", Box::new(|| field_analog(root))),
        ("determinism across thread counts", Box::new(|| thread_determinism(root))),
    ];

    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] {name}: {} ({:.1}s) {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
