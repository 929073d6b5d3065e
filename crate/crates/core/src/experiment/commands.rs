use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};

use super::config::CaseConfig;
use super::setup::{build_models, purpose, sample, seed_for, CaseModels, CountingModel};
use crate::bifidelity::{bf_predict, load_model, save_model, train_bf, write_report_csv, write_selected_csv, BfModel, TrainOptions};
use crate::enkf::{run_inversion, synthesize_data, InversionOptions, InversionState, ObservationSet};
use crate::error::{Error, Result};
use crate::forward::snapshot_io;
use crate::forward::{prolongate, ForwardModel, ParamPoint, Snapshot};

pub const MODEL_FILE: &str = "bf_model.bin";

/// Which forward propagator drives the inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Bi-fidelity surrogate: one LF solve per member.
    Bf,
    /// LF solve interpolated onto the HF grid.
    Lf,
    /// HF solves under the equal-budget cap.
    Hf,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Bf => "bf",
            Mode::Lf => "lf",
            Mode::Hf => "hf",
        }
    }
}

/// Solve counts, with LF cost measured in units of one HF solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostAccount {
    pub lf_solves: usize,
    pub hf_solves: usize,
    pub cost_ratio: f64,
    /// `hf_solves + lf_solves · cost_ratio`.
    pub hf_equivalent: f64,
    /// HF solves allowed in `hf` mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hf_budget: Option<usize>,
}

impl CostAccount {
    fn new(lf_solves: usize, hf_solves: usize, cost_ratio: f64) -> Self {
        Self {
            lf_solves,
            hf_solves,
            cost_ratio,
            hf_equivalent: hf_solves as f64 + lf_solves as f64 * cost_ratio,
            hf_budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub cost: CostAccount,
    pub config: CaseConfig,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    fn start(command: &str, mode: Option<Mode>, cfg: &CaseConfig) -> Self {
        Self {
            command: command.to_string(),
            mode,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now(),
            finished_unix: 0,
            artifacts: BTreeMap::new(),
            cost: CostAccount::default(),
            config: cfg.clone(),
        }
    }

    /// Stamps the finish time and writes `manifest_<name>.toml` next to
    /// the artifacts.
    fn finish(&mut self, dir: &Path, name: &str) -> Result<PathBuf> {
        self.finished_unix = now();
        if let Some(missing) = self.artifacts.values().find(|p| !p.exists()) {
            return Err(Error::artifact(missing, "missing after run"));
        }
        let path = dir.join(format!("manifest_{name}.toml"));
        let text = toml::to_string_pretty(self).map_err(|e| Error::artifact(&path, e.to_string()))?;
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::artifact(path, e.to_string()))?;
        toml::from_str(&text).map_err(|e| Error::artifact(path, e.to_string()))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::artifact(dir, e.to_string()))
}

fn train_options(cfg: &CaseConfig) -> TrainOptions {
    let t = &cfg.training;
    TrainOptions {
        m_max: t.basis_size,
        re_threshold: t.re_threshold,
        plateau_rel: t.plateau_rel,
        plateau_window: t.plateau_window,
        early_stop: t.early_stop,
    }
}

pub struct TrainOutcome {
    pub model: BfModel,
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
}

/// Offline phase: LF solves on the candidates, greedy selection, HF solves
/// at the selected points. Writes the model archive, the training report and
/// the selected parameters.
pub fn cmd_train(cfg: &CaseConfig) -> Result<TrainOutcome> {
    let mut manifest = RunManifest::start("train", None, cfg);
    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    let models = build_models(cfg)?;
    let lf = CountingModel::new(models.lf.clone());
    let hf = CountingModel::new(models.hf.clone());

    let candidates = sample(
        &cfg.training.candidates,
        cfg.training.n_candidates,
        seed_for(cfg.seed, purpose::CANDIDATES),
    )?;
    let model = train_bf(&lf, &hf, &candidates, train_options(cfg))?;
    info!(
        "basis of {} members ({}), {} LF + {} HF solves",
        model.basis_size(),
        model.stop_reason().as_str(),
        lf.count(),
        hf.count()
    );

    let archive = dir.join(MODEL_FILE);
    save_model(&archive, &model)?;
    let report = dir.join("training_report.csv");
    write_with(&report, |w| write_report_csv(w, model.training_report()))?;
    let selected = dir.join("selected_params.csv");
    write_with(&selected, |w| write_selected_csv(w, &model))?;
    manifest.artifacts.insert("model".into(), archive);
    manifest.artifacts.insert("training_report".into(), report);
    manifest.artifacts.insert("selected_params".into(), selected);
    if let Some(kl) = &models.kl {
        let bin = dir.join("kl_basis.bin");
        kl.save(&bin)?;
        let modes = dir.join("kl_modes.csv");
        write_with(&modes, |w| kl.write_modes_csv(w))?;
        manifest.artifacts.insert("kl_basis".into(), bin);
        manifest.artifacts.insert("kl_modes".into(), modes);
    }
    manifest.cost = CostAccount::new(lf.count(), hf.count(), models.cost_ratio());
    let manifest_path = manifest.finish(dir, "train")?;
    Ok(TrainOutcome {
        model,
        manifest,
        manifest_path,
    })
}

fn model_path(cfg: &CaseConfig, given: Option<&Path>) -> PathBuf {
    given.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join(MODEL_FILE))
}

/// HF solves the equal-budget rule allows: the BF pipeline's HF solves plus
/// its LF solves (training candidates and `min_iter` online sweeps) converted
/// at the cell-count cost ratio, rounded up.
pub fn hf_budget(hf_training: usize, n_candidates: usize, cfg: &CaseConfig, cost_ratio: f64) -> usize {
    let lf = n_candidates + cfg.inversion.ensemble * cfg.inversion.min_iter;
    hf_training + (lf as f64 * cost_ratio).ceil() as usize
}

pub struct InvertOutcome {
    pub state: InversionState,
    pub observations: ObservationSet,
    pub manifest: RunManifest,
    pub csv_path: PathBuf,
}

fn observations_for(cfg: &CaseConfig, hf: &dyn ForwardModel) -> Result<ObservationSet> {
    synthesize_data(
        hf,
        &ParamPoint::from_vec(cfg.truth.clone()),
        cfg.observations.fraction,
        cfg.observations.noise,
        seed_for(cfg.seed, purpose::OBSERVATIONS),
    )
}

/// One inversion run, writing `inversion_<mode>.csv` and its manifest into
/// `dir`. `model` is required in `bf` mode and sizes the `hf` budget.
fn invert_into(cfg: &CaseConfig, models: &CaseModels, model: Option<&BfModel>, mode: Mode, dir: &Path) -> Result<InvertOutcome> {
    let mut manifest = RunManifest::start("invert", Some(mode), cfg);
    ensure_dir(dir)?;
    let obs = observations_for(cfg, models.hf.as_ref())?;
    let lf = CountingModel::new(models.lf.clone());
    let hf = CountingModel::new(models.hf.clone());
    let ratio = models.cost_ratio();

    let (n_s, max_iter, min_iter, budget) = match mode {
        Mode::Hf => {
            let (m, n_cand) = match model {
                Some(bf) => (bf.hf_solves(), bf.n_candidates()),
                None => (cfg.training.basis_size, cfg.training.n_candidates),
            };
            let budget = hf_budget(m, n_cand, cfg, ratio);
            // one iteration, as many members as the surrogate had HF solves
            let n_s = m;
            if n_s < 2 || n_s > budget {
                return Err(Error::Budget(format!(
                    "HF ensemble of {n_s} with budget {budget} HF solves"
                )));
            }
            (n_s, 1, 1, Some(budget))
        }
        _ => (cfg.inversion.ensemble, cfg.inversion.max_iter, cfg.inversion.min_iter, None),
    };
    let prior = sample(&cfg.prior, n_s, seed_for(cfg.seed, purpose::PRIOR))?;
    let opts = InversionOptions {
        max_iter,
        min_iter,
        seed: seed_for(cfg.seed, purpose::KALMAN),
        perturbed: cfg.inversion.perturbed,
        truth: Some(ParamPoint::from_vec(cfg.truth.clone())),
    };

    let hf_grid = models.hf.grid();
    let state = match mode {
        Mode::Bf => {
            let bf = model.ok_or_else(|| Error::invalid("bf mode needs a trained model"))?;
            let prop = |z: &ParamPoint| bf_predict(bf, z, &lf);
            run_inversion(&prop, &prior, &obs, &opts)?
        }
        Mode::Lf => {
            let prop = |z: &ParamPoint| -> Result<Snapshot> {
                let s = lf.evaluate_checked(z)?;
                match hf_grid {
                    Some(g) => prolongate(&s, g),
                    None => Ok(s),
                }
            };
            run_inversion(&prop, &prior, &obs, &opts)?
        }
        Mode::Hf => {
            let prop = |z: &ParamPoint| hf.evaluate_checked(z);
            run_inversion(&prop, &prior, &obs, &opts)?
        }
    };

    let name = format!("inversion_{}", mode.as_str());
    let csv_path = dir.join(format!("{name}.csv"));
    write_with(&csv_path, |w| state.write_csv(w))?;
    let obs_path = dir.join("observations.csv");
    write_with(&obs_path, |w| obs.write_csv(w))?;
    manifest.artifacts.insert("inversion".into(), csv_path.clone());
    manifest.artifacts.insert("observations".into(), obs_path);

    let (bf_hf, bf_lf) = match (mode, model) {
        (Mode::Bf, Some(bf)) => (bf.hf_solves(), bf.n_candidates()),
        _ => (0, 0),
    };
    let mut cost = CostAccount::new(lf.count() + bf_lf, hf.count() + bf_hf, ratio);
    cost.hf_budget = budget;
    manifest.cost = cost;

    if let Some(grid) = hf_grid {
        // plot data, not counted in the cost
        let truth = models.hf.evaluate_checked(&ParamPoint::from_vec(cfg.truth.clone()))?;
        let truth_path = dir.join("truth_field.csv");
        write_with(&truth_path, |w| snapshot_io::write_csv(w, &truth))?;
        let mean = state.posterior_mean();
        let field = match mode {
            Mode::Bf => bf_predict(model.expect("checked above"), &mean, models.lf.as_ref()),
            Mode::Lf => prolongate(&models.lf.evaluate_checked(&mean)?, grid),
            Mode::Hf => models.hf.evaluate_checked(&mean),
        };
        match field {
            Ok(f) => {
                let p = dir.join(format!("posterior_field_{}.csv", mode.as_str()));
                write_with(&p, |w| snapshot_io::write_csv(w, &f))?;
                manifest.artifacts.insert("posterior_field".into(), p);
            }
            Err(e) => log::warn!("no posterior field dump: {e}"),
        }
        manifest.artifacts.insert("truth_field".into(), truth_path);
    }
    manifest.finish(dir, &name)?;
    Ok(InvertOutcome {
        state,
        observations: obs,
        manifest,
        csv_path,
    })
}

fn load_for(cfg: &CaseConfig, mode: Mode, path: Option<&Path>) -> Result<Option<BfModel>> {
    let path = model_path(cfg, path);
    match mode {
        Mode::Bf => load_model(&path).map(Some),
        Mode::Hf if path.exists() => load_model(&path).map(Some),
        _ => Ok(None),
    }
}

/// Online phase with the chosen propagator. `bf` mode loads the archive at
/// `model` (default `<out_dir>/bf_model.bin`).
pub fn cmd_invert(cfg: &CaseConfig, model: Option<&Path>, mode: Mode) -> Result<InvertOutcome> {
    let bf = load_for(cfg, mode, model)?;
    let models = build_models(cfg)?;
    let out = invert_into(cfg, &models, bf.as_ref(), mode, &cfg.out_dir)?;
    if let Some(e) = out.state.final_error() {
        info!(
            "{} inversion: {} iterations, relative error {:.4e}",
            mode.as_str(),
            out.state.iteration,
            e.plain
        );
    }
    Ok(out)
}

/// Type-7 quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Per-iteration statistics over the runs of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub iter: usize,
    pub e_plain_median: f64,
    pub e_plain_q1: f64,
    pub e_plain_q3: f64,
    pub e_literal_median: f64,
    /// `None` for the prior row.
    pub misfit_median: Option<f64>,
}

pub struct SweepOutcome {
    pub runs: Vec<(u64, InversionState)>,
    pub rows: Vec<SweepRow>,
    pub aggregate_path: PathBuf,
}

impl SweepOutcome {
    pub fn median_final_error(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.e_plain_median)
    }
}

/// Error history of a run padded to `len` entries (prior first); a run that
/// stopped early keeps its final estimate.
fn padded_errors(st: &InversionState, len: usize) -> Vec<(f64, f64, Option<f64>)> {
    let prior = st.prior_error.expect("truth is always set");
    let mut out = vec![(prior.plain, prior.literal, None)];
    for r in &st.history {
        let e = r.error.expect("truth is always set");
        out.push((e.plain, e.literal, Some(r.misfit)));
    }
    while out.len() < len {
        let last = *out.last().expect("non-empty");
        out.push(last);
    }
    out
}

/// Repeats the inversion for every seed (training fixed) and aggregates
/// median and quartiles of the error histories into `sweep_<mode>.csv`.
/// Each run is written as `sweep_<mode>/seed_<s>/inversion_<mode>.csv`.
pub fn cmd_sweep(cfg: &CaseConfig, model: Option<&Path>, mode: Mode, seeds: &[u64]) -> Result<SweepOutcome> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "at least one seed is required"));
    }
    let bf = load_for(cfg, mode, model)?;
    let models = build_models(cfg)?;
    let mut manifest = RunManifest::start("sweep", Some(mode), cfg);
    let root = cfg.out_dir.join(format!("sweep_{}", mode.as_str()));
    let mut runs = Vec::new();
    let mut cost = CostAccount::default();
    for &seed in seeds {
        let mut c = cfg.clone();
        c.seed = seed;
        c.validate()?;
        let dir = root.join(format!("seed_{seed}"));
        let out = invert_into(&c, &models, bf.as_ref(), mode, &dir)?;
        info!(
            "seed {seed}: relative error {:.4e}",
            out.state.final_error().map_or(f64::NAN, |e| e.plain)
        );
        cost.lf_solves += out.manifest.cost.lf_solves;
        cost.hf_solves += out.manifest.cost.hf_solves;
        cost.cost_ratio = out.manifest.cost.cost_ratio;
        runs.push((seed, out.state));
    }
    cost.hf_equivalent = cost.hf_solves as f64 + cost.lf_solves as f64 * cost.cost_ratio;

    let len = runs.iter().map(|(_, s)| s.history.len() + 1).max().unwrap_or(1);
    let padded: Vec<_> = runs.iter().map(|(_, s)| padded_errors(s, len)).collect();
    let rows: Vec<SweepRow> = (0..len)
        .map(|k| {
            let plain: Vec<f64> = padded.iter().map(|p| p[k].0).collect();
            let literal: Vec<f64> = padded.iter().map(|p| p[k].1).collect();
            let misfit: Vec<f64> = padded.iter().filter_map(|p| p[k].2).collect();
            SweepRow {
                iter: k,
                e_plain_median: quantile(&plain, 0.5),
                e_plain_q1: quantile(&plain, 0.25),
                e_plain_q3: quantile(&plain, 0.75),
                e_literal_median: quantile(&literal, 0.5),
                misfit_median: (!misfit.is_empty()).then(|| quantile(&misfit, 0.5)),
            }
        })
        .collect();

    ensure_dir(&cfg.out_dir)?;
    let aggregate_path = cfg.out_dir.join(format!("sweep_{}.csv", mode.as_str()));
    write_with(&aggregate_path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["iter", "runs", "e_plain_median", "e_plain_q1", "e_plain_q3", "e_literal_median", "misfit_median"])?;
        for r in &rows {
            wtr.write_record([
                r.iter.to_string(),
                runs.len().to_string(),
                format!("{:e}", r.e_plain_median),
                format!("{:e}", r.e_plain_q1),
                format!("{:e}", r.e_plain_q3),
                format!("{:e}", r.e_literal_median),
                r.misfit_median.map(|m| format!("{m:e}")).unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    })?;

    let finals_path = cfg.out_dir.join(format!("sweep_{}_final.csv", mode.as_str()));
    write_with(&finals_path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        let d = cfg.param_dim();
        let mut header: Vec<String> = ["seed", "iterations", "converged", "e_plain", "e_literal"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=d).map(|i| format!("param_mean_{i}")));
        wtr.write_record(&header)?;
        for (seed, st) in &runs {
            let e = st.final_error().expect("truth is always set");
            let mut row = vec![
                seed.to_string(),
                st.iteration.to_string(),
                st.converged.to_string(),
                format!("{:e}", e.plain),
                format!("{:e}", e.literal),
            ];
            row.extend(st.posterior_mean().iter().map(|x| format!("{x:e}")));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    })?;

    manifest.artifacts.insert("aggregate".into(), aggregate_path.clone());
    manifest.artifacts.insert("finals".into(), finals_path);
    manifest.cost = cost;
    manifest.finish(&cfg.out_dir, &format!("sweep_{}", mode.as_str()))?;
    Ok(SweepOutcome {
        runs,
        rows,
        aggregate_path,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPoint {
    pub z: ParamPoint,
    pub bf_rel_error: f64,
    pub bound: f64,
}

impl ValidationPoint {
    pub fn holds(&self) -> bool {
        self.bf_rel_error <= self.bound
    }
}

pub struct ValidateOutcome {
    pub points: Vec<ValidationPoint>,
    pub csv_path: PathBuf,
}

impl ValidateOutcome {
    /// Fraction of points where the a-priori bound held.
    pub fn fraction_held(&self) -> f64 {
        self.points.iter().filter(|p| p.holds()).count() as f64 / self.points.len() as f64
    }
}

/// Fresh points from the candidate distribution, fresh HF solves, and the
/// measured BF relative error against the model's a-priori bound.
pub fn cmd_validate(cfg: &CaseConfig, model: Option<&Path>, n_test: usize, seed: u64) -> Result<ValidateOutcome> {
    if n_test == 0 {
        return Err(Error::config("n_test", "must be positive"));
    }
    let mut manifest = RunManifest::start("validate", None, cfg);
    let bf = load_model(&model_path(cfg, model))?;
    let bound = bf
        .final_error_bound()
        .ok_or_else(|| Error::invalid("model has no error bound (single-member basis?)"))?;
    let models = build_models(cfg)?;
    let lf = CountingModel::new(models.lf.clone());
    let hf = CountingModel::new(models.hf.clone());
    let points = sample(&cfg.training.candidates, n_test, seed_for(seed, purpose::VALIDATION))?;

    let evaluated: Vec<ValidationPoint> = {
        use rayon::prelude::*;
        points
            .members()
            .par_iter()
            .map(|z| {
                let v_hf = hf.evaluate_checked(z)?.values;
                let v_bf = bf_predict(&bf, z, &lf)?.values;
                Ok(ValidationPoint {
                    z: z.clone(),
                    bf_rel_error: (&v_bf - &v_hf).norm() / v_hf.norm(),
                    bound,
                })
            })
            .collect::<Result<_>>()?
    };

    ensure_dir(&cfg.out_dir)?;
    let csv_path = cfg.out_dir.join("validation.csv");
    write_with(&csv_path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        let d = cfg.param_dim();
        let mut header = vec!["index".to_string()];
        header.extend((1..=d).map(|i| format!("z_{i}")));
        header.extend(["bf_rel_error", "bound", "holds"].map(String::from));
        wtr.write_record(&header)?;
        for (i, p) in evaluated.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(p.z.iter().map(|x| format!("{x:e}")));
            row.push(format!("{:e}", p.bf_rel_error));
            row.push(format!("{:e}", p.bound));
            row.push(p.holds().to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    manifest.artifacts.insert("validation".into(), csv_path.clone());
    manifest.cost = CostAccount::new(lf.count(), hf.count(), models.cost_ratio());
    manifest.finish(&cfg.out_dir, "validate")?;
    let out = ValidateOutcome {
        points: evaluated,
        csv_path,
    };
    info!("bound held at {:.0}% of {n_test} points", 100.0 * out.fraction_held());
    Ok(out)
}

/// Outcome of `--check` for an inversion's final plain relative error.
pub fn check_inversion(cfg: &CaseConfig, mode: Mode, final_error: f64) -> bool {
    match mode {
        Mode::Bf => final_error < cfg.check.bf_max_error,
        Mode::Lf => final_error > cfg.check.lf_min_error,
        Mode::Hf => final_error > cfg.check.hf_min_error,
    }
}
