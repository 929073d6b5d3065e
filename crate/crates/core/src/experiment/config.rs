//! Case configuration. A TOML file names a `case` and overrides any subset of
//! that case's preset; every key has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::BoxPrior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    /// Scalar diffusivity `z = [D_T]` on the unit square.
    Case1,
    /// K-L coefficients of a log-normal left/bottom boundary field.
    FieldAnalog,
    /// `z ↦ A z` with a Gaussian prior; exact reference posteriors.
    LinearOracle,
}

impl CaseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CaseKind::Case1 => "case1",
            CaseKind::FieldAnalog => "field_analog",
            CaseKind::LinearOracle => "linear_oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Central,
    Upwind,
}

/// Distribution of candidate or prior points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    /// Latin hypercube over a box.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Independent standard normals.
    Gaussian { dim: usize },
}

impl SamplerSpec {
    pub fn dim(&self) -> usize {
        match self {
            SamplerSpec::Box { lower, .. } => lower.len(),
            SamplerSpec::Gaussian { dim } => *dim,
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        match self {
            SamplerSpec::Box { lower, upper } => BoxPrior::new(lower.clone(), upper.clone())
                .map(|_| ())
                .map_err(|e| Error::config(field, e.to_string())),
            SamplerSpec::Gaussian { dim } if *dim == 0 => {
                Err(Error::config(field, "dim must be positive"))
            }
            SamplerSpec::Gaussian { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub hf: usize,
    pub lf: usize,
    pub scheme: SchemeName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub velocity: [f64; 2],
    /// Left/bottom value, or the base of the boundary field.
    pub boundary_value: f64,
    pub right_top: f64,
    /// Used only when the diffusivity is not a parameter.
    pub diffusivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub sigma0: f64,
    pub length_scale: f64,
    pub n_modes: usize,
    pub n_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub candidates: SamplerSpec,
    pub n_candidates: usize,
    pub basis_size: usize,
    pub early_stop: bool,
    pub re_threshold: f64,
    pub plateau_rel: f64,
    pub plateau_window: usize,
    /// Debug switch: use the HF model as the LF model too.
    pub identical_fidelity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionConfig {
    pub ensemble: usize,
    pub min_iter: usize,
    pub max_iter: usize,
    pub perturbed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    pub fraction: f64,
    pub noise: f64,
}

/// Thresholds used by `--check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub bf_max_error: f64,
    pub lf_min_error: f64,
    pub hf_min_error: f64,
    pub validate_min_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub case: CaseKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub truth: Vec<f64>,
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub field: FieldConfig,
    pub training: TrainingConfig,
    pub prior: SamplerSpec,
    pub inversion: InversionConfig,
    pub observations: ObservationConfig,
    pub check: CheckConfig,
    /// Row-major matrix of the linear oracle.
    pub linear: Vec<Vec<f64>>,
}

impl CaseConfig {
    /// HF 100×100 / LF 7×7, 1000 LHS candidates on [0.02, 1.98], basis 15,
    /// ensemble 30 from U(0.15, 0.25), at least 3 iterations, 2% noise-free
    /// observations of the truth `D_T = 0.025`.
    pub fn case1() -> Self {
        Self {
            case: CaseKind::Case1,
            seed: 2020,
            out_dir: PathBuf::from("out"),
            truth: vec![0.025],
            grid: GridConfig {
                hf: 100,
                lf: 7,
                scheme: SchemeName::Central,
            },
            physics: PhysicsConfig {
                velocity: [1.0, 1.0],
                boundary_value: 1.0,
                right_top: 0.0,
                diffusivity: 0.025,
            },
            field: FieldConfig {
                sigma0: 1.5,
                length_scale: 0.7,
                n_modes: 3,
                n_nodes: 50,
            },
            training: TrainingConfig {
                candidates: SamplerSpec::Box {
                    lower: vec![0.02],
                    upper: vec![1.98],
                },
                n_candidates: 1000,
                basis_size: 15,
                early_stop: false,
                re_threshold: 10.0,
                plateau_rel: 0.01,
                plateau_window: 5,
                identical_fidelity: false,
            },
            prior: SamplerSpec::Box {
                lower: vec![0.15],
                upper: vec![0.25],
            },
            inversion: InversionConfig {
                ensemble: 30,
                min_iter: 3,
                max_iter: 10,
                perturbed: true,
            },
            observations: ObservationConfig {
                fraction: 0.02,
                noise: 0.0,
            },
            check: CheckConfig {
                bf_max_error: 0.02,
                lf_min_error: 0.5,
                hf_min_error: 0.2,
                validate_min_fraction: 0.9,
            },
            linear: Vec::new(),
        }
    }

    /// Three K-L coefficients of a log-normal inflow temperature at fixed
    /// `D_T = 0.02`, 2% observations with 40% noise, at least 4 iterations.
    pub fn field_analog() -> Self {
        let mut c = Self::case1();
        c.case = CaseKind::FieldAnalog;
        c.truth = vec![1.0, -0.8, 0.6];
        c.physics.diffusivity = 0.02;
        c.training.candidates = SamplerSpec::Gaussian { dim: 3 };
        c.training.n_candidates = 500;
        c.training.basis_size = 20;
        c.prior = SamplerSpec::Gaussian { dim: 3 };
        c.inversion.ensemble = 100;
        c.inversion.min_iter = 4;
        c.inversion.max_iter = 4;
        c.observations.noise = 0.4;
        c.check.bf_max_error = 0.33;
        c
    }

    /// `A` 3×2, standard normal prior, every output observed.
    pub fn linear_oracle() -> Self {
        let mut c = Self::case1();
        c.case = CaseKind::LinearOracle;
        c.truth = vec![1.4, 1.6];
        c.linear = vec![vec![1.0, 0.5], vec![-0.3, 2.0], vec![0.8, 0.8]];
        c.training.candidates = SamplerSpec::Gaussian { dim: 2 };
        c.training.n_candidates = 50;
        c.training.basis_size = 2;
        c.prior = SamplerSpec::Gaussian { dim: 2 };
        c.inversion.ensemble = 50;
        c.inversion.min_iter = 1;
        c.inversion.max_iter = 10;
        c.observations.fraction = 1.0;
        c.check.bf_max_error = 0.01;
        c
    }

    pub fn preset(kind: CaseKind) -> Self {
        match kind {
            CaseKind::Case1 => Self::case1(),
            CaseKind::FieldAnalog => Self::field_analog(),
            CaseKind::LinearOracle => Self::linear_oracle(),
        }
    }

    /// Parses TOML on top of the preset named by its `case` key (Case 1
    /// when absent) and validates the result.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::config("<file>", e.to_string()))?;
        let kind = match user.get("case") {
            None => CaseKind::Case1,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|_| Error::config("case", "expected case1, field_analog or linear_oracle"))?,
        };
        let mut merged = toml::Table::try_from(Self::preset(kind))
            .map_err(|e| Error::config("<preset>", e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("<config>", e.to_string()))
    }

    /// Number of inferred parameters for this case.
    pub fn param_dim(&self) -> usize {
        match self.case {
            CaseKind::Case1 => 1,
            CaseKind::FieldAnalog => self.field.n_modes,
            CaseKind::LinearOracle => self.linear.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be positive"))
            } else {
                Ok(())
            }
        };
        if self.seed > i64::MAX as u64 {
            return Err(Error::config("seed", "must be at most 2^63 - 1"));
        }
        if self.grid.hf < 2 || self.grid.lf < 2 {
            return Err(Error::config("grid", "hf and lf need at least 2 cells per side"));
        }
        positive("training.n_candidates", self.training.n_candidates)?;
        positive("training.basis_size", self.training.basis_size)?;
        positive("training.plateau_window", self.training.plateau_window)?;
        positive("inversion.max_iter", self.inversion.max_iter)?;
        if self.training.basis_size > self.training.n_candidates {
            return Err(Error::config("training.basis_size", "exceeds training.n_candidates"));
        }
        if self.inversion.ensemble < 2 {
            return Err(Error::config("inversion.ensemble", "needs at least 2 members"));
        }
        if self.inversion.min_iter > self.inversion.max_iter {
            return Err(Error::config("inversion.min_iter", "exceeds inversion.max_iter"));
        }
        let f = self.observations.fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::config("observations.fraction", "must lie in (0, 1]"));
        }
        let n = self.observations.noise;
        if !(0.0..=1.0).contains(&n) {
            return Err(Error::config("observations.noise", "must lie in [0, 1]"));
        }
        if !(self.physics.diffusivity > 0.0) {
            return Err(Error::config("physics.diffusivity", "must be positive"));
        }

        if self.case == CaseKind::FieldAnalog {
            positive("field.n_modes", self.field.n_modes)?;
            if self.field.n_nodes < self.field.n_modes {
                return Err(Error::config("field.n_nodes", "fewer nodes than modes"));
            }
            if !(self.field.sigma0 > 0.0 && self.field.length_scale > 0.0) {
                return Err(Error::config("field", "sigma0 and length_scale must be positive"));
            }
        }
        if self.case == CaseKind::LinearOracle {
            let cols = self.param_dim();
            if cols == 0 || self.linear.iter().any(|r| r.len() != cols) {
                return Err(Error::config("linear", "needs a non-empty rectangular matrix"));
            }
        }

        let d = self.param_dim();
        for (field, got) in [
            ("truth", self.truth.len()),
            ("prior", self.prior.dim()),
            ("training.candidates", self.training.candidates.dim()),
        ] {
            if got != d {
                return Err(Error::config(field, format!("dimension {got}, case needs {d}")));
            }
        }
        self.prior.validate("prior")?;
        self.training.candidates.validate("training.candidates")?;
        if self.case == CaseKind::Case1 && !(self.truth[0] > 0.0) {
            return Err(Error::config("truth", "diffusivity must be positive"));
        }
        if self.truth.iter().all(|&t| t == 0.0) {
            return Err(Error::config("truth", "must be nonzero to measure relative errors"));
        }
        Ok(())
    }
}

/// Recursive overlay: tables merge key by key, anything else replaces.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if k != "prior" && k != "candidates" => {
                merge(b, o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
