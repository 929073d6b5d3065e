//! Case configuration and the drivers behind the command-line tool.
//!
//! Each driver writes its CSV artifacts plus a `manifest_<name>.toml`
//! recording the resolved config, solve counts and artifact paths.

mod commands;
mod config;
mod setup;

pub use commands::{
    check_inversion, cmd_invert, cmd_sweep, cmd_train, cmd_validate, hf_budget, quantile,
    CostAccount, InvertOutcome, Mode, RunManifest, SweepOutcome, SweepRow, TrainOutcome,
    ValidateOutcome, ValidationPoint, MODEL_FILE,
};
pub use config::*;
pub use setup::{build_models, kl_basis_for, sample, CaseModels, CountingModel};
