//! Config-driven experiment runner behind the `fklab` binary.

mod commands;
mod config;

pub use commands::{build_model, exit_code, run, run_file, Format, RunOptions, RunOutcome};
pub use config::{
    load_config, parse_config, CommandSpec, EstimatesCommand, ExperimentConfig, FieldSpec, IdentityCommand, K1Params,
    KatoCommand, McCommand, ModelCommand, ModelSpec, PairSpec, PathsCommand, PerturbationSpec, SpectralCommand,
    TruncationCommand,
};
