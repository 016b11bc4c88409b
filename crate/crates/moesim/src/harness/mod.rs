//! Scenario configuration, the CSV-emitting experiment runners behind the
//! CLI subcommands, and the self-verification suite.

mod config;
mod scenarios;
mod verify;

pub use config::{ConfigError, ModeSelection, ScenarioConfig};
pub use scenarios::{
    run_breakdown, run_model_size_sweep, run_pipeline, run_scaling, ScalingKind, SAMPLE_SEQ_LEN,
};
pub use verify::{run_verify, CheckResult, VerifyReport};

use crate::balance::BalanceError;
use crate::dispatch::DispatchError;
use crate::router::RouterError;
use crate::topology::TopologyError;
use thiserror::Error;

/// Anything that can stop a scenario run. All variants trace back to the
/// configuration, so the CLI maps them to the invalid-config exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("router: {0}")]
    Router(#[from] RouterError),
    #[error("dispatch: {0}")]
    Dispatch(#[from] DispatchError),
    #[error("balance: {0}")]
    Balance(#[from] BalanceError),
    #[error("{0}")]
    Scenario(String),
}
