use std::path::{Path, PathBuf};

use mmlab::sim::AgentSpec;

use crate::error::CliError;

pub mod backtest;
pub mod evaluate;
pub mod predict;
pub mod simulate;

/// Flags shared by every command.
#[derive(Clone, Debug)]
pub struct Globals {
    pub seed: Option<u64>,
    pub allow_oracle: bool,
    pub out: PathBuf,
}

/// Oracle predictions read future prices, so they need the explicit flag
/// whatever a config file says.
pub fn require_oracle_flag(agents: &[AgentSpec], allowed: bool) -> Result<(), CliError> {
    match agents.iter().find(|a| a.prediction.is_oracle()) {
        Some(a) if !allowed => Err(CliError::usage(format!(
            "{}: the oracle predictor sees future prices and is for evaluation only; pass --allow-oracle to use it",
            a.label()
        ))),
        _ => Ok(()),
    }
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "ASSET".into())
}
