//! Replayable record of a run.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use blgi_core::lhv::{LhvStrategy, RandomStrategyOptions};
use blgi_core::protocol::{ExperimentConfig, SweepAxis};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::write_file;

pub const TOOL: &str = "blgi";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LhvSource {
    Strategies(Vec<LhvStrategy>),
    Random { count: u64, options: RandomStrategyOptions },
    BruteForce { hidden_states: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LhvRun {
    pub source: LhvSource,
    pub shots: u64,
    /// Shots per hidden state and detector; 0 skips the check.
    pub calibration_shots: u64,
}

/// A fully resolved command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Simulate { config: ExperimentConfig },
    Sweep { config: ExperimentConfig, axis: SweepAxis, values: Vec<f64> },
    Lhv(LhvRun),
    Verify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub seed: u64,
    pub invocation: Invocation,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(seed: u64, invocation: Invocation, outputs: Vec<String>) -> Self {
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        RunManifest {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created,
            seed,
            invocation,
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| CliError::Usage(format!("cannot encode manifest: {e}")))?;
        write_file(path, &(json + "\n"))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::Parse {
            origin: path.display().to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if m.tool != TOOL {
            return Err(CliError::Usage(format!("{}: not a {TOOL} manifest", path.display())));
        }
        Ok(m)
    }
}
