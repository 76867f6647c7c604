//! Configuration, persistence and experiment orchestration.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

mod cli;
pub mod config;
mod envcheck;
mod run;

pub use cli::{cli, Cli, Command, CommonArgs};
pub use config::{load_config, parse_config, CoalitionChoice, CoalitionName, ExperimentConfig, CONFIG_SCHEMA};
pub use envcheck::{env_check, format_checks, CheckResult, ENV_CHECK_TOL};
pub use run::{
    baseline_random, load_summary, rollout_states, run_baseline, run_eval, run_moo, run_train, save_summary, seed_dir,
    BaselineReport, MooReport, RunSummary, StagePressure, SUMMARY_SCHEMA,
};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}
