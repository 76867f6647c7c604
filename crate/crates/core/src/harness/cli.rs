use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::{load_config, ExperimentConfig};
use super::envcheck::{env_check, format_checks};
use super::run::{run_baseline, run_eval, run_moo, run_train};
use crate::econ::{bell_number, enumerate_partitions};
use crate::error::{input_err, Result};

#[derive(Debug, Parser)]
#[command(name = "ccs-game", version, about = "Multi-operator CO2 storage: safe MADDPG and NSGA-II experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Experiment config (JSON). Built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run this seed only instead of every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Scenario name; overrides `scenario`.
    #[arg(long)]
    pub scenario: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train safe MADDPG for each seed.
    Train(CommonArgs),
    /// Re-evaluate a trained seed directory and write `eval_summary.json`.
    Eval {
        /// A `seed_N` directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the NSGA-II baseline for each seed.
    Moo(CommonArgs),
    /// Random-rate injection without safety, plus the max-rate schedule.
    BaselineRandom {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// List every coalition structure of `n` agents.
    EnumerateCoalitions {
        #[arg(long)]
        n: usize,
    },
    /// Numerical checks of the reservoir model.
    EnvCheck(CommonArgs),
}

struct Resolved {
    cfg: ExperimentConfig,
    base_dir: PathBuf,
    seeds: Vec<u64>,
    out: PathBuf,
}

fn resolve(args: &CommonArgs) -> Result<Resolved> {
    let (mut cfg, base_dir) = match &args.config {
        Some(path) => {
            let cfg = load_config(path)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (cfg, base)
        }
        None => (ExperimentConfig::default(), PathBuf::from(".")),
    };
    if let Some(s) = &args.scenario {
        cfg.scenario = s.clone();
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    let seeds = cfg.seeds.clone();
    let out = cfg.output_dir.clone();
    Ok(Resolved { cfg, base_dir, seeds, out })
}

fn execute(cmd: Command, stdout: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Train(args) => {
            let r = resolve(&args)?;
            for &seed in &r.seeds {
                let s = run_train(&r.cfg, &r.base_dir, seed, &r.out)?;
                writeln!(
                    stdout,
                    "seed {seed}: team NPV {:.2} $M, agent NPV {:?}, discounted cost {:?}, {:.1} s",
                    s.total_npv, s.npv, s.discounted_cost, s.wall_clock_s
                )?;
            }
        }
        Command::Eval { run, out } => {
            let s = run_eval(&run, out.as_deref())?;
            writeln!(stdout, "team NPV {:.2} $M, agent NPV {:?}, discounted cost {:?}", s.total_npv, s.npv, s.discounted_cost)?;
        }
        Command::Moo(args) => {
            let r = resolve(&args)?;
            for &seed in &r.seeds {
                let rep = run_moo(&r.cfg, &r.base_dir, seed, &r.out)?;
                writeln!(stdout, "seed {seed}: {} front members", rep.front_size)?;
                for s in &rep.selections {
                    writeln!(stdout, "  {:?}: total NPV {:.2}, agent NPV {:?}", s.selection, s.total_npv, s.agent_npv)?;
                }
            }
        }
        Command::BaselineRandom { common, episodes } => {
            let r = resolve(&common)?;
            for &seed in &r.seeds {
                let b = run_baseline(&r.cfg, &r.base_dir, seed, episodes, &r.out)?;
                writeln!(
                    stdout,
                    "seed {seed}: {}/{} random episodes exceed a threshold ({:.0}%); max rate exceeds: {} (first year {:?})",
                    b.exceeding_episodes,
                    b.episodes,
                    100.0 * b.exceed_fraction,
                    b.max_rate_exceeds,
                    b.max_rate_first_violation_year
                )?;
            }
        }
        Command::EnumerateCoalitions { n } => {
            let parts = enumerate_partitions(n)?;
            for p in &parts {
                writeln!(stdout, "{p}")?;
            }
            writeln!(stdout, "{} partitions (Bell({n}) = {})", parts.len(), bell_number(n))?;
        }
        Command::EnvCheck(args) => {
            let r = resolve(&args)?;
            let env = r.cfg.env.build(&r.cfg.scenario, &r.base_dir)?;
            let checks = env_check(&env, r.seeds[0])?;
            write!(stdout, "{}", format_checks(&checks))?;
            if checks.iter().any(|c| !c.passed) {
                return input_err("environment checks failed");
            }
        }
    }
    Ok(())
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn cli<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{rendered}");
            } else {
                let _ = write!(stderr, "{rendered}");
            }
            return code;
        }
    };
    match execute(parsed.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}
