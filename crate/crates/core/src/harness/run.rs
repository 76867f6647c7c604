use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{config_json, ExperimentConfig};
use super::write_atomic;
use crate::env::{write_pressure_csv, ReservoirState};
use crate::error::{input_err, Error, Result};
use crate::game::{ConstantPolicy, Game, Policy, Trajectory};
use crate::maddpg::{
    evaluate, load_checkpoint, save_checkpoint, train, write_metrics_csv, ActorPolicy, CheckpointManifest, EvalReport,
    EVAL_STAGES,
};
use crate::moo::{describe, nsga2_run, select_solution, write_front_csv, Evaluator, Selection, SelectedSolution};
use crate::neural::Mlp;

pub const SUMMARY_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePressure {
    pub year: usize,
    /// Maximum pressure in each agent's area, kPa.
    pub max_pressure: Vec<f64>,
}

/// Evaluation of one deterministic policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub scenario: String,
    pub coalition: String,
    pub penalty_mode: String,
    /// Episode whose actors were evaluated; `None` for the final actors.
    pub policy_episode: Option<usize>,
    pub npv: Vec<f64>,
    pub total_npv: f64,
    pub discounted_cost: Vec<f64>,
    pub stage_max_pressure: Vec<StagePressure>,
    pub area_violation_steps: usize,
    pub wall_clock_s: f64,
}

impl RunSummary {
    fn from_report(cfg: &ExperimentConfig, seed: u64, policy_episode: Option<usize>, r: &EvalReport, wall: f64) -> Self {
        Self {
            schema_version: SUMMARY_SCHEMA,
            config_hash: cfg.hash(),
            seed,
            scenario: cfg.scenario.clone(),
            coalition: cfg.game.coalition.label(),
            penalty_mode: format!("{:?}", cfg.penalty.mode).to_lowercase(),
            policy_episode,
            npv: r.npv.clone(),
            total_npv: r.npv.iter().sum(),
            discounted_cost: r.discounted_cost.clone(),
            stage_max_pressure: r
                .stage_max_pressure
                .iter()
                .map(|(year, p)| StagePressure { year: *year, max_pressure: p.clone() })
                .collect(),
            area_violation_steps: r.area_violation_steps,
            wall_clock_s: wall,
        }
    }
}

pub fn save_summary(summary: &RunSummary, path: &Path) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(summary)?.as_bytes())
}

pub fn load_summary(path: &Path) -> Result<RunSummary> {
    let s: RunSummary = serde_json::from_slice(&fs::read(path)?)?;
    if s.schema_version != SUMMARY_SCHEMA {
        return input_err(format!("unsupported summary schema {}", s.schema_version));
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Provenance {
    schema_version: u32,
    config_hash: String,
    seed: u64,
    command: String,
    files: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn write_csv_atomic(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(path, &buf)
}

/// Writes the resolved config and a provenance record for the files in `dir`.
fn finish_dir(dir: &Path, cfg: &ExperimentConfig, seed: u64, command: &str, files: &[&str]) -> Result<()> {
    write_atomic(&dir.join("config.json"), config_json(cfg)?.as_bytes())?;
    let mut files: Vec<String> = files.iter().map(|s| s.to_string()).collect();
    files.push("config.json".into());
    write_json(
        &dir.join("provenance.json"),
        &Provenance { schema_version: SUMMARY_SCHEMA, config_hash: cfg.hash(), seed, command: command.into(), files },
    )
}

/// Replays `actors` without noise, keeping every state (initial state first).
pub fn rollout_states(game: &Game, actors: &[Mlp]) -> Result<(Vec<ReservoirState>, Trajectory)> {
    let policy = ActorPolicy { actors };
    let mut state = game.reset();
    let mut states = vec![state.clone()];
    let mut obs = game.observations(&state)?;
    for _ in 0..game.spec().horizon {
        let actions = (0..obs.len()).map(|i| policy.act(i, &obs[i])).collect::<Result<Vec<_>>>()?;
        let out = game.step(&state, obs, actions)?;
        obs = out.transition.next_obs.clone();
        state = out.next_state;
        states.push(state.clone());
    }
    let traj = game.run_episode(&policy, None)?;
    Ok((states, traj))
}

fn write_policy_outputs(dir: &Path, game: &Game, actors: &[Mlp], files: &mut Vec<String>) -> Result<()> {
    let (states, traj) = rollout_states(game, actors)?;
    let env = &game.spec().env;
    write_csv_atomic(&dir.join("trajectory.csv"), |b| traj.write_csv(env, b))?;
    files.push("trajectory.csv".into());
    for &year in EVAL_STAGES.iter().filter(|&&y| y < states.len()) {
        let name = format!("pressure_t{year:02}.csv");
        write_csv_atomic(&dir.join(&name), |b| write_pressure_csv(&env.grid, &states[year], b))?;
        files.push(name);
    }
    Ok(())
}

/// Output directory of one seed.
pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Trains one seed and writes metrics, checkpoint, snapshots and summary.
pub fn run_train(cfg: &ExperimentConfig, base_dir: &Path, seed: u64, out: &Path) -> Result<RunSummary> {
    let mut cfg = cfg.clone();
    cfg.train.seed = seed;
    cfg.seeds = vec![seed];
    cfg.validate()?;
    let game = Game::new(cfg.game_spec(base_dir)?)?;
    let start = Instant::now();
    let outcome = train(&game, &cfg.train)?;
    let wall = start.elapsed().as_secs_f64();

    let dir = seed_dir(out, seed);
    fs::create_dir_all(&dir)?;
    write_csv_atomic(&dir.join("metrics.csv"), |b| write_metrics_csv(&outcome.metrics, b))?;

    let (policy, policy_episode, report) = match &outcome.best {
        Some(b) => (b.actors.clone(), Some(b.episode), b.report.clone()),
        None => {
            let actors: Vec<Mlp> = outcome.learners.iter().map(|l| l.actor.clone()).collect();
            let (r, _) = evaluate(&actors, &game)?;
            (actors, None, r)
        }
    };
    let manifest = CheckpointManifest {
        schema_version: 0,
        n_agents: policy.len(),
        episode: cfg.train.episodes,
        seed,
        config_hash: cfg.hash(),
        policy_episode,
        policy_npv: report.npv.clone(),
        files: Vec::new(),
    };
    save_checkpoint(&dir.join("checkpoint"), &outcome.learners, &policy, manifest)?;

    let mut files = vec!["metrics.csv".to_string(), "checkpoint/manifest.json".into(), "summary.json".into()];
    write_policy_outputs(&dir, &game, &policy, &mut files)?;
    let summary = RunSummary::from_report(&cfg, seed, policy_episode, &report, wall);
    save_summary(&summary, &dir.join("summary.json"))?;
    let names: Vec<&str> = files.iter().map(String::as_str).collect();
    finish_dir(&dir, &cfg, seed, "train", &names)?;
    Ok(summary)
}

/// Re-evaluates the policy stored under `run_dir` (a seed directory written by
/// [`run_train`]) and checks it against the NPVs recorded at save time.
pub fn run_eval(run_dir: &Path, out: Option<&Path>) -> Result<RunSummary> {
    let cfg = super::config::load_config(&run_dir.join("config.json"))?;
    let (manifest, agents) = load_checkpoint(&run_dir.join("checkpoint"))?;
    if manifest.config_hash != cfg.hash() {
        return input_err(format!(
            "checkpoint was written for config {} but {} holds {}",
            manifest.config_hash,
            run_dir.join("config.json").display(),
            cfg.hash()
        ));
    }
    let actors = agents.iter().map(|a| a.policy.to_mlp()).collect::<Result<Vec<_>>>()?;
    let game = Game::new(cfg.game_spec(run_dir)?)?;
    let start = Instant::now();
    let (report, _) = evaluate(&actors, &game)?;
    let wall = start.elapsed().as_secs_f64();
    if report.npv != manifest.policy_npv {
        return Err(Error::Input(format!(
            "re-evaluated NPV {:?} differs from recorded {:?}",
            report.npv, manifest.policy_npv
        )));
    }
    let summary = RunSummary::from_report(&cfg, manifest.seed, manifest.policy_episode, &report, wall);
    let dest = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.to_path_buf());
    fs::create_dir_all(&dest)?;
    save_summary(&summary, &dest.join("eval_summary.json"))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MooReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub front_size: usize,
    pub selections: Vec<SelectedSolution>,
    pub wall_clock_s: f64,
}

/// Runs NSGA-II for one seed; writes `front.csv` and `selections.json`.
pub fn run_moo(cfg: &ExperimentConfig, base_dir: &Path, seed: u64, out: &Path) -> Result<MooReport> {
    let mut cfg = cfg.clone();
    cfg.moo.seed = seed;
    cfg.seeds = vec![seed];
    cfg.validate()?;
    let game = Game::new(cfg.game_spec(base_dir)?)?;
    let eval = Evaluator::new(&game, cfg.moo.schedule, cfg.moo.objective).with_levels(cfg.moo.rate_levels);
    let start = Instant::now();
    let result = nsga2_run(&eval, &cfg.moo)?;
    let wall = start.elapsed().as_secs_f64();

    let mut selections = Vec::new();
    if !result.front.is_empty() {
        let mut modes = vec![Selection::Knee];
        modes.extend((0..eval.n_objectives()).map(Selection::Favor));
        for mode in modes {
            selections.push(describe(&eval, select_solution(&result.front, mode)?, mode)?);
        }
    }
    let report = MooReport {
        schema_version: SUMMARY_SCHEMA,
        config_hash: cfg.hash(),
        seed,
        front_size: result.front.len(),
        selections,
        wall_clock_s: wall,
    };
    let dir = out.join(format!("moo_seed_{seed}"));
    fs::create_dir_all(&dir)?;
    write_csv_atomic(&dir.join("front.csv"), |b| write_front_csv(&result.front, eval.n_objectives(), b))?;
    write_json(&dir.join("selections.json"), &report)?;
    finish_dir(&dir, &cfg, seed, "moo", &["front.csv", "selections.json"])?;
    Ok(report)
}

/// Threshold exceedance without any safety mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub episodes: usize,
    /// Episodes in which some area cell exceeded its threshold at some step.
    pub exceeding_episodes: usize,
    pub exceed_fraction: f64,
    /// Peak pressure per area over all random episodes, kPa.
    pub peak_area_pressure: Vec<f64>,
    pub max_rate_exceeds: bool,
    pub max_rate_first_violation_year: Option<usize>,
    pub max_rate_peak_pressure: Vec<f64>,
    pub thresholds: Vec<f64>,
}

/// Uniformly random rates in each well's bounds, redrawn every step.
pub fn baseline_random(game: &Game, episodes: usize, seed: u64, config_hash: String) -> Result<BaselineReport> {
    let spec = game.spec();
    let n = spec.n_agents();
    let dims = spec.action_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut exceeding = 0;
    let mut peak = vec![f64::NEG_INFINITY; n];
    for _ in 0..episodes {
        let mut state = game.reset();
        let mut obs = game.observations(&state)?;
        let mut hit = false;
        for _ in 0..spec.horizon {
            let actions: Vec<Vec<f64>> = dims.iter().map(|&d| (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect();
            let out = game.step(&state, obs, actions)?;
            hit |= out.area_violations.iter().any(|&v| v > 0);
            for (p, &m) in peak.iter_mut().zip(&out.max_area_pressure) {
                *p = p.max(m);
            }
            obs = out.transition.next_obs.clone();
            state = out.next_state;
        }
        exceeding += usize::from(hit);
    }
    let full = ConstantPolicy { value: 1.0, action_dims: dims };
    let traj = game.run_episode(&full, None)?;
    let first = traj.area_violations.iter().position(|v| v.iter().any(|&c| c > 0));
    let max_rate_peak_pressure =
        (0..n).map(|i| traj.max_area_pressure.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max)).collect();
    Ok(BaselineReport {
        schema_version: SUMMARY_SCHEMA,
        config_hash,
        seed,
        episodes,
        exceeding_episodes: exceeding,
        exceed_fraction: if episodes == 0 { 0.0 } else { exceeding as f64 / episodes as f64 },
        peak_area_pressure: peak,
        max_rate_exceeds: first.is_some(),
        max_rate_first_violation_year: first.map(|t| t + 1),
        max_rate_peak_pressure,
        thresholds: spec.env.areas.iter().map(|a| a.p_threshold).collect(),
    })
}

pub fn run_baseline(cfg: &ExperimentConfig, base_dir: &Path, seed: u64, episodes: usize, out: &Path) -> Result<BaselineReport> {
    let mut cfg = cfg.clone();
    cfg.seeds = vec![seed];
    let game = Game::new(cfg.game_spec(base_dir)?)?;
    let report = baseline_random(&game, episodes, seed, cfg.hash())?;
    let dir = out.join(format!("baseline_seed_{seed}"));
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("baseline.json"), &report)?;
    finish_dir(&dir, &cfg, seed, "baseline-random", &["baseline.json"])?;
    Ok(report)
}
