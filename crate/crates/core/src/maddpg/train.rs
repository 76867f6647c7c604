use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    select_action, td_targets, update_actor, update_critics, update_lambda, AgentLearner, JointLayout, ReplayBuffer,
    TrainConfig,
};
use crate::error::{input_err, Error, Result};
use crate::game::{Game, Policy, Trajectory};
use crate::neural::Mlp;

/// Years at which evaluation reports the maximum pressure of every area.
pub const EVAL_STAGES: [usize; 4] = [5, 10, 20, 25];

/// Linear exploration schedule from `sigma_initial` to `sigma_final`.
pub fn sigma_at(cfg: &TrainConfig, episode: usize) -> f64 {
    if cfg.sigma_decay_episodes == 0 {
        return cfg.sigma_final;
    }
    let frac = (episode as f64 / cfg.sigma_decay_episodes as f64).min(1.0);
    cfg.sigma_initial + (cfg.sigma_final - cfg.sigma_initial) * frac
}

/// Decentralized execution: agent `i` acts with `actors[i]` on its own observation.
#[derive(Debug, Clone, Copy)]
pub struct ActorPolicy<'a> {
    pub actors: &'a [Mlp],
}

impl Policy for ActorPolicy<'_> {
    fn act(&self, agent: usize, obs: &[f64]) -> Result<Vec<f64>> {
        match self.actors.get(agent) {
            Some(a) => a.predict(obs),
            None => input_err(format!("no actor for agent {agent}")),
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub agent: usize,
    /// Undiscounted own PV over the episode, $M.
    pub ep_reward: f64,
    /// Undiscounted penalty over the episode, $.
    pub ep_cost: f64,
    pub lambda: f64,
    /// Mean over the episode's learning steps; 0 when none ran.
    pub critic_r_loss: f64,
    pub critic_c_loss: f64,
}

/// Noise-free evaluation after one training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub episode: usize,
    pub team_npv: f64,
    /// Sum over agents of discounted cost.
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Per-agent NPV of own PV, $M.
    pub npv: Vec<f64>,
    pub total_npv: f64,
    /// Per-agent discounted penalty, $.
    pub discounted_cost: Vec<f64>,
    /// `(year, max pressure per area)` for the stages within the horizon.
    pub stage_max_pressure: Vec<(usize, Vec<f64>)>,
    /// Maximum over the episode of each area's max pressure, kPa.
    pub peak_area_pressure: Vec<f64>,
    /// Number of (step, area) pairs with at least one cell above threshold.
    pub area_violation_steps: usize,
}

impl EvalReport {
    pub fn is_safe(&self) -> bool {
        self.discounted_cost.iter().all(|&c| c == 0.0)
    }
}

/// Noise-free rollout of `actors`. Rollouts are deterministic, so a single
/// episode is the exact expectation.
pub fn evaluate(actors: &[Mlp], game: &Game) -> Result<(EvalReport, Trajectory)> {
    let spec = game.spec();
    if actors.len() != spec.n_agents() {
        return input_err(format!("{} actors for {} agents", actors.len(), spec.n_agents()));
    }
    let traj = game.run_episode(&ActorPolicy { actors }, None)?;
    let gamma = spec.gamma();
    let n = spec.n_agents();
    let npv = (0..n).map(|i| traj.npv(i, gamma)).collect::<Result<Vec<_>>>()?;
    let discounted_cost = (0..n).map(|i| traj.discounted_cost(i, gamma)).collect::<Result<Vec<_>>>()?;
    let stage_max_pressure = EVAL_STAGES
        .iter()
        .filter(|&&y| y >= 1 && y <= traj.len())
        .map(|&y| (y, traj.max_area_pressure[y - 1].clone()))
        .collect();
    let peak_area_pressure = (0..n)
        .map(|i| traj.max_area_pressure.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let area_violation_steps = traj.area_violations.iter().flatten().filter(|&&v| v > 0).count();
    let report = EvalReport {
        total_npv: npv.iter().sum(),
        npv,
        discounted_cost,
        stage_max_pressure,
        peak_area_pressure,
        area_violation_steps,
    };
    Ok((report, traj))
}

/// Highest team NPV among noise-free evaluations with zero cost for every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct BestPolicy {
    pub episode: usize,
    pub actors: Vec<Mlp>,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub learners: Vec<AgentLearner>,
    pub metrics: Vec<EpisodeMetrics>,
    pub evals: Vec<EvalPoint>,
    pub best: Option<BestPolicy>,
    pub learning_steps: usize,
}

impl TrainOutcome {
    /// Team episodic cost (sum over agents) per training episode.
    pub fn team_costs(&self) -> Vec<f64> {
        let episodes = self.metrics.iter().map(|m| m.episode + 1).max().unwrap_or(0);
        let mut out = vec![0.0; episodes];
        for m in &self.metrics {
            out[m.episode] += m.ep_cost;
        }
        out
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Runs the full safe MADDPG loop on `game`.
pub fn train(game: &Game, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = game.spec();
    let n = spec.n_agents();
    let gamma = spec.gamma();
    let layout = JointLayout::new(spec.obs_dims(), spec.action_dims())?;

    let mut init_rng = stream(cfg.seed, 0);
    let mut noise_rng = stream(cfg.seed, 1);
    let mut sample_rng = stream(cfg.seed, 2);
    let mut learners = (0..n)
        .map(|i| AgentLearner::new(&layout, i, cfg, &mut init_rng))
        .collect::<Result<Vec<_>>>()?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;

    let mut metrics = Vec::with_capacity(cfg.episodes * n);
    let mut evals = Vec::with_capacity(cfg.episodes);
    let mut best: Option<BestPolicy> = None;
    let mut learning_steps = 0;

    for episode in 0..cfg.episodes {
        let sigma = sigma_at(cfg, episode);
        let mut state = game.reset();
        let mut obs = game.observations(&state)?;
        let mut ep_reward = vec![0.0; n];
        let mut ep_cost = vec![0.0; n];
        let mut loss_sum = vec![(0.0, 0.0); n];
        let mut loss_count = 0usize;

        for _ in 0..spec.horizon {
            let actions = learners
                .iter()
                .zip(&obs)
                .map(|(l, o)| select_action(l, o, sigma, &mut noise_rng))
                .collect::<Result<Vec<_>>>()?;
            let out = game.step(&state, obs, actions)?;
            for i in 0..n {
                ep_reward[i] += out.pv[i];
                ep_cost[i] += out.cost[i];
            }
            obs = out.transition.next_obs.clone();
            state = out.next_state;
            buffer.push(out.transition);

            if buffer.len() < cfg.batch_size {
                continue;
            }
            for _ in 0..cfg.updates_per_step {
                let batch = buffer.sample(cfg.batch_size, &layout, &mut sample_rng)?;
                let targets = td_targets(&batch, &learners, gamma)?;
                for (i, l) in learners.iter_mut().enumerate() {
                    let losses = update_critics(l, &batch, &targets[i])?;
                    loss_sum[i].0 += losses.reward;
                    loss_sum[i].1 += losses.cost;
                    update_actor(l, i, &batch, &layout, cfg.actor_preact_reg)?;
                    update_lambda(l, i, &batch, cfg.eta_lambda, cfg.cost_threshold, cfg.lambda_max)?;
                }
                for l in &mut learners {
                    l.soft_update_targets(cfg.tau)?;
                }
                if let Some(i) = learners.iter().position(|l| !l.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "networks or multiplier of agent {i} after learning step {learning_steps} (episode {episode})"
                    )));
                }
                learning_steps += 1;
                loss_count += 1;
            }
        }

        for i in 0..n {
            let k = loss_count.max(1) as f64;
            metrics.push(EpisodeMetrics {
                episode,
                agent: i,
                ep_reward: ep_reward[i],
                ep_cost: ep_cost[i],
                lambda: learners[i].lambda,
                critic_r_loss: loss_sum[i].0 / k,
                critic_c_loss: loss_sum[i].1 / k,
            });
        }

        let actors: Vec<Mlp> = learners.iter().map(|l| l.actor.clone()).collect();
        let (report, _) = evaluate(&actors, game)?;
        evals.push(EvalPoint {
            episode,
            team_npv: report.total_npv,
            total_cost: report.discounted_cost.iter().sum(),
        });
        if report.is_safe() && best.as_ref().is_none_or(|b| report.total_npv > b.report.total_npv) {
            best = Some(BestPolicy { episode, actors, report });
        }
    }

    Ok(TrainOutcome { learners, metrics, evals, best, learning_steps })
}

/// Writes the training log as `episode,agent,ep_reward,ep_cost,lambda,critic_r_loss,critic_c_loss`.
pub fn write_metrics_csv<W: Write>(metrics: &[EpisodeMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}
