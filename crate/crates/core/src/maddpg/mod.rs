//! Safe multi-agent DDPG with centralized critics and per-agent Lagrange
//! multipliers.
//!
//! Each agent owns a deterministic actor over its local observation, a
//! reward critic and a cost critic over the joint observation-action vector,
//! and a multiplier `λ_i` that prices its cost critic in the actor loss
//! `mean(−Q^r_i + λ_i Q^c_i)`.

mod buffer;
mod checkpoint;
mod train;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use buffer::ReplayBuffer;
pub use checkpoint::{load_checkpoint, save_checkpoint, AgentCheckpoint, CheckpointManifest, CHECKPOINT_SCHEMA};
pub use train::{
    evaluate, sigma_at, train, write_metrics_csv, ActorPolicy, BestPolicy, EpisodeMetrics, EvalPoint, EvalReport,
    TrainOutcome, EVAL_STAGES,
};

use crate::econ::PenaltyMode;
use crate::error::{input_err, ConfigIssue, Error, Result};
use crate::game::Transition;
use crate::neural::{apply_update, soft_update, Activation, Mlp, OptimizerState};

/// Learning hyperparameters. The discount factor lives in the economic
/// parameters so that learners and reported NPVs cannot disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub sigma_initial: f64,
    pub sigma_final: f64,
    pub sigma_decay_episodes: usize,
    pub eta_lambda: f64,
    pub lambda_max: f64,
    /// `c̄` in the dual update.
    pub cost_threshold: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Gradient steps per environment step once the buffer holds a batch.
    pub updates_per_step: usize,
    /// Weight of `mean(z²)` on the actor's pre-tanh outputs `z`; keeps the
    /// actor out of saturation, where its gradient vanishes.
    pub actor_preact_reg: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 3000,
            tau: 0.01,
            batch_size: 256,
            buffer_capacity: 100_000,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            sigma_initial: 0.3,
            sigma_final: 0.05,
            sigma_decay_episodes: 2000,
            eta_lambda: 0.01,
            lambda_max: 100.0,
            cost_threshold: 0.0,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![128, 128],
            updates_per_step: 1,
            actor_preact_reg: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Budget used by the acceptance experiments: small enough for a
    /// single core, large enough for the constraint to be learned.
    ///
    /// Region penalties are a hundred times smaller per cell than well
    /// penalties, so the multiplier needs more room and a faster step.
    pub fn acceptance(seed: u64, mode: PenaltyMode) -> Self {
        let (eta_lambda, lambda_max) = match mode {
            PenaltyMode::Well => (0.05, 5.0),
            PenaltyMode::Region => (0.5, 100.0),
        };
        Self {
            episodes: 300,
            batch_size: 64,
            buffer_capacity: 20_000,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            tau: 0.02,
            sigma_decay_episodes: 200,
            eta_lambda,
            lambda_max,
            critic_hidden: vec![64, 64],
            actor_preact_reg: 0.01,
            seed,
            ..Self::default()
        }
    }

    /// Every problem with the configuration, keyed by field name.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut bad = Vec::new();
        let mut push = |key: &str, message: String| bad.push(ConfigIssue { key: key.to_string(), message });
        if self.episodes == 0 {
            push("episodes", "must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            push("tau", format!("must lie in (0,1], got {}", self.tau));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            push(
                "batch_size",
                format!("must be positive and at most buffer_capacity ({}), got {}", self.buffer_capacity, self.batch_size),
            );
        }
        for (key, v) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr), ("eta_lambda", self.eta_lambda)] {
            if !(v > 0.0 && v.is_finite()) {
                push(key, format!("must be positive, got {v}"));
            }
        }
        for (key, v) in [
            ("sigma_initial", self.sigma_initial),
            ("sigma_final", self.sigma_final),
            ("actor_preact_reg", self.actor_preact_reg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                push(key, format!("must be non-negative, got {v}"));
            }
        }
        if !(self.lambda_max >= 0.0 && self.lambda_max.is_finite()) {
            push("lambda_max", format!("must be non-negative, got {}", self.lambda_max));
        }
        if !self.cost_threshold.is_finite() {
            push("cost_threshold", "must be finite".into());
        }
        if self.actor_hidden.contains(&0) {
            push("actor_hidden", "layer widths must be positive".into());
        }
        if self.critic_hidden.contains(&0) {
            push("critic_hidden", "layer widths must be positive".into());
        }
        if self.updates_per_step == 0 {
            push("updates_per_step", "must be at least 1".into());
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }
}

/// Observation and action sizes of every agent, fixing the joint critic layout
/// `[o_1, …, o_n, a_1, …, a_n]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointLayout {
    pub obs_dims: Vec<usize>,
    pub action_dims: Vec<usize>,
}

impl JointLayout {
    pub fn new(obs_dims: Vec<usize>, action_dims: Vec<usize>) -> Result<Self> {
        if obs_dims.len() != action_dims.len() || obs_dims.is_empty() {
            return input_err("observation and action dims must list the same non-zero number of agents");
        }
        if obs_dims.iter().chain(&action_dims).any(|&d| d == 0) {
            return input_err("every agent needs at least one observation and one action");
        }
        Ok(Self { obs_dims, action_dims })
    }

    pub fn n_agents(&self) -> usize {
        self.obs_dims.len()
    }

    pub fn joint_obs_dim(&self) -> usize {
        self.obs_dims.iter().sum()
    }

    pub fn critic_input_dim(&self) -> usize {
        self.joint_obs_dim() + self.action_dims.iter().sum::<usize>()
    }

    /// Column where agent `i`'s action starts in the critic input.
    pub fn action_offset(&self, agent: usize) -> usize {
        self.joint_obs_dim() + self.action_dims[..agent].iter().sum::<usize>()
    }
}

/// Networks, optimizers and multiplier of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentLearner {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub q_reward: Mlp,
    pub q_reward_target: Mlp,
    pub q_cost: Mlp,
    pub q_cost_target: Mlp,
    pub actor_opt: OptimizerState,
    pub q_reward_opt: OptimizerState,
    pub q_cost_opt: OptimizerState,
    pub lambda: f64,
}

impl AgentLearner {
    pub fn new<R: Rng + ?Sized>(layout: &JointLayout, agent: usize, cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        if agent >= layout.n_agents() {
            return input_err(format!("agent {agent} outside layout of {} agents", layout.n_agents()));
        }
        let dims = |input: usize, hidden: &[usize], out: usize| {
            let mut d = vec![input];
            d.extend_from_slice(hidden);
            d.push(out);
            d
        };
        let actor = Mlp::new(
            &dims(layout.obs_dims[agent], &cfg.actor_hidden, layout.action_dims[agent]),
            Activation::Tanh,
            Activation::Tanh,
            rng,
        )?;
        let critic_dims = dims(layout.critic_input_dim(), &cfg.critic_hidden, 1);
        let q_reward = Mlp::new(&critic_dims, Activation::Tanh, Activation::Identity, rng)?;
        let q_cost = Mlp::new(&critic_dims, Activation::Tanh, Activation::Identity, rng)?;
        let learner = Self {
            actor_opt: OptimizerState::adam(&actor, cfg.actor_lr),
            q_reward_opt: OptimizerState::adam(&q_reward, cfg.critic_lr),
            q_cost_opt: OptimizerState::adam(&q_cost, cfg.critic_lr),
            actor_target: actor.clone(),
            q_reward_target: q_reward.clone(),
            q_cost_target: q_cost.clone(),
            actor,
            q_reward,
            q_cost,
            lambda: 0.0,
        };
        learner.check_layout(layout, agent)?;
        Ok(learner)
    }

    /// Confirms the critic input contract and target/online agreement.
    pub fn check_layout(&self, layout: &JointLayout, agent: usize) -> Result<()> {
        let cin = layout.critic_input_dim();
        if self.q_reward.input_dim() != cin || self.q_cost.input_dim() != cin {
            return input_err(format!("critic input must be {cin} wide for {} agents", layout.n_agents()));
        }
        if self.q_reward.output_dim() != 1 || self.q_cost.output_dim() != 1 {
            return input_err("critics must have one output");
        }
        if self.actor.input_dim() != layout.obs_dims[agent] || self.actor.output_dim() != layout.action_dims[agent] {
            return input_err(format!("actor of agent {agent} does not match its observation/action sizes"));
        }
        if !self.actor.same_architecture(&self.actor_target)
            || !self.q_reward.same_architecture(&self.q_reward_target)
            || !self.q_cost.same_architecture(&self.q_cost_target)
        {
            return input_err("target networks must match their online networks");
        }
        Ok(())
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        soft_update(&mut self.actor_target, &self.actor, tau)?;
        soft_update(&mut self.q_reward_target, &self.q_reward, tau)?;
        soft_update(&mut self.q_cost_target, &self.q_cost, tau)
    }

    pub fn is_finite(&self) -> bool {
        self.lambda.is_finite()
            && [&self.actor, &self.actor_target, &self.q_reward, &self.q_reward_target, &self.q_cost, &self.q_cost_target]
                .iter()
                .all(|n| n.is_finite())
    }
}

/// `μ(o)` plus independent `N(0, σ²)` noise, clipped to `[−1, 1]`.
pub fn select_action<R: Rng + ?Sized>(learner: &AgentLearner, obs: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    let mut a = learner.actor.predict(obs)?;
    if sigma > 0.0 {
        crate::game::add_gaussian(&mut a, sigma, rng);
    }
    a.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok(a)
}

/// A minibatch laid out as per-agent matrices with one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Vec<Array2<f64>>,
    pub actions: Vec<Array2<f64>>,
    /// `(S, n)`.
    pub rewards: Array2<f64>,
    /// `(S, n)`.
    pub costs: Array2<f64>,
    pub next_obs: Vec<Array2<f64>>,
    /// 1 for terminal transitions.
    pub done: Array1<f64>,
}

fn stack_rows(rows: impl Iterator<Item = Vec<f64>>, width: usize) -> Result<Array2<f64>> {
    let mut flat = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != width {
            return input_err(format!("row of width {} where {width} was expected", r.len()));
        }
        flat.extend(r);
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, width), flat).expect("checked widths"))
}

impl Batch {
    pub fn from_transitions(transitions: &[&Transition], layout: &JointLayout) -> Result<Self> {
        if transitions.is_empty() {
            return input_err("a batch needs at least one transition");
        }
        let n = layout.n_agents();
        for t in transitions {
            if t.obs.len() != n || t.actions.len() != n || t.next_obs.len() != n || t.rewards.len() != n || t.costs.len() != n {
                return input_err(format!("transition does not describe {n} agents"));
            }
        }
        let per_agent = |pick: fn(&Transition) -> &Vec<Vec<f64>>, dims: &[usize]| -> Result<Vec<Array2<f64>>> {
            (0..n)
                .map(|i| stack_rows(transitions.iter().map(|t| pick(t)[i].clone()), dims[i]))
                .collect()
        };
        Ok(Self {
            obs: per_agent(|t| &t.obs, &layout.obs_dims)?,
            actions: per_agent(|t| &t.actions, &layout.action_dims)?,
            next_obs: per_agent(|t| &t.next_obs, &layout.obs_dims)?,
            rewards: stack_rows(transitions.iter().map(|t| t.rewards.clone()), n)?,
            costs: stack_rows(transitions.iter().map(|t| t.costs.clone()), n)?,
            done: transitions.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    /// `[o_1, …, o_n, a_1, …, a_n]` for the given observations and actions.
    pub fn joint(obs: &[Array2<f64>], actions: &[Array2<f64>]) -> Array2<f64> {
        let views: Vec<ArrayView2<f64>> = obs.iter().chain(actions).map(|m| m.view()).collect();
        concatenate(Axis(1), &views).expect("rows agree by construction")
    }

    pub fn critic_input(&self) -> Array2<f64> {
        Self::joint(&self.obs, &self.actions)
    }
}

/// TD targets of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub reward: Array1<f64>,
    pub cost: Array1<f64>,
}

/// `y = r + γ(1 − done)·Q′(o′, μ′(o′))` for both critics of every agent.
pub fn td_targets(batch: &Batch, learners: &[AgentLearner], gamma: f64) -> Result<Vec<Targets>> {
    crate::econ::check_gamma(gamma)?;
    if learners.len() != batch.obs.len() {
        return input_err("one learner per agent is required");
    }
    let next_actions = learners
        .iter()
        .zip(&batch.next_obs)
        .map(|(l, o)| l.actor_target.predict_batch(o.view()))
        .collect::<Result<Vec<_>>>()?;
    let next_input = Batch::joint(&batch.next_obs, &next_actions);
    let keep = batch.done.mapv(|d| gamma * (1.0 - d));
    learners
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let qr = l.q_reward_target.predict_batch(next_input.view())?.column(0).to_owned();
            let qc = l.q_cost_target.predict_batch(next_input.view())?.column(0).to_owned();
            Ok(Targets {
                reward: &batch.rewards.column(i) + &(&keep * &qr),
                cost: &batch.costs.column(i) + &(&keep * &qc),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticLosses {
    pub reward: f64,
    pub cost: f64,
}

/// Mean squared error of `net` on `(input, y)` and one Adam step on it.
fn regress(net: &mut Mlp, opt: &mut OptimizerState, input: ArrayView2<f64>, y: &Array1<f64>) -> Result<f64> {
    if y.len() != input.nrows() {
        return input_err("targets and inputs disagree on batch size");
    }
    let (q, cache) = net.forward_batch(input)?;
    let err = &q.column(0) - y;
    let s = y.len() as f64;
    let loss = err.mapv(|e| e * e).sum() / s;
    let grad_out = (err * (2.0 / s)).insert_axis(Axis(1));
    let (grads, _) = net.backward(&cache, grad_out.view())?;
    apply_update(net, &grads, opt)?;
    Ok(loss)
}

/// One Adam step on each critic's mean squared TD error. Losses are measured
/// before the step.
pub fn update_critics(learner: &mut AgentLearner, batch: &Batch, targets: &Targets) -> Result<CriticLosses> {
    let input = batch.critic_input();
    Ok(CriticLosses {
        reward: regress(&mut learner.q_reward, &mut learner.q_reward_opt, input.view(), &targets.reward)?,
        cost: regress(&mut learner.q_cost, &mut learner.q_cost_opt, input.view(), &targets.cost)?,
    })
}

/// Critic input with agent `agent`'s actions replaced by its online policy.
fn policy_input(learner: &AgentLearner, agent: usize, batch: &Batch) -> Result<Array2<f64>> {
    let mut actions = batch.actions.clone();
    actions[agent] = learner.actor.predict_batch(batch.obs[agent].view())?;
    Ok(Batch::joint(&batch.obs, &actions))
}

/// One Adam step on `mean(−Q^r + λ·Q^c)` through the agent's own action
/// slot; the other agents' actions come from the batch. `preact_reg` adds
/// `preact_reg · mean(z²)` over the pre-tanh outputs. Returns the loss
/// before the step.
pub fn update_actor(
    learner: &mut AgentLearner,
    agent: usize,
    batch: &Batch,
    layout: &JointLayout,
    preact_reg: f64,
) -> Result<f64> {
    if agent >= layout.n_agents() {
        return input_err(format!("agent {agent} outside layout"));
    }
    let (a, actor_cache) = learner.actor.forward_batch(batch.obs[agent].view())?;
    let mut actions = batch.actions.clone();
    actions[agent] = a;
    let input = Batch::joint(&batch.obs, &actions);
    let s = batch.len() as f64;

    let (qr, cr) = learner.q_reward.forward_batch(input.view())?;
    let (qc, cc) = learner.q_cost.forward_batch(input.view())?;
    let mut loss = (-qr.sum() + learner.lambda * qc.sum()) / s;

    let (_, dr) = learner.q_reward.backward(&cr, Array2::from_elem((batch.len(), 1), -1.0 / s).view())?;
    let (_, dc) = learner.q_cost.backward(&cc, Array2::from_elem((batch.len(), 1), learner.lambda / s).view())?;
    let off = layout.action_offset(agent);
    let width = layout.action_dims[agent];
    let mut grad_a = &dr.slice(s![.., off..off + width]) + &dc.slice(s![.., off..off + width]);
    if preact_reg > 0.0 {
        // d(z²)/da = 2z / (1 − a²); the tanh backprop multiplies (1 − a²) back in.
        let a = actor_cache.output();
        let per = preact_reg / (s * width as f64);
        for (g, &ai) in grad_a.iter_mut().zip(a.iter()) {
            let ai = ai.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
            let z = ai.atanh();
            loss += per * z * z;
            *g += per * 2.0 * z / (1.0 - ai * ai);
        }
    }
    let (grads, _) = learner.actor.backward(&actor_cache, grad_a.view())?;
    apply_update(&mut learner.actor, &grads, &mut learner.actor_opt)?;
    Ok(loss)
}

/// `clip(λ + η(q̄ − c̄), 0, λ_max)`.
pub fn dual_step(lambda: f64, mean_cost_q: f64, eta: f64, c_bar: f64, lambda_max: f64) -> f64 {
    (lambda + eta * (mean_cost_q - c_bar)).clamp(0.0, lambda_max)
}

/// Projected dual ascent using the batch mean of the online cost critic at
/// the agent's current policy actions. Returns the new multiplier.
pub fn update_lambda(
    learner: &mut AgentLearner,
    agent: usize,
    batch: &Batch,
    eta_lambda: f64,
    c_bar: f64,
    lambda_max: f64,
) -> Result<f64> {
    if !(eta_lambda > 0.0) {
        return input_err(format!("eta_lambda must be positive, got {eta_lambda}"));
    }
    let input = policy_input(learner, agent, batch)?;
    let mean_qc = learner.q_cost.predict_batch(input.view())?.mean().unwrap_or(0.0);
    learner.lambda = dual_step(learner.lambda, mean_qc, eta_lambda, c_bar, lambda_max);
    Ok(learner.lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Layer;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layout() -> JointLayout {
        JointLayout::new(vec![2, 3], vec![1, 2]).unwrap()
    }

    fn learner(agent: usize, seed: u64) -> AgentLearner {
        let cfg = TrainConfig { actor_hidden: vec![4], critic_hidden: vec![5], ..TrainConfig::default() };
        AgentLearner::new(&layout(), agent, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn transition(done: bool, r: f64) -> Transition {
        Transition {
            obs: vec![vec![0.1, 0.2], vec![0.3, 0.4, 0.5]],
            actions: vec![vec![0.5], vec![-0.5, 0.25]],
            rewards: vec![r, 2.0 * r],
            costs: vec![0.0, 1.0],
            next_obs: vec![vec![0.2, 0.1], vec![0.5, 0.4, 0.3]],
            done,
        }
    }

    fn linear(weights: Vec<f64>, bias: f64, output: Activation) -> Mlp {
        let n = weights.len();
        let layer = Layer { weight: Array2::from_shape_vec((1, n), weights).unwrap(), bias: array![bias] };
        Mlp::from_layers(vec![layer], Activation::Tanh, output).unwrap()
    }

    #[test]
    fn layout_offsets() {
        let l = layout();
        assert_eq!(l.critic_input_dim(), 8);
        assert_eq!(l.action_offset(0), 5);
        assert_eq!(l.action_offset(1), 6);
        assert!(JointLayout::new(vec![1], vec![]).is_err());
    }

    #[test]
    fn construction_checks_critic_contract() {
        let mut l = learner(0, 1);
        assert!(l.check_layout(&layout(), 0).is_ok());
        l.q_cost = Mlp::zeros(&[7, 1], Activation::Tanh, Activation::Identity).unwrap();
        assert!(l.check_layout(&layout(), 0).is_err());
    }

    #[test]
    fn select_action_noise_and_clipping() {
        let mut l = learner(0, 2);
        let obs = [0.1, -0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&l, &obs, 0.0, &mut rng).unwrap(), l.actor.predict(&obs).unwrap());

        l.actor = linear(vec![0.0, 0.0], 50.0, Activation::Tanh);
        for _ in 0..20 {
            let a = select_action(&l, &obs, 0.5, &mut rng).unwrap();
            assert!(a[0] <= 1.0);
        }
        let seq = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| select_action(&learner(0, 2), &obs, 0.3, &mut rng).unwrap()[0]).collect::<Vec<_>>()
        };
        assert_eq!(seq(9), seq(9));
    }

    fn constant_critic(value: f64) -> Mlp {
        linear(vec![0.0; 8], value, Activation::Identity)
    }

    #[test]
    fn td_targets_bootstrap_only_non_terminal() {
        let lay = layout();
        let mut ls = vec![learner(0, 3), learner(1, 4)];
        for l in &mut ls {
            l.q_reward_target = constant_critic(10.0);
            l.q_cost_target = constant_critic(0.0);
        }
        let a = transition(false, 1.0);
        let b = transition(true, 2.0);
        let batch = Batch::from_transitions(&[&a, &b], &lay).unwrap();
        let y = td_targets(&batch, &ls, 0.95).unwrap();
        assert!((y[0].reward[0] - 10.5).abs() < 1e-12);
        assert_eq!(y[0].reward[1], 2.0);
        assert_eq!(y[0].cost, array![0.0, 0.0]);
        assert_eq!(y[1].cost, array![1.0, 1.0]);
        assert!(td_targets(&batch, &ls, 1.0).is_err());
    }

    #[test]
    fn exact_critic_has_zero_loss_and_stays_put() {
        let lay = layout();
        let mut l = learner(0, 5);
        l.q_reward = constant_critic(3.0);
        l.q_cost = constant_critic(0.0);
        l.q_reward_opt = OptimizerState::adam(&l.q_reward, 1e-2);
        l.q_cost_opt = OptimizerState::adam(&l.q_cost, 1e-2);
        let t = transition(true, 3.0);
        let batch = Batch::from_transitions(&[&t], &lay).unwrap();
        let targets = Targets { reward: array![3.0], cost: array![0.0] };
        let before = l.clone();
        let losses = update_critics(&mut l, &batch, &targets).unwrap();
        assert_eq!(losses, CriticLosses { reward: 0.0, cost: 0.0 });
        assert_eq!(l.q_reward, before.q_reward);
        assert_eq!(l.q_cost, before.q_cost);
    }

    #[test]
    fn critic_step_reduces_single_sample_loss() {
        let lay = layout();
        let mut l = learner(0, 6);
        l.q_reward = linear(vec![0.1; 8], 0.0, Activation::Identity);
        l.q_reward_opt = OptimizerState::adam(&l.q_reward, 1e-3);
        let t = transition(true, 1.0);
        let batch = Batch::from_transitions(&[&t], &lay).unwrap();
        let targets = Targets { reward: array![2.0], cost: array![0.0] };
        let first = update_critics(&mut l, &batch, &targets).unwrap().reward;
        let second = update_critics(&mut l, &batch, &targets).unwrap().reward;
        assert!(second < first);
    }

    #[test]
    fn critic_loss_is_a_mean() {
        let lay = layout();
        let l = learner(0, 7);
        let t = transition(false, 1.0);
        let one = Batch::from_transitions(&[&t], &lay).unwrap();
        let two = Batch::from_transitions(&[&t, &t], &lay).unwrap();
        let y1 = Targets { reward: array![1.5], cost: array![0.2] };
        let y2 = Targets { reward: array![1.5, 1.5], cost: array![0.2, 0.2] };
        let a = update_critics(&mut l.clone(), &one, &y1).unwrap();
        let b = update_critics(&mut l.clone(), &two, &y2).unwrap();
        assert!((a.reward - b.reward).abs() < 1e-14 && (a.cost - b.cost).abs() < 1e-14);
    }

    /// One agent with a linear actor `a = tanh(w·o)` and hand-set critics,
    /// so the sign of the actor gradient is known.
    fn toy() -> (JointLayout, AgentLearner, Batch) {
        let lay = JointLayout::new(vec![1], vec![1]).unwrap();
        let cfg = TrainConfig { actor_hidden: vec![], critic_hidden: vec![], actor_lr: 1e-2, ..TrainConfig::default() };
        let mut l = AgentLearner::new(&lay, 0, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        l.actor = linear(vec![0.5], 0.0, Activation::Tanh);
        l.actor_opt = OptimizerState::adam(&l.actor, 1e-2);
        let t = Transition {
            obs: vec![vec![1.0]],
            actions: vec![vec![0.0]],
            rewards: vec![0.0],
            costs: vec![0.0],
            next_obs: vec![vec![1.0]],
            done: true,
        };
        let batch = Batch::from_transitions(&[&t], &lay).unwrap();
        (lay, l, batch)
    }

    #[test]
    fn lambda_zero_is_plain_policy_gradient() {
        let (lay, mut l, batch) = toy();
        // Q^r increasing in a, Q^c irrelevant at λ = 0.
        l.q_reward = linear(vec![0.0, 1.0], 0.0, Activation::Identity);
        l.q_cost = linear(vec![0.0, 100.0], 0.0, Activation::Identity);
        let a0 = l.actor.predict(&[1.0]).unwrap()[0];
        update_actor(&mut l, 0, &batch, &lay, 0.0).unwrap();
        assert!(l.actor.predict(&[1.0]).unwrap()[0] > a0);
    }

    #[test]
    fn large_lambda_shrinks_action_magnitude() {
        let (lay, mut l, batch) = toy();
        // Reward mildly favours large a; cost grows with a and λ dominates.
        l.q_reward = linear(vec![0.0, 1.0], 0.0, Activation::Identity);
        l.q_cost = linear(vec![0.0, 1.0], 0.0, Activation::Identity);
        l.lambda = 1e3;
        let a0 = l.actor.predict(&[1.0]).unwrap()[0];
        update_actor(&mut l, 0, &batch, &lay, 0.0).unwrap();
        assert!(l.actor.predict(&[1.0]).unwrap()[0].abs() < a0.abs());
    }

    #[test]
    fn zero_critic_gradient_leaves_actor() {
        let (lay, mut l, batch) = toy();
        l.q_reward = linear(vec![1.0, 0.0], 0.0, Activation::Identity);
        l.q_cost = linear(vec![1.0, 0.0], 0.0, Activation::Identity);
        l.lambda = 3.0;
        let before = l.actor.clone();
        update_actor(&mut l, 0, &batch, &lay, 0.0).unwrap();
        assert_eq!(l.actor, before);
    }

    #[test]
    fn dual_step_examples() {
        assert!((dual_step(0.5, 2.0, 0.1, 0.0, 100.0) - 0.7).abs() < 1e-15);
        assert_eq!(dual_step(0.1, -5.0, 0.1, 0.0, 100.0), 0.0);
        assert_eq!(dual_step(0.4, 1.5, 0.1, 1.5, 100.0), 0.4);
        assert_eq!(dual_step(99.0, 50.0, 0.1, 0.0, 100.0), 100.0);
    }

    #[test]
    fn update_lambda_uses_cost_critic_mean() {
        let (lay, mut l, batch) = toy();
        l.q_cost = linear(vec![0.0, 0.0], 2.0, Activation::Identity);
        l.lambda = 0.5;
        assert!((update_lambda(&mut l, 0, &batch, 0.1, 0.0, 100.0).unwrap() - 0.7).abs() < 1e-12);
        assert!(update_lambda(&mut l, 0, &batch, 0.0, 0.0, 100.0).is_err());
        let _ = lay;
    }

    #[test]
    fn config_validation_collects_problems() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::acceptance(1, PenaltyMode::Region).validate().is_ok());
        let bad = TrainConfig { tau: 0.0, batch_size: 10, buffer_capacity: 5, ..TrainConfig::default() };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("tau") && msg.contains("batch_size"));
    }
}
