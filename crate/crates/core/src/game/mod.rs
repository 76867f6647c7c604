//! The constrained Markov game: reservoir dynamics, economics and coalition
//! structure assembled into an episodic multi-agent environment.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::econ::{
    coalition_rewards, discounted_sum, penalty, present_value_from_rates, CoalitionStructure, EconomicParams,
    PenaltyMode, PenaltyParams,
};
use crate::env::{
    build_dynamics, max_region_pressure, observation_dim, observe, Dynamics, EnvConfig, ReservoirState, WellSpec,
};
use crate::error::{input_err, Error, Result};

/// Static description of one game instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CmgSpec {
    pub env: EnvConfig,
    pub econ: EconomicParams,
    pub penalty: PenaltyParams,
    pub coalition: CoalitionStructure,
    /// Control steps per episode.
    pub horizon: usize,
    /// Multiplies $M rewards before they reach learners.
    pub reward_scale: f64,
    /// Multiplies $ penalties before they reach learners.
    pub cost_scale: f64,
    /// Pool learner costs over coalition blocks the same way rewards are pooled.
    pub share_costs: bool,
}

impl CmgSpec {
    pub fn new(env: EnvConfig, penalty_mode: PenaltyMode, coalition: CoalitionStructure) -> Self {
        Self {
            env,
            econ: EconomicParams::default(),
            penalty: PenaltyParams::new(penalty_mode),
            coalition,
            horizon: 25,
            reward_scale: 0.01,
            cost_scale: 0.001,
            share_costs: false,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.env.n_agents()
    }

    pub fn gamma(&self) -> f64 {
        self.econ.gamma
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.econ.validate()?;
        self.penalty.validate()?;
        if self.horizon == 0 {
            return input_err("horizon must be at least one step");
        }
        if self.coalition.n_agents() != self.n_agents() {
            return input_err(format!(
                "coalition covers {} agents but the scenario has {}",
                self.coalition.n_agents(),
                self.n_agents()
            ));
        }
        for (name, v) in [("reward_scale", self.reward_scale), ("cost_scale", self.cost_scale)] {
            if !(v > 0.0 && v.is_finite()) {
                return input_err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    pub fn obs_dims(&self) -> Vec<usize> {
        (0..self.n_agents()).map(|i| observation_dim(&self.env, i)).collect()
    }

    pub fn action_dims(&self) -> Vec<usize> {
        (0..self.n_agents()).map(|i| self.env.wells_of(i).len()).collect()
    }
}

/// Maps actions in `[−1, 1]` to signed rates for the given wells.
pub fn action_to_rates(action: &[f64], wells: &[&WellSpec]) -> Result<Vec<f64>> {
    if action.len() != wells.len() {
        return input_err(format!("{} actions for {} wells", action.len(), wells.len()));
    }
    action
        .iter()
        .zip(wells)
        .map(|(&a, w)| {
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("action for well {}", w.id)));
            }
            let r = w.rate_min + 0.5 * (a + 1.0) * (w.rate_max - w.rate_min);
            Ok(w.sign() * r.clamp(w.rate_min, w.rate_max))
        })
        .collect()
}

/// `Σ_{t=1..T} γ^t r_t`.
pub fn discounted_return(series: &[f64], gamma: f64) -> Result<f64> {
    discounted_sum(series, gamma)
}

/// `Σ_{t=1..T} γ^t c_t`.
pub fn discounted_cost(series: &[f64], gamma: f64) -> Result<f64> {
    discounted_sum(series, gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Coalition rewards times `reward_scale`.
    pub rewards: Vec<f64>,
    /// Penalties times `cost_scale`, pooled over blocks when `share_costs` is set.
    pub costs: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    pub done: bool,
}

/// Everything that happened during one control step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub transition: Transition,
    pub next_state: ReservoirState,
    /// Signed rates per well, MMTon/yr.
    pub rates: Vec<f64>,
    /// Own (uncoalesced) PV per agent, $M.
    pub pv: Vec<f64>,
    /// Penalty per agent, $.
    pub cost: Vec<f64>,
    pub max_area_pressure: Vec<f64>,
    /// Area cells above their threshold, per agent, regardless of penalty mode.
    pub area_violations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// `[t][agent]` own PV, $M.
    pub pv: Vec<Vec<f64>>,
    /// `[t][agent]` penalty, $.
    pub cost: Vec<Vec<f64>>,
    /// `[t][well]` signed rates, MMTon/yr.
    pub rates: Vec<Vec<f64>>,
    /// `[t][agent]` max pressure over each area after the step, kPa.
    pub max_area_pressure: Vec<Vec<f64>>,
    /// `[t][agent]` area cells above threshold after the step.
    pub area_violations: Vec<Vec<usize>>,
    pub final_state: ReservoirState,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    fn column<T: Copy>(rows: &[Vec<T>], agent: usize) -> Vec<T> {
        rows.iter().map(|r| r[agent]).collect()
    }

    pub fn pv_series(&self, agent: usize) -> Vec<f64> {
        Self::column(&self.pv, agent)
    }

    pub fn cost_series(&self, agent: usize) -> Vec<f64> {
        Self::column(&self.cost, agent)
    }

    pub fn npv(&self, agent: usize, gamma: f64) -> Result<f64> {
        discounted_return(&self.pv_series(agent), gamma)
    }

    pub fn discounted_cost(&self, agent: usize, gamma: f64) -> Result<f64> {
        discounted_cost(&self.cost_series(agent), gamma)
    }

    /// Undiscounted sum of own PV, $M.
    pub fn total_pv(&self, agent: usize) -> f64 {
        self.pv.iter().map(|r| r[agent]).sum()
    }

    /// Undiscounted sum of penalties, $.
    pub fn total_cost(&self, agent: usize) -> f64 {
        self.cost.iter().map(|r| r[agent]).sum()
    }

    pub fn has_area_violation(&self) -> bool {
        self.area_violations.iter().flatten().any(|&v| v > 0)
    }

    /// Writes `t,agent,action_k...,rate_k...,pv,cost,max_area_pressure`, one
    /// row per step and agent. Agents with fewer wells leave trailing cells empty.
    pub fn write_csv<W: Write>(&self, cfg: &EnvConfig, out: W) -> Result<()> {
        let n = cfg.n_agents();
        let k = (0..n).map(|i| cfg.wells_of(i).len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "agent".to_string()];
        header.extend((0..k).map(|j| format!("action_{j}")));
        header.extend((0..k).map(|j| format!("rate_{j}")));
        header.extend(["pv", "cost", "max_area_pressure"].map(String::from));
        w.write_record(&header)?;
        for (t, tr) in self.transitions.iter().enumerate() {
            for agent in 0..n {
                let wells = cfg.wells_of(agent);
                let mut row = vec![(t + 1).to_string(), agent.to_string()];
                let pad = |row: &mut Vec<String>, vals: Vec<String>| {
                    let len = vals.len();
                    row.extend(vals);
                    row.extend(std::iter::repeat_n(String::new(), k - len));
                };
                pad(&mut row, tr.actions[agent].iter().map(|a| a.to_string()).collect());
                pad(&mut row, wells.iter().map(|&wi| self.rates[t][wi].to_string()).collect());
                row.push(self.pv[t][agent].to_string());
                row.push(self.cost[t][agent].to_string());
                row.push(self.max_area_pressure[t][agent].to_string());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Deterministic decentralized policy: each agent acts on its own observation.
pub trait Policy {
    fn act(&self, agent: usize, obs: &[f64]) -> Result<Vec<f64>>;
}

/// Every action component fixed to one value.
#[derive(Debug, Clone)]
pub struct ConstantPolicy {
    pub value: f64,
    /// Action width of each agent.
    pub action_dims: Vec<usize>,
}

impl ConstantPolicy {
    pub fn for_spec(spec: &CmgSpec, value: f64) -> Self {
        Self { value, action_dims: spec.action_dims() }
    }
}

impl Policy for ConstantPolicy {
    fn act(&self, agent: usize, _obs: &[f64]) -> Result<Vec<f64>> {
        match self.action_dims.get(agent) {
            Some(&d) => Ok(vec![self.value; d]),
            None => input_err(format!("no action width for agent {agent}")),
        }
    }
}

/// Additive exploration noise.
pub trait ActionNoise {
    fn perturb(&mut self, agent: usize, action: &mut [f64]);
}

/// Independent `N(0, σ²)` per component.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    pub sigma: f64,
    rng: ChaCha8Rng,
}

impl GaussianNoise {
    pub fn new(sigma: f64, rng: ChaCha8Rng) -> Self {
        Self { sigma, rng }
    }
}

impl ActionNoise for GaussianNoise {
    fn perturb(&mut self, _agent: usize, action: &mut [f64]) {
        if self.sigma > 0.0 {
            add_gaussian(action, self.sigma, &mut self.rng);
        }
    }
}

pub(crate) fn add_gaussian<R: Rng + ?Sized>(action: &mut [f64], sigma: f64, rng: &mut R) {
    let normal = Normal::new(0.0, sigma).expect("positive finite sigma");
    for a in action {
        *a += normal.sample(rng);
    }
}

/// A game ready to be played many times; the dynamics are built once.
pub struct Game {
    spec: CmgSpec,
    dynamics: Arc<dyn Dynamics>,
    well_groups: Vec<Vec<usize>>,
}

impl std::fmt::Debug for Game {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Game").field("spec", &self.spec).finish_non_exhaustive()
    }
}

impl Game {
    pub fn new(spec: CmgSpec) -> Result<Self> {
        spec.validate()?;
        let dynamics = Arc::from(build_dynamics(spec.env.clone())?);
        let well_groups = (0..spec.n_agents()).map(|i| spec.env.wells_of(i)).collect();
        Ok(Self { spec, dynamics, well_groups })
    }

    /// Reuses already-built dynamics with a different coalition, penalty or scaling.
    pub fn with_spec(&self, spec: CmgSpec) -> Result<Self> {
        if spec.env != self.spec.env {
            return Self::new(spec);
        }
        spec.validate()?;
        Ok(Self { well_groups: self.well_groups.clone(), spec, dynamics: Arc::clone(&self.dynamics) })
    }

    pub fn spec(&self) -> &CmgSpec {
        &self.spec
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.dynamics.as_ref()
    }

    pub fn reset(&self) -> ReservoirState {
        self.spec.env.initial_state()
    }

    pub fn observations(&self, state: &ReservoirState) -> Result<Vec<Vec<f64>>> {
        (0..self.spec.n_agents())
            .map(|i| observe(&self.spec.env, state, i, self.spec.horizon))
            .collect()
    }

    /// Signed rates for every well from per-agent actions.
    pub fn joint_rates(&self, actions: &[Vec<f64>]) -> Result<Vec<f64>> {
        if actions.len() != self.spec.n_agents() {
            return input_err(format!("{} action vectors for {} agents", actions.len(), self.spec.n_agents()));
        }
        let mut rates = vec![0.0; self.spec.env.wells.len()];
        for (group, action) in self.well_groups.iter().zip(actions) {
            let wells: Vec<&WellSpec> = group.iter().map(|&k| &self.spec.env.wells[k]).collect();
            for (&k, r) in group.iter().zip(action_to_rates(action, &wells)?) {
                rates[k] = r;
            }
        }
        Ok(rates)
    }

    /// Applies joint actions (already in `[−1, 1]`) at `state`.
    pub fn step(&self, state: &ReservoirState, obs: Vec<Vec<f64>>, actions: Vec<Vec<f64>>) -> Result<StepOutcome> {
        let spec = &self.spec;
        let env = &spec.env;
        let n = spec.n_agents();
        let rates = self.joint_rates(&actions)?;
        let next_state = self.dynamics.step(state, &rates)?;
        if let Some(p) = next_state.pressure.iter().find(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("reservoir pressure {p} at t={}", next_state.t)));
        }

        let pv: Vec<f64> = (0..n)
            .map(|i| present_value_from_rates(i, &env.wells, &rates, &spec.econ, env.dt_step))
            .collect();
        let cost = (0..n)
            .map(|i| penalty(&next_state, i, env, &spec.penalty))
            .collect::<Result<Vec<_>>>()?;
        let mut max_area_pressure = Vec::with_capacity(n);
        let mut area_violations = Vec::with_capacity(n);
        for i in 0..n {
            let area = env.area(i)?;
            max_area_pressure.push(max_region_pressure(&env.grid, &next_state, area)?);
            area_violations.push(
                area.cells
                    .iter()
                    .filter(|&&c| next_state.pressure[env.grid.index(c)] > area.p_threshold)
                    .count(),
            );
        }

        let rewards = coalition_rewards(&pv, &spec.coalition)?
            .into_iter()
            .map(|r| r * spec.reward_scale)
            .collect();
        let pooled = if spec.share_costs { coalition_rewards(&cost, &spec.coalition)? } else { cost.clone() };
        let costs = pooled.iter().map(|c| c * spec.cost_scale).collect();
        let next_obs = self.observations(&next_state)?;
        let done = next_state.t >= spec.horizon;
        Ok(StepOutcome {
            transition: Transition { obs, actions, rewards, costs, next_obs, done },
            next_state,
            rates,
            pv,
            cost,
            max_area_pressure,
            area_violations,
        })
    }

    /// Plays one full episode from `p_init`.
    pub fn run_episode(&self, policy: &dyn Policy, mut noise: Option<&mut dyn ActionNoise>) -> Result<Trajectory> {
        let n = self.spec.n_agents();
        let horizon = self.spec.horizon;
        let mut state = self.reset();
        let mut obs = self.observations(&state)?;
        let mut traj = Trajectory {
            transitions: Vec::with_capacity(horizon),
            pv: Vec::with_capacity(horizon),
            cost: Vec::with_capacity(horizon),
            rates: Vec::with_capacity(horizon),
            max_area_pressure: Vec::with_capacity(horizon),
            area_violations: Vec::with_capacity(horizon),
            final_state: state.clone(),
        };
        for _ in 0..horizon {
            let mut actions = Vec::with_capacity(n);
            for (i, o) in obs.iter().enumerate() {
                let mut a = policy.act(i, o)?;
                if let Some(noise) = noise.as_deref_mut() {
                    noise.perturb(i, &mut a);
                }
                a.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
                actions.push(a);
            }
            let out = self.step(&state, obs, actions)?;
            obs = out.transition.next_obs.clone();
            state = out.next_state;
            traj.transitions.push(out.transition);
            traj.pv.push(out.pv);
            traj.cost.push(out.cost);
            traj.rates.push(out.rates);
            traj.max_area_pressure.push(out.max_area_pressure);
            traj.area_violations.push(out.area_violations);
        }
        traj.final_state = state;
        Ok(traj)
    }
}

/// Builds the game and plays one episode.
pub fn run_episode(spec: &CmgSpec, policy: &dyn Policy, noise: Option<&mut dyn ActionNoise>) -> Result<Trajectory> {
    Game::new(spec.clone())?.run_episode(policy, noise)
}
