//! Constrained NSGA-II over open-loop injection schedules.
//!
//! A genome holds rate magnitudes (MMTon/yr) for every well, either one per
//! control step or one per well for the whole horizon. Objectives are
//! maximized; constraints are handled with the feasibility rule (feasible
//! beats infeasible, lower violation beats higher).

mod operators;

use std::cmp::Ordering;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use operators::{polynomial_mutation, sbx_crossover};

use crate::econ::{npv, present_value_from_rates};
use crate::error::{input_err, ConfigIssue, Error, Result};
use crate::game::Game;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// One rate per well per control step.
    #[default]
    Yearly,
    /// One rate per well held for the whole horizon.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// One NPV objective per agent.
    #[default]
    PerAgent,
    /// A single objective: the sum of all NPVs.
    Team,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Nsga2Config {
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub crossover_eta: f64,
    /// Per-gene mutation probability; `None` means `1 / genome length`.
    pub mutation_prob: Option<f64>,
    pub mutation_eta: f64,
    pub schedule: Schedule,
    /// Snap every rate to this many evenly spaced levels; `None` keeps rates continuous.
    pub rate_levels: Option<usize>,
    pub objective: ObjectiveKind,
    pub seed: u64,
}

impl Default for Nsga2Config {
    fn default() -> Self {
        Self {
            population: 100,
            generations: 200,
            crossover_prob: 0.9,
            crossover_eta: 15.0,
            mutation_prob: None,
            mutation_eta: 20.0,
            schedule: Schedule::Yearly,
            rate_levels: None,
            objective: ObjectiveKind::PerAgent,
            seed: 0,
        }
    }
}

impl Nsga2Config {
    /// Every problem with the configuration, keyed by field name.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut bad = Vec::new();
        let mut push = |key: &str, message: String| bad.push(ConfigIssue { key: key.to_string(), message });
        if self.population < 2 || self.population % 2 != 0 {
            push("population", format!("must be even and at least 2, got {}", self.population));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            push("crossover_prob", format!("must lie in [0,1], got {}", self.crossover_prob));
        }
        if let Some(p) = self.mutation_prob {
            if !(0.0..=1.0).contains(&p) {
                push("mutation_prob", format!("must lie in [0,1], got {p}"));
            }
        }
        if let Some(k) = self.rate_levels {
            if k < 2 {
                push("rate_levels", format!("must be at least 2, got {k}"));
            }
        }
        for (key, eta) in [("crossover_eta", self.crossover_eta), ("mutation_eta", self.mutation_eta)] {
            if !(eta >= 0.0 && eta.is_finite()) {
                push(key, format!("must be non-negative, got {eta}"));
            }
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Vec<f64>,
    /// Maximized objectives, $M.
    pub objectives: Vec<f64>,
    /// Per-agent NPV regardless of the objective kind, $M.
    pub agent_npv: Vec<f64>,
    /// `Σ_{t, area cells} max(0, p − p_threshold)`, kPa·cells.
    pub cv: f64,
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    pub fn is_feasible(&self) -> bool {
        self.cv == 0.0
    }
}

/// Feasibility rule followed by Pareto dominance under maximization.
pub fn dominates(a: &Individual, b: &Individual) -> bool {
    match (a.is_feasible(), b.is_feasible()) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.cv < b.cv,
        (true, true) => {
            let mut strictly = false;
            for (x, y) in a.objectives.iter().zip(&b.objectives) {
                if x < y {
                    return false;
                }
                strictly |= x > y;
            }
            strictly
        }
    }
}

/// Index fronts `F1, F2, …`; also writes each individual's `rank` (0-based).
pub fn fast_non_dominated_sort(pop: &mut [Individual]) -> Vec<Vec<usize>> {
    let n = pop.len();
    let mut dominated_by = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    for p in 0..n {
        for q in p + 1..n {
            if dominates(&pop[p], &pop[q]) {
                dominated_by[p].push(q);
                count[q] += 1;
            } else if dominates(&pop[q], &pop[p]) {
                dominated_by[q].push(p);
                count[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            pop[p].rank = fronts.len();
            for &q in &dominated_by[p] {
                count[q] -= 1;
                if count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of the members of one front, in the order given.
pub fn crowding_distance(pop: &[Individual], front: &[usize]) -> Vec<f64> {
    let k = front.len();
    let mut dist = vec![0.0; k];
    if k <= 2 {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        return dist;
    }
    let m = pop[front[0]].objectives.len();
    let mut order: Vec<usize> = (0..k).collect();
    for obj in 0..m {
        let value = |i: usize| pop[front[i]].objectives[obj];
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)));
        let (lo, hi) = (value(order[0]), value(order[k - 1]));
        dist[order[0]] = f64::INFINITY;
        dist[order[k - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for w in 1..k - 1 {
            dist[order[w]] += (value(order[w + 1]) - value(order[w - 1])) / range;
        }
    }
    dist
}

/// Objective and constraint evaluation of schedules on a fixed game.
pub struct Evaluator<'a> {
    game: &'a Game,
    schedule: Schedule,
    objective: ObjectiveKind,
    levels: Option<usize>,
}

impl<'a> Evaluator<'a> {
    pub fn new(game: &'a Game, schedule: Schedule, objective: ObjectiveKind) -> Self {
        Self { game, schedule, objective, levels: None }
    }

    /// Decodes each gene to the nearest of `levels` evenly spaced rates
    /// between the well's bounds.
    pub fn with_levels(mut self, levels: Option<usize>) -> Self {
        self.levels = levels;
        self
    }

    fn decode(&self, r: f64, lo: f64, hi: f64) -> f64 {
        match self.levels {
            Some(k) if k >= 2 => {
                let step = (hi - lo) / (k - 1) as f64;
                let idx = ((r - lo) / step).round().clamp(0.0, (k - 1) as f64);
                if idx == (k - 1) as f64 {
                    hi
                } else {
                    lo + idx * step
                }
            }
            _ => r,
        }
    }

    pub fn genome_len(&self) -> usize {
        let w = self.game.spec().env.wells.len();
        match self.schedule {
            Schedule::Yearly => w * self.game.spec().horizon,
            Schedule::Constant => w,
        }
    }

    /// `(lower, upper)` of gene `g`.
    pub fn bounds(&self, gene: usize) -> (f64, f64) {
        let wells = &self.game.spec().env.wells;
        let w = &wells[gene % wells.len()];
        (w.rate_min, w.rate_max)
    }

    pub fn n_objectives(&self) -> usize {
        match self.objective {
            ObjectiveKind::PerAgent => self.game.spec().n_agents(),
            ObjectiveKind::Team => 1,
        }
    }

    /// Signed per-well rates for each control step.
    pub fn rates(&self, genome: &[f64]) -> Result<Vec<Vec<f64>>> {
        if genome.len() != self.genome_len() {
            return input_err(format!("genome has {} genes, expected {}", genome.len(), self.genome_len()));
        }
        let wells = &self.game.spec().env.wells;
        let w = wells.len();
        Ok((0..self.game.spec().horizon)
            .map(|t| {
                let row = match self.schedule {
                    Schedule::Yearly => &genome[t * w..(t + 1) * w],
                    Schedule::Constant => genome,
                };
                row.iter().zip(wells).map(|(&r, well)| well.sign() * self.decode(r, well.rate_min, well.rate_max)).collect()
            })
            .collect())
    }

    /// Simulates the schedule; returns `(objectives, per-agent NPV, cv)`.
    pub fn evaluate(&self, genome: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let spec = self.game.spec();
        let env = &spec.env;
        let n = spec.n_agents();
        let mut state = self.game.reset();
        let mut pv = vec![Vec::with_capacity(spec.horizon); n];
        let mut cv = 0.0;
        for rates in self.rates(genome)? {
            state = self.game.dynamics().step(&state, &rates)?;
            for (i, series) in pv.iter_mut().enumerate() {
                series.push(present_value_from_rates(i, &env.wells, &rates, &spec.econ, env.dt_step));
            }
            for area in &env.areas {
                for &c in &area.cells {
                    cv += (state.pressure[env.grid.index(c)] - area.p_threshold).max(0.0);
                }
            }
        }
        let agent_npv = pv.iter().map(|s| npv(s, spec.gamma())).collect::<Result<Vec<_>>>()?;
        let objectives = match self.objective {
            ObjectiveKind::PerAgent => agent_npv.clone(),
            ObjectiveKind::Team => vec![agent_npv.iter().sum()],
        };
        Ok((objectives, agent_npv, cv))
    }

    pub fn individual(&self, genome: Vec<f64>) -> Result<Individual> {
        let (objectives, agent_npv, cv) = self.evaluate(&genome)?;
        Ok(Individual { genome, objectives, agent_npv, cv, rank: 0, crowding: 0.0 })
    }
}

#[derive(Debug, Clone)]
pub struct Nsga2Result {
    pub population: Vec<Individual>,
    /// Mutually non-dominated feasible individuals seen over the whole run.
    pub front: Vec<Individual>,
    /// Per generation (initial population first): best feasible value of each
    /// objective in the population, `None` when nothing is feasible.
    pub best_feasible: Vec<Vec<Option<f64>>>,
}

fn assign_rank_and_crowding(pop: &mut [Individual]) -> Vec<Vec<usize>> {
    let fronts = fast_non_dominated_sort(pop);
    for f in &fronts {
        for (&i, d) in f.iter().zip(crowding_distance(pop, f)) {
            pop[i].crowding = d;
        }
    }
    fronts
}

fn crowded_better(a: &Individual, b: &Individual) -> bool {
    a.rank < b.rank || (a.rank == b.rank && a.crowding > b.crowding)
}

fn tournament<'p, R: Rng + ?Sized>(pop: &'p [Individual], rng: &mut R) -> &'p Individual {
    let a = &pop[rng.random_range(0..pop.len())];
    let b = &pop[rng.random_range(0..pop.len())];
    if crowded_better(b, a) {
        b
    } else {
        a
    }
}

fn best_feasible(pop: &[Individual], m: usize) -> Vec<Option<f64>> {
    (0..m)
        .map(|k| pop.iter().filter(|i| i.is_feasible()).map(|i| i.objectives[k]).max_by(f64::total_cmp))
        .collect()
}

fn archive_insert(archive: &mut Vec<Individual>, cand: &Individual) {
    if !cand.is_feasible() {
        return;
    }
    if archive.iter().any(|a| dominates(a, cand) || a.objectives == cand.objectives) {
        return;
    }
    archive.retain(|a| !dominates(cand, a));
    archive.push(cand.clone());
}

/// Elitist NSGA-II: binary tournament on (rank, crowding), SBX, polynomial
/// mutation, bound clipping and (μ+λ) environmental selection.
pub fn nsga2_run(eval: &Evaluator<'_>, cfg: &Nsga2Config) -> Result<Nsga2Result> {
    cfg.validate()?;
    let len = eval.genome_len();
    let m = eval.n_objectives();
    let bounds: Vec<(f64, f64)> = (0..len).map(|g| eval.bounds(g)).collect();
    let pm = cfg.mutation_prob.unwrap_or(1.0 / len as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pop = (0..cfg.population)
        .map(|_| eval.individual(bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect()))
        .collect::<Result<Vec<_>>>()?;
    assign_rank_and_crowding(&mut pop);
    let mut archive = Vec::new();
    pop.iter().for_each(|i| archive_insert(&mut archive, i));
    let mut history = vec![best_feasible(&pop, m)];

    for _ in 0..cfg.generations {
        let mut children = Vec::with_capacity(cfg.population);
        while children.len() < cfg.population {
            let mut c1 = tournament(&pop, &mut rng).genome.clone();
            let mut c2 = tournament(&pop, &mut rng).genome.clone();
            if rng.random::<f64>() < cfg.crossover_prob {
                sbx_crossover(&mut c1, &mut c2, &bounds, cfg.crossover_eta, &mut rng);
            }
            polynomial_mutation(&mut c1, &bounds, pm, cfg.mutation_eta, &mut rng);
            polynomial_mutation(&mut c2, &bounds, pm, cfg.mutation_eta, &mut rng);
            children.push(c1);
            children.push(c2);
        }
        let mut combined = pop;
        for g in children {
            let child = eval.individual(g)?;
            archive_insert(&mut archive, &child);
            combined.push(child);
        }
        let fronts = assign_rank_and_crowding(&mut combined);
        let mut keep = Vec::with_capacity(cfg.population);
        for f in fronts {
            if keep.len() + f.len() <= cfg.population {
                keep.extend(f);
            } else {
                let mut last = f;
                last.sort_by(|&a, &b| combined[b].crowding.total_cmp(&combined[a].crowding).then(a.cmp(&b)));
                keep.extend(last.into_iter().take(cfg.population - keep.len()));
            }
            if keep.len() == cfg.population {
                break;
            }
        }
        keep.sort_unstable();
        pop = keep.into_iter().map(|i| combined[i].clone()).collect();
        assign_rank_and_crowding(&mut pop);
        history.push(best_feasible(&pop, m));
    }

    archive.sort_by(|a, b| {
        a.objectives
            .iter()
            .zip(&b.objectives)
            .map(|(x, y)| y.total_cmp(x))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    for a in &mut archive {
        a.rank = 0;
    }
    let idx: Vec<usize> = (0..archive.len()).collect();
    for (a, d) in idx.iter().zip(crowding_distance(&archive, &idx)) {
        archive[*a].crowding = d;
    }
    Ok(Nsga2Result { population: pop, front: archive, best_feasible: history })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "agent")]
pub enum Selection {
    /// Closest to the ideal point after per-objective min-max normalization.
    Knee,
    /// Highest value of one objective.
    Favor(usize),
}

pub fn select_solution<'f>(front: &'f [Individual], mode: Selection) -> Result<&'f Individual> {
    if front.is_empty() {
        return input_err("cannot select from an empty front");
    }
    let m = front[0].objectives.len();
    match mode {
        Selection::Favor(k) => {
            if k >= m {
                return input_err(format!("objective {k} out of range for {m} objectives"));
            }
            Ok(front
                .iter()
                .reduce(|best, x| if x.objectives[k] > best.objectives[k] { x } else { best })
                .expect("non-empty"))
        }
        Selection::Knee => {
            let lo: Vec<f64> = (0..m).map(|k| front.iter().map(|i| i.objectives[k]).fold(f64::INFINITY, f64::min)).collect();
            let hi: Vec<f64> = (0..m).map(|k| front.iter().map(|i| i.objectives[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
            let gap = |i: &Individual| -> f64 {
                (0..m)
                    .map(|k| {
                        let range = hi[k] - lo[k];
                        let z = if range > 0.0 { (i.objectives[k] - lo[k]) / range } else { 1.0 };
                        (1.0 - z).powi(2)
                    })
                    .sum::<f64>()
            };
            Ok(front
                .iter()
                .reduce(|best, x| if gap(x) < gap(best) { x } else { best })
                .expect("non-empty"))
        }
    }
}

/// Column label of objective `k`.
fn objective_label(n_objectives: usize, k: usize) -> String {
    if n_objectives == 1 {
        "npv_total".to_string()
    } else if k < 26 {
        format!("npv_{}", (b'A' + k as u8) as char)
    } else {
        format!("npv_{k}")
    }
}

/// Writes `id,npv_A,npv_B,…,cv`; the header is written even for an empty front.
pub fn write_front_csv<W: Write>(front: &[Individual], n_objectives: usize, out: W) -> Result<()> {
    let m = n_objectives;
    if front.iter().any(|i| i.objectives.len() != m) {
        return input_err(format!("front members must have {m} objectives"));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend((0..m).map(|k| objective_label(m, k)));
    header.push("cv".into());
    w.write_record(&header)?;
    for (id, ind) in front.iter().enumerate() {
        let mut row = vec![id.to_string()];
        row.extend(ind.objectives.iter().map(|v| v.to_string()));
        row.push(ind.cv.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A chosen front member together with its schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSolution {
    pub selection: Selection,
    pub objectives: Vec<f64>,
    pub agent_npv: Vec<f64>,
    pub total_npv: f64,
    pub cv: f64,
    /// `[t][well]` signed rates, MMTon/yr.
    pub schedule: Vec<Vec<f64>>,
}

pub fn describe(eval: &Evaluator<'_>, ind: &Individual, selection: Selection) -> Result<SelectedSolution> {
    Ok(SelectedSolution {
        selection,
        objectives: ind.objectives.clone(),
        agent_npv: ind.agent_npv.clone(),
        total_npv: ind.agent_npv.iter().sum(),
        cv: ind.cv,
        schedule: eval.rates(&ind.genome)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ind(objectives: &[f64], cv: f64) -> Individual {
        Individual {
            genome: vec![],
            objectives: objectives.to_vec(),
            agent_npv: objectives.to_vec(),
            cv,
            rank: 0,
            crowding: 0.0,
        }
    }

    #[test]
    fn dominance_rules() {
        assert!(dominates(&ind(&[0.0, 0.0], 0.0), &ind(&[9.0, 9.0], 1.0)));
        assert!(dominates(&ind(&[2.0, 2.0], 0.0), &ind(&[1.0, 1.0], 0.0)));
        assert!(!dominates(&ind(&[2.0, 1.0], 0.0), &ind(&[1.0, 2.0], 0.0)));
        assert!(!dominates(&ind(&[1.0, 2.0], 0.0), &ind(&[2.0, 1.0], 0.0)));
        assert!(dominates(&ind(&[0.0], 1.0), &ind(&[5.0], 2.0)));
        let a = ind(&[1.0, 1.0], 0.0);
        assert!(!dominates(&a, &a));
    }

    #[test]
    fn sort_single_front_and_chain() {
        let mut pop = vec![ind(&[1.0, 3.0], 0.0), ind(&[2.0, 2.0], 0.0), ind(&[3.0, 1.0], 0.0)];
        assert_eq!(fast_non_dominated_sort(&mut pop), vec![vec![0, 1, 2]]);
        let mut chain = vec![ind(&[1.0, 1.0], 0.0), ind(&[3.0, 3.0], 0.0), ind(&[2.0, 2.0], 0.0)];
        assert_eq!(fast_non_dominated_sort(&mut chain), vec![vec![1], vec![2], vec![0]]);
        assert_eq!(chain[0].rank, 2);
    }

    #[test]
    fn crowding_examples() {
        let pop = vec![ind(&[0.0, 2.0], 0.0), ind(&[1.0, 1.0], 0.0), ind(&[2.0, 0.0], 0.0)];
        assert_eq!(crowding_distance(&pop, &[0, 2]), vec![f64::INFINITY; 2]);
        let d = crowding_distance(&pop, &[0, 1, 2]);
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert!((d[1] - 2.0).abs() < 1e-12);
        let flat = vec![ind(&[1.0, 1.0], 0.0); 4];
        let d = crowding_distance(&flat, &[0, 1, 2, 3]);
        assert_eq!(d.iter().filter(|x| x.is_infinite()).count(), 2);
        assert_eq!(d.iter().filter(|&&x| x == 0.0).count(), 2);
    }

    #[test]
    fn selection_examples() {
        let one = vec![ind(&[1.0, 2.0], 0.0)];
        assert_eq!(select_solution(&one, Selection::Knee).unwrap(), &one[0]);
        assert_eq!(select_solution(&one, Selection::Favor(1)).unwrap(), &one[0]);
        let two = vec![ind(&[3.0, 1.0], 0.0), ind(&[1.0, 3.0], 0.0)];
        assert_eq!(select_solution(&two, Selection::Favor(0)).unwrap().objectives, vec![3.0, 1.0]);
        let three = vec![ind(&[1.0, 0.0], 0.0), ind(&[0.0, 1.0], 0.0), ind(&[0.7, 0.7], 0.0)];
        assert_eq!(select_solution(&three, Selection::Knee).unwrap().objectives, vec![0.7, 0.7]);
        assert!(select_solution(&[], Selection::Knee).is_err());
        assert!(select_solution(&two, Selection::Favor(2)).is_err());
    }

    #[test]
    fn front_csv_layout() {
        let front = vec![ind(&[3.0, 1.0, 2.0], 0.0)];
        let mut buf = Vec::new();
        write_front_csv(&front, 3, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "id,npv_A,npv_B,npv_C,cv\n0,3,1,2,0\n");
    }

    #[test]
    fn config_validation() {
        assert!(Nsga2Config::default().validate().is_ok());
        let bad = Nsga2Config { population: 7, crossover_prob: 1.5, ..Nsga2Config::default() };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("population") && msg.contains("crossover_prob"));
        assert!(Nsga2Config { rate_levels: Some(1), ..Nsga2Config::default() }.validate().is_err());
    }

    #[test]
    fn levels_snap_to_grid() {
        use crate::econ::{CoalitionStructure, PenaltyMode};
        use crate::env::{desk_scale, DESK_PERMEABILITY_SEED};
        use crate::game::CmgSpec;
        let spec = CmgSpec::new(desk_scale(DESK_PERMEABILITY_SEED), PenaltyMode::Well, CoalitionStructure::singletons(3));
        let game = Game::new(spec).unwrap();
        let eval = Evaluator::new(&game, Schedule::Constant, ObjectiveKind::Team).with_levels(Some(3));
        let rates = eval.rates(&[0.5, 1.6, 1.7, 3.8, 4.0, 5.0]).unwrap();
        assert_eq!(rates[0], vec![0.5, 0.5, 2.75, 2.75, 5.0, 5.0]);
        let plain = Evaluator::new(&game, Schedule::Constant, ObjectiveKind::Team);
        assert_eq!(plain.rates(&[1.6; 6]).unwrap()[7], vec![1.6; 6]);
    }
}
