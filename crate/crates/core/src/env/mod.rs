//! Reduced-physics reservoir: single-phase, slightly compressible pressure
//! diffusion on a 2-D grid with injection and extraction wells.
//!
//! One control step advances the pressure by `dt_step` years through
//! `substeps_per_step` backward-Euler substeps. Each substep solves
//!
//! ```text
//! (Acc + T) p_new = Acc p_old + q_vol,    Acc = φ c_t V / Δt_sub
//! ```
//!
//! with conjugate gradients. Pressures are in kPa, time in years, and well
//! rates in MMTon/yr (positive for injection, negative for extraction).

mod grid;
mod propagator;
mod scenario;
mod system;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use grid::{lognormal_permeability, read_permeability_csv, Cell, GridSpec};
pub use propagator::AffinePropagator;
pub use scenario::{desk_scale, DESK_PERMEABILITY_SEED};
pub use system::{build_system, TransmissibilityMatrix, MILLIDARCY_M2, SECONDS_PER_YEAR, TRANSMISSIBILITY_UNITS};

use crate::error::{input_err, Error, Result};

/// CG stopping criterion on the relative residual.
pub const CG_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WellKind {
    Injector,
    Extractor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellSpec {
    pub id: String,
    pub owner: usize,
    pub cell: Cell,
    pub kind: WellKind,
    /// Lower bound on |rate|, MMTon/yr.
    pub rate_min: f64,
    /// Upper bound on |rate|, MMTon/yr.
    pub rate_max: f64,
}

impl WellSpec {
    /// Sign applied to a rate magnitude: +1 for injectors, −1 for extractors.
    pub fn sign(&self) -> f64 {
        match self.kind {
            WellKind::Injector => 1.0,
            WellKind::Extractor => -1.0,
        }
    }
}

/// A leased project area: the cells one operator answers for and its
/// allowable pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectArea {
    pub owner: usize,
    /// Sorted, duplicate-free.
    pub cells: Vec<Cell>,
    pub p_threshold: f64,
}

impl ProjectArea {
    pub fn new(owner: usize, mut cells: Vec<Cell>, p_threshold: f64) -> Self {
        cells.sort_unstable();
        cells.dedup();
        Self { owner, cells, p_threshold }
    }

    /// All cells with `i0 <= i < i1` and `j0 <= j < j1`.
    pub fn rectangle(owner: usize, i: std::ops::Range<usize>, j: std::ops::Range<usize>, p_threshold: f64) -> Self {
        let cells = i.flat_map(|i| j.clone().map(move |j| (i, j))).collect();
        Self::new(owner, cells, p_threshold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    /// Per-cell pressure, kPa, row-major.
    pub pressure: Vec<f64>,
    /// Control steps elapsed.
    pub t: usize,
}

impl ReservoirState {
    pub fn uniform(n: usize, p: f64) -> Self {
        Self { pressure: vec![p; n], t: 0 }
    }
}

/// How a control step is advanced. Both produce the same affine map; the
/// propagator is assembled once from CG solves and then costs one dense
/// matrix-vector product per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Cg,
    #[default]
    Propagator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub grid: GridSpec,
    pub wells: Vec<WellSpec>,
    /// One area per agent, indexed by owner.
    pub areas: Vec<ProjectArea>,
    pub p_init: f64,
    pub p_frac: f64,
    /// kg/m³, converts injected mass to reservoir volume.
    pub co2_density: f64,
    pub substeps_per_step: usize,
    /// Years per control step.
    pub dt_step: f64,
    pub solver: SolverKind,
}

impl EnvConfig {
    pub fn n_agents(&self) -> usize {
        self.areas.len()
    }

    pub fn area(&self, agent: usize) -> Result<&ProjectArea> {
        self.areas
            .iter()
            .find(|a| a.owner == agent)
            .ok_or_else(|| Error::Input(format!("agent {agent} has no project area")))
    }

    /// Global indices of the wells owned by `agent`, in declaration order.
    pub fn wells_of(&self, agent: usize) -> Vec<usize> {
        self.wells
            .iter()
            .enumerate()
            .filter(|(_, w)| w.owner == agent)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n_agents = self.areas.len();
        if n_agents == 0 {
            return input_err("at least one project area is required");
        }
        let mut owners: Vec<usize> = self.areas.iter().map(|a| a.owner).collect();
        owners.sort_unstable();
        if owners != (0..n_agents).collect::<Vec<_>>() {
            return input_err(format!("area owners must be 0..{n_agents} exactly once each, got {owners:?}"));
        }
        let mut owner_of = vec![usize::MAX; self.grid.cell_count()];
        for area in &self.areas {
            if area.cells.is_empty() {
                return input_err(format!("area of agent {} is empty", area.owner));
            }
            if !(area.p_threshold < self.p_frac) {
                return input_err(format!(
                    "area {} threshold {} must be below p_frac {}",
                    area.owner, area.p_threshold, self.p_frac
                ));
            }
            if !(self.p_init < area.p_threshold) {
                return input_err(format!(
                    "p_init {} must be below area {} threshold {}",
                    self.p_init, area.owner, area.p_threshold
                ));
            }
            for &c in &area.cells {
                if !self.grid.contains(c) {
                    return input_err(format!("area {} cell {c:?} outside grid", area.owner));
                }
                let slot = &mut owner_of[self.grid.index(c)];
                if *slot != usize::MAX {
                    return input_err(format!("cell {c:?} belongs to both area {} and area {}", *slot, area.owner));
                }
                *slot = area.owner;
            }
        }
        for w in &self.wells {
            if w.owner >= n_agents {
                return input_err(format!("well {} owner {} has no area", w.id, w.owner));
            }
            if !self.grid.contains(w.cell) {
                return input_err(format!("well {} cell {:?} outside grid", w.id, w.cell));
            }
            if !(w.rate_min >= 0.0 && w.rate_min <= w.rate_max && w.rate_max.is_finite()) {
                return input_err(format!(
                    "well {} needs 0 <= rate_min <= rate_max, got [{}, {}]",
                    w.id, w.rate_min, w.rate_max
                ));
            }
        }
        for agent in 0..n_agents {
            if self.wells_of(agent).is_empty() {
                return input_err(format!("agent {agent} owns no wells"));
            }
        }
        if !(self.p_init > 0.0 && self.p_frac.is_finite()) {
            return input_err("p_init must be positive");
        }
        if !(self.co2_density > 0.0) {
            return input_err("co2_density must be positive");
        }
        if self.substeps_per_step < 1 {
            return input_err("substeps_per_step must be at least 1");
        }
        if !(self.dt_step > 0.0) {
            return input_err("dt_step must be positive");
        }
        Ok(())
    }

    /// Checks one signed rate per well against kind and bounds.
    pub fn check_rates(&self, rates: &[f64]) -> Result<()> {
        if rates.len() != self.wells.len() {
            return input_err(format!("expected {} rates, got {}", self.wells.len(), rates.len()));
        }
        for (w, &q) in self.wells.iter().zip(rates) {
            let slack = 1e-9 * w.rate_max.max(1.0);
            let magnitude = q * w.sign();
            if !q.is_finite() || magnitude < w.rate_min - slack || magnitude > w.rate_max + slack {
                return input_err(format!(
                    "well {} rate {q} outside [{}, {}] for a {:?}",
                    w.id, w.rate_min, w.rate_max, w.kind
                ));
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> ReservoirState {
        ReservoirState::uniform(self.grid.cell_count(), self.p_init)
    }

    /// Per-cell accumulation coefficient `φ c_t V / Δt_sub`, m³/(kPa·yr).
    pub fn accumulation(&self) -> f64 {
        let g = &self.grid;
        let dt_sub = self.dt_step / self.substeps_per_step as f64;
        g.porosity * g.total_compressibility * g.cell_volume() / dt_sub
    }

    /// m³/yr of reservoir volume per MMTon/yr of mass rate.
    pub fn volume_per_rate(&self) -> f64 {
        1e9 / self.co2_density
    }
}

/// Any deterministic one-step pressure map.
pub trait Dynamics: Send + Sync {
    fn config(&self) -> &EnvConfig;

    /// Advances one control step with arbitrary signed rates (only the count is
    /// checked). Used by oracles and superposition checks.
    fn advance(&self, state: &ReservoirState, rates: &[f64]) -> Result<ReservoirState>;

    /// Advances one control step after checking the rates against well bounds.
    fn step(&self, state: &ReservoirState, rates: &[f64]) -> Result<ReservoirState> {
        self.config().check_rates(rates)?;
        self.advance(state, rates)
    }
}

/// The CG-backed reservoir.
#[derive(Debug, Clone)]
pub struct Reservoir {
    cfg: EnvConfig,
    system: TransmissibilityMatrix,
    shift: Vec<f64>,
    well_index: Vec<usize>,
    max_iter: usize,
}

impl Reservoir {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let system = build_system(&cfg.grid)?;
        let n = cfg.grid.cell_count();
        let shift = vec![cfg.accumulation(); n];
        let well_index = cfg.wells.iter().map(|w| cfg.grid.index(w.cell)).collect();
        Ok(Self { cfg, system, shift, well_index, max_iter: 10 * n })
    }

    pub fn system(&self) -> &TransmissibilityMatrix {
        &self.system
    }

    /// Diagonal of the accumulation matrix.
    pub fn accumulation(&self) -> &[f64] {
        &self.shift
    }

    /// Volumetric source vector (m³/yr per cell) for signed rates.
    pub fn source(&self, rates: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; self.cfg.grid.cell_count()];
        let scale = self.cfg.volume_per_rate();
        for (&cell, &r) in self.well_index.iter().zip(rates) {
            q[cell] += r * scale;
        }
        q
    }

    /// One backward-Euler substep: solves `(Acc + T) x = Acc p + q` in place,
    /// warm-started from `p`.
    pub(crate) fn substep(&self, p: &mut [f64], q: &[f64]) -> Result<usize> {
        let rhs: Vec<f64> = p.iter().zip(&self.shift).zip(q).map(|((p, a), q)| a * p + q).collect();
        self.system.solve_shifted(&self.shift, &rhs, p, CG_REL_TOL, self.max_iter)
    }

    /// Solves `(Acc + T) x = rhs` from a zero start to relative residual `rel_tol`.
    pub(crate) fn solve(&self, rhs: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
        let mut x = vec![0.0; rhs.len()];
        self.system.solve_shifted(&self.shift, rhs, &mut x, rel_tol, self.max_iter)?;
        Ok(x)
    }
}

impl Dynamics for Reservoir {
    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn advance(&self, state: &ReservoirState, rates: &[f64]) -> Result<ReservoirState> {
        if rates.len() != self.cfg.wells.len() {
            return input_err(format!("expected {} rates, got {}", self.cfg.wells.len(), rates.len()));
        }
        if state.pressure.len() != self.cfg.grid.cell_count() {
            return input_err("state size does not match grid");
        }
        let q = self.source(rates);
        let mut p = state.pressure.clone();
        for _ in 0..self.cfg.substeps_per_step {
            self.substep(&mut p, &q)?;
        }
        Ok(ReservoirState { pressure: p, t: state.t + 1 })
    }
}

/// Builds the dynamics selected by `cfg.solver`.
pub fn build_dynamics(cfg: EnvConfig) -> Result<Box<dyn Dynamics>> {
    let solver = cfg.solver;
    let reservoir = Reservoir::new(cfg)?;
    Ok(match solver {
        SolverKind::Cg => Box::new(reservoir),
        SolverKind::Propagator => Box::new(AffinePropagator::from_reservoir(&reservoir)?),
    })
}

/// Maximum pressure over the area's cells.
pub fn max_region_pressure(grid: &GridSpec, state: &ReservoirState, area: &ProjectArea) -> Result<f64> {
    if area.cells.is_empty() {
        return input_err(format!("area of agent {} is empty", area.owner));
    }
    Ok(area
        .cells
        .iter()
        .map(|&c| state.pressure[grid.index(c)])
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Number of observation entries for `agent`: one per owned well plus three.
pub fn observation_dim(cfg: &EnvConfig, agent: usize) -> usize {
    cfg.wells_of(agent).len() + 3
}

/// Local observation of `agent`:
/// `[p(well_k)/p_frac ..., max p(area)/p_frac, fraction of area cells above
/// 0.9·p_threshold, t/horizon]`.
pub fn observe(cfg: &EnvConfig, state: &ReservoirState, agent: usize, horizon: usize) -> Result<Vec<f64>> {
    let wells = cfg.wells_of(agent);
    if wells.is_empty() {
        return input_err(format!("agent {agent} owns no wells"));
    }
    let area = cfg.area(agent)?;
    let g = &cfg.grid;
    let mut obs = Vec::with_capacity(wells.len() + 3);
    for k in wells {
        obs.push(state.pressure[g.index(cfg.wells[k].cell)] / cfg.p_frac);
    }
    obs.push(max_region_pressure(g, state, area)? / cfg.p_frac);
    let warn = 0.9 * area.p_threshold;
    let above = area.cells.iter().filter(|&&c| state.pressure[g.index(c)] > warn).count();
    obs.push(above as f64 / area.cells.len() as f64);
    obs.push(state.t as f64 / horizon.max(1) as f64);
    Ok(obs)
}

/// Writes `i,j,p_kPa` rows for every cell.
pub fn write_pressure_csv<W: Write>(grid: &GridSpec, state: &ReservoirState, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["i", "j", "p_kPa"])?;
    for (idx, p) in state.pressure.iter().enumerate() {
        let (i, j) = grid.cell(idx);
        w.write_record(&[i.to_string(), j.to_string(), format!("{p:.6}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(nx: usize, ny: usize) -> EnvConfig {
        let grid = GridSpec {
            nx,
            ny,
            dx: 800.0,
            dy: 800.0,
            thickness: 200.0,
            porosity: 0.2,
            total_compressibility: 5e-7,
            viscosity: 0.5,
            permeability: lognormal_permeability(nx, ny, 10.0, 0.5, 1).unwrap(),
        };
        EnvConfig {
            grid,
            wells: vec![WellSpec {
                id: "A1".into(),
                owner: 0,
                cell: (nx / 2, ny / 2),
                kind: WellKind::Injector,
                rate_min: 0.5,
                rate_max: 5.0,
            }],
            areas: vec![ProjectArea::rectangle(0, 0..nx, 0..ny, 55_000.0)],
            p_init: 20_000.0,
            p_frac: 68_000.0,
            co2_density: 700.0,
            substeps_per_step: 10,
            dt_step: 1.0,
            solver: SolverKind::Cg,
        }
    }

    #[test]
    fn uniform_field_is_steady_without_wells() {
        let cfg = small_config(5, 5);
        let res = Reservoir::new(cfg.clone()).unwrap();
        let next = res.advance(&cfg.initial_state(), &[0.0]).unwrap();
        assert_eq!(next.t, 1);
        assert!(next.pressure.iter().all(|p| (p - 20_000.0).abs() <= 1e-9));
    }

    #[test]
    fn injector_raises_and_peaks_at_its_cell() {
        let cfg = small_config(5, 5);
        let res = Reservoir::new(cfg.clone()).unwrap();
        let s0 = cfg.initial_state();
        let s1 = res.step(&s0, &[5.0]).unwrap();
        let w = cfg.grid.index((2, 2));
        assert!(s1.pressure[w] > s0.pressure[w]);
        let max = s1.pressure.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(s1.pressure[w], max);
    }

    #[test]
    fn out_of_bounds_rates_rejected() {
        let cfg = small_config(4, 4);
        let res = Reservoir::new(cfg.clone()).unwrap();
        let s0 = cfg.initial_state();
        assert!(matches!(res.step(&s0, &[6.0]), Err(Error::Input(_))));
        assert!(matches!(res.step(&s0, &[-1.0]), Err(Error::Input(_))));
        assert!(matches!(res.step(&s0, &[1.0, 1.0]), Err(Error::Input(_))));
    }

    #[test]
    fn step_is_bit_deterministic() {
        let cfg = small_config(6, 4);
        let res = Reservoir::new(cfg.clone()).unwrap();
        let s0 = cfg.initial_state();
        let a = res.step(&s0, &[3.3]).unwrap();
        let b = res.step(&s0, &[3.3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn observation_at_initial_state() {
        let cfg = small_config(4, 4);
        let obs = observe(&cfg, &cfg.initial_state(), 0, 25).unwrap();
        assert_eq!(obs.len(), observation_dim(&cfg, 0));
        assert!((obs[0] - 20_000.0 / 68_000.0).abs() < 1e-15);
        assert!((obs[0] - 0.2941).abs() < 1e-4);
        assert!((obs[1] - 20_000.0 / 68_000.0).abs() < 1e-15);
        assert_eq!(obs[2], 0.0);
        assert_eq!(obs[3], 0.0);
    }

    #[test]
    fn observation_violation_fraction_and_time() {
        let cfg = small_config(4, 4);
        let state = ReservoirState { pressure: vec![55_000.0; 16], t: 12 };
        let obs = observe(&cfg, &state, 0, 25).unwrap();
        assert_eq!(obs[2], 1.0);
        assert!((obs[3] - 0.48).abs() < 1e-15);
    }

    #[test]
    fn region_max_respects_mask() {
        let cfg = small_config(4, 4);
        let area = ProjectArea::rectangle(0, 0..2, 0..2, 55_000.0);
        let mut state = cfg.initial_state();
        assert_eq!(max_region_pressure(&cfg.grid, &state, &area).unwrap(), 20_000.0);
        state.pressure[cfg.grid.index((3, 3))] = 90_000.0;
        assert_eq!(max_region_pressure(&cfg.grid, &state, &area).unwrap(), 20_000.0);
        state.pressure[cfg.grid.index((1, 0))] = 70_000.0;
        assert_eq!(max_region_pressure(&cfg.grid, &state, &area).unwrap(), 70_000.0);
        let empty = ProjectArea::new(0, vec![], 55_000.0);
        assert!(max_region_pressure(&cfg.grid, &state, &empty).is_err());
    }

    #[test]
    fn overlapping_areas_rejected() {
        let mut cfg = small_config(4, 4);
        cfg.areas = vec![
            ProjectArea::rectangle(0, 0..3, 0..4, 55_000.0),
            ProjectArea::rectangle(1, 2..4, 0..4, 55_000.0),
        ];
        cfg.wells.push(WellSpec { owner: 1, id: "B1".into(), cell: (3, 0), ..cfg.wells[0].clone() });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn pressure_csv_has_one_row_per_cell() {
        let cfg = small_config(3, 2);
        let mut buf = Vec::new();
        write_pressure_csv(&cfg.grid, &cfg.initial_state(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "i,j,p_kPa");
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[2], "1,0,20000.000000");
    }
}
