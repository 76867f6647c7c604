//! Reward and penalty models.
//!
//! Money is reported in $M: 1 MMTon/yr × 1 $/ton × 1 yr = 1 $M.

mod coalition;

use serde::{Deserialize, Serialize};

pub use coalition::{bell_number, coalition_rewards, enumerate_partitions, CoalitionStructure, MAX_PARTITION_AGENTS};

use crate::env::{EnvConfig, ReservoirState, WellKind, WellSpec};
use crate::error::{input_err, Result};

/// Unit prices; all in $/ton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomicParams {
    pub r_credit: f64,
    pub r_op: f64,
    pub r_water: f64,
    pub r_co2_reextract: f64,
    pub gamma: f64,
}

impl Default for EconomicParams {
    fn default() -> Self {
        Self { r_credit: 85.0, r_op: 45.0, r_water: 30.0, r_co2_reextract: 0.0, gamma: 0.95 }
    }
}

impl EconomicParams {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        for (name, v) in [
            ("r_credit", self.r_credit),
            ("r_op", self.r_op),
            ("r_water", self.r_water),
            ("r_co2_reextract", self.r_co2_reextract),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return input_err(format!("{name} must be a non-negative price, got {v}"));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        input_err(format!("discount factor must lie in (0,1), got {gamma}"))
    }
}

/// Mass flows of one well over a step, MMTon/yr (all non-negative).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WellFlow {
    pub injected: f64,
    pub water: f64,
    pub co2: f64,
}

impl WellFlow {
    /// Injectors put `rate` in; extractors (negative rate) produce brine only.
    pub fn from_rate(kind: WellKind, rate: f64) -> Self {
        match kind {
            WellKind::Injector => Self { injected: rate.max(0.0), ..Self::default() },
            WellKind::Extractor => Self { water: (-rate).max(0.0), ..Self::default() },
        }
    }
}

/// Present value of `agent`'s wells over one step of `dt` years, $M.
pub fn present_value(agent: usize, wells: &[WellSpec], flows: &[WellFlow], params: &EconomicParams, dt: f64) -> f64 {
    let per_year: f64 = wells
        .iter()
        .zip(flows)
        .filter(|(w, _)| w.owner == agent)
        .map(|(w, f)| match w.kind {
            WellKind::Injector => (params.r_credit - params.r_op) * f.injected,
            WellKind::Extractor => -params.r_water * f.water - params.r_co2_reextract * f.co2,
        })
        .sum();
    per_year * dt
}

/// Present value directly from signed well rates.
pub fn present_value_from_rates(agent: usize, wells: &[WellSpec], rates: &[f64], params: &EconomicParams, dt: f64) -> f64 {
    let flows: Vec<WellFlow> = wells.iter().zip(rates).map(|(w, &r)| WellFlow::from_rate(w.kind, r)).collect();
    present_value(agent, wells, &flows, params, dt)
}

/// `Σ_{t=1..T} γ^t x_t`; discounting starts at exponent one.
pub fn discounted_sum(series: &[f64], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let mut factor = 1.0;
    Ok(series
        .iter()
        .map(|x| {
            factor *= gamma;
            factor * x
        })
        .sum())
}

/// Net present value of a per-step PV series, $M.
pub fn npv(pv_series: &[f64], gamma: f64) -> Result<f64> {
    discounted_sum(pv_series, gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyMode {
    /// Only the well cells of the agent are checked.
    Well,
    /// Every cell of the agent's project area is checked.
    Region,
}

impl PenaltyMode {
    pub fn default_unit_penalty(self) -> f64 {
        match self {
            PenaltyMode::Well => 5000.0,
            PenaltyMode::Region => 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyParams {
    pub mode: PenaltyMode,
    /// $ per violating cell per step.
    pub unit_penalty: f64,
    /// Allowable discounted cumulative cost per agent.
    pub d: f64,
    /// Count a cell when `p > threshold` (true) or `p >= threshold` (false).
    pub strict: bool,
}

impl PenaltyParams {
    pub fn new(mode: PenaltyMode) -> Self {
        Self { mode, unit_penalty: mode.default_unit_penalty(), d: 0.0, strict: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.unit_penalty > 0.0 && self.unit_penalty.is_finite()) {
            return input_err(format!("unit_penalty must be positive, got {}", self.unit_penalty));
        }
        if !(self.d >= 0.0) {
            return input_err(format!("d must be non-negative, got {}", self.d));
        }
        Ok(())
    }

    fn violates(&self, p: f64, threshold: f64) -> bool {
        if self.strict {
            p > threshold
        } else {
            p >= threshold
        }
    }
}

/// Number of cells counted against `agent` under `params.mode`.
pub fn violating_cells(state: &ReservoirState, agent: usize, cfg: &EnvConfig, params: &PenaltyParams) -> Result<usize> {
    let area = cfg.area(agent)?;
    let g = &cfg.grid;
    let over = |cell| params.violates(state.pressure[g.index(cell)], area.p_threshold);
    Ok(match params.mode {
        PenaltyMode::Well => {
            let wells = cfg.wells_of(agent);
            if wells.is_empty() {
                return input_err(format!("agent {agent} owns no wells"));
            }
            let mut cells: Vec<_> = wells.iter().map(|&k| cfg.wells[k].cell).collect();
            cells.sort_unstable();
            cells.dedup();
            cells.into_iter().filter(|&c| over(c)).count()
        }
        PenaltyMode::Region => area.cells.iter().filter(|&&c| over(c)).count(),
    })
}

/// Penalty of `agent` at `state`, $.
pub fn penalty(state: &ReservoirState, agent: usize, cfg: &EnvConfig, params: &PenaltyParams) -> Result<f64> {
    Ok(params.unit_penalty * violating_cells(state, agent, cfg, params)? as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{desk_scale, ProjectArea};

    fn injector(owner: usize) -> WellSpec {
        WellSpec {
            id: format!("I{owner}"),
            owner,
            cell: (0, 0),
            kind: WellKind::Injector,
            rate_min: 0.5,
            rate_max: 5.0,
        }
    }

    #[test]
    fn pv_single_injector_table_prices() {
        let wells = vec![injector(0)];
        let pv = present_value_from_rates(0, &wells, &[1.0], &EconomicParams::default(), 1.0);
        assert!((pv - 40.0).abs() < 1e-12);
        assert_eq!(present_value_from_rates(0, &wells, &[0.0], &EconomicParams::default(), 1.0), 0.0);
    }

    #[test]
    fn pv_with_brine_extraction() {
        let mut ext = injector(0);
        ext.kind = WellKind::Extractor;
        let wells = vec![injector(0), injector(0), ext, injector(1)];
        let pv = present_value_from_rates(0, &wells, &[2.0, 3.0, -1.0, 4.0], &EconomicParams::default(), 1.0);
        assert!((pv - 170.0).abs() < 1e-12);
    }

    #[test]
    fn reextracted_co2_is_charged() {
        let mut ext = injector(0);
        ext.kind = WellKind::Extractor;
        let params = EconomicParams { r_co2_reextract: 10.0, ..Default::default() };
        let flow = WellFlow { injected: 0.0, water: 1.0, co2: 0.5 };
        assert!((present_value(0, &[ext], &[flow], &params, 2.0) - (-30.0 - 5.0) * 2.0).abs() < 1e-12);
    }

    #[test]
    fn npv_two_years() {
        assert!((npv(&[40.0, 40.0], 0.95).unwrap() - 74.1).abs() < 1e-12);
        assert_eq!(npv(&[0.0; 5], 0.95).unwrap(), 0.0);
        assert!(npv(&[1.0], 1.0).is_err());
        assert!(npv(&[1.0], 0.0).is_err());
    }

    fn penalty_fixture() -> (EnvConfig, ReservoirState) {
        let cfg = desk_scale(1);
        let state = cfg.initial_state();
        (cfg, state)
    }

    #[test]
    fn well_mode_counts_violating_well_blocks() {
        let (cfg, mut state) = penalty_fixture();
        let params = PenaltyParams::new(PenaltyMode::Well);
        assert_eq!(penalty(&state, 1, &cfg, &params).unwrap(), 0.0);
        for k in cfg.wells_of(1) {
            state.pressure[cfg.grid.index(cfg.wells[k].cell)] = 56_000.0;
        }
        assert_eq!(penalty(&state, 1, &cfg, &params).unwrap(), 10_000.0);
        // Other agents untouched.
        assert_eq!(penalty(&state, 0, &cfg, &params).unwrap(), 0.0);
    }

    #[test]
    fn region_mode_counts_area_cells() {
        let (cfg, mut state) = penalty_fixture();
        let params = PenaltyParams::new(PenaltyMode::Region);
        let area: &ProjectArea = cfg.area(2).unwrap();
        for &c in area.cells.iter().take(3) {
            state.pressure[cfg.grid.index(c)] = 60_000.0;
        }
        assert_eq!(penalty(&state, 2, &cfg, &params).unwrap(), 150.0);
    }

    #[test]
    fn strictness_controls_ties() {
        let (cfg, mut state) = penalty_fixture();
        let area = cfg.area(1).unwrap();
        let c = area.cells[0];
        state.pressure[cfg.grid.index(c)] = area.p_threshold;
        let mut params = PenaltyParams::new(PenaltyMode::Region);
        assert_eq!(penalty(&state, 1, &cfg, &params).unwrap(), 0.0);
        params.strict = false;
        assert_eq!(penalty(&state, 1, &cfg, &params).unwrap(), 50.0);
    }
}
