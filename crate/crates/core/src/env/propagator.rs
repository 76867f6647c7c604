use ndarray::{Array1, Array2, ArrayView1};

use super::{Dynamics, EnvConfig, Reservoir, ReservoirState};
use crate::error::{input_err, Result};

/// Column solves run well below the step tolerance so the assembled map is
/// dominated by discretization, not solver, error.
const COLUMN_TOL: f64 = 1e-13;

/// Dense one-step map `p ↦ M p + N q` of the CG reservoir.
///
/// `M = S^m` and `N = Σ_{k<m} S^k B⁻¹ E`, where `B = Acc + T`,
/// `S = B⁻¹ Acc`, `E` scatters well rates into cells and `m` is the substep
/// count. Every column of `S` and `B⁻¹ E` comes from one CG solve.
#[derive(Debug, Clone)]
pub struct AffinePropagator {
    cfg: EnvConfig,
    state_map: Array2<f64>,
    rate_map: Array2<f64>,
}

impl AffinePropagator {
    pub fn from_reservoir(res: &Reservoir) -> Result<Self> {
        let cfg = res.config().clone();
        let n = cfg.grid.cell_count();
        let acc = res.accumulation();

        let mut substep = Array2::<f64>::zeros((n, n));
        let mut rhs = vec![0.0; n];
        for j in 0..n {
            rhs[j] = acc[j];
            let col = res.solve(&rhs, COLUMN_TOL)?;
            rhs[j] = 0.0;
            substep.column_mut(j).assign(&ArrayView1::from(&col[..]));
        }

        let w = cfg.wells.len();
        let mut unit = Array2::<f64>::zeros((n, w));
        for k in 0..w {
            let mut rates = vec![0.0; w];
            rates[k] = 1.0;
            let col = res.solve(&res.source(&rates), COLUMN_TOL)?;
            unit.column_mut(k).assign(&ArrayView1::from(&col[..]));
        }

        let m = cfg.substeps_per_step;
        let mut rate_map = unit.clone();
        for _ in 1..m {
            rate_map = substep.dot(&rate_map) + &unit;
        }
        let state_map = matrix_power(&substep, m);
        Ok(Self { cfg, state_map, rate_map })
    }

    pub fn state_map(&self) -> &Array2<f64> {
        &self.state_map
    }

    pub fn rate_map(&self) -> &Array2<f64> {
        &self.rate_map
    }
}

fn matrix_power(a: &Array2<f64>, mut e: usize) -> Array2<f64> {
    let mut result: Option<Array2<f64>> = None;
    let mut base = a.clone();
    loop {
        if e & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => r.dot(&base),
            });
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        base = base.dot(&base);
    }
    result.unwrap_or_else(|| Array2::eye(a.nrows()))
}

impl Dynamics for AffinePropagator {
    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn advance(&self, state: &ReservoirState, rates: &[f64]) -> Result<ReservoirState> {
        if rates.len() != self.rate_map.ncols() {
            return input_err(format!("expected {} rates, got {}", self.rate_map.ncols(), rates.len()));
        }
        if state.pressure.len() != self.state_map.ncols() {
            return input_err("state size does not match grid");
        }
        let p = ArrayView1::from(&state.pressure[..]);
        let q = ArrayView1::from(rates);
        let next: Array1<f64> = self.state_map.dot(&p) + self.rate_map.dot(&q);
        Ok(ReservoirState { pressure: next.to_vec(), t: state.t + 1 })
    }
}
