#![allow(dead_code)]

use ccs_game::econ::{CoalitionStructure, PenaltyMode};
use ccs_game::env::{EnvConfig, GridSpec, ProjectArea, SolverKind, WellKind, WellSpec, TRANSMISSIBILITY_UNITS};
use ccs_game::game::{CmgSpec, ConstantPolicy, Game};
use rand::Rng;

/// Random closed reservoir of at most 6×6 cells with 1–3 injectors.
pub fn random_env<R: Rng>(rng: &mut R) -> EnvConfig {
    let nx = rng.random_range(2..=6);
    let ny = rng.random_range(2..=6);
    let n = nx * ny;
    let grid = GridSpec {
        nx,
        ny,
        dx: rng.random_range(200.0..1000.0),
        dy: rng.random_range(200.0..1000.0),
        thickness: rng.random_range(20.0..200.0),
        porosity: rng.random_range(0.05..0.3),
        total_compressibility: rng.random_range(1e-7..1e-5),
        viscosity: rng.random_range(0.2..2.0),
        permeability: (0..n).map(|_| 10f64.powf(rng.random_range(-0.5..2.0))).collect(),
    };
    let n_wells = rng.random_range(1..=3usize.min(n));
    let mut cells: Vec<usize> = (0..n).collect();
    for k in 0..n_wells {
        let pick = rng.random_range(k..n);
        cells.swap(k, pick);
    }
    let wells: Vec<WellSpec> = (0..n_wells)
        .map(|k| WellSpec {
            id: format!("W{k}"),
            owner: 0,
            cell: grid.cell(cells[k]),
            kind: WellKind::Injector,
            rate_min: 0.0,
            rate_max: 5.0,
        })
        .collect();
    let all: Vec<(usize, usize)> = (0..n).map(|a| grid.cell(a)).collect();
    EnvConfig {
        grid,
        wells,
        areas: vec![ProjectArea::new(0, all, 1e8)],
        p_init: rng.random_range(1_000.0..30_000.0),
        p_frac: 1e9,
        co2_density: 700.0,
        substeps_per_step: rng.random_range(1..=4),
        dt_step: rng.random_range(0.1..2.0),
        solver: SolverKind::Cg,
    }
}

/// Gaussian elimination with partial pivoting on a dense row-major matrix.
pub fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs())).unwrap();
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    x
}

/// One control step assembled and solved from scratch: harmonic-mean
/// two-point fluxes, backward Euler, direct solve.
pub fn dense_step(cfg: &EnvConfig, p: &[f64], rates: &[f64]) -> Vec<f64> {
    let g = &cfg.grid;
    let n = g.nx * g.ny;
    let dt = cfg.dt_step / cfg.substeps_per_step as f64;
    let acc = g.porosity * g.total_compressibility * g.dx * g.dy * g.thickness / dt;
    let mut m = vec![0.0; n * n];
    for a in 0..n {
        m[a * n + a] += acc;
    }
    let mut couple = |a: usize, b: usize, area_over_len: f64| {
        let (ka, kb) = (g.permeability[a], g.permeability[b]);
        let t = 2.0 * ka * kb / (ka + kb) * area_over_len / g.viscosity * TRANSMISSIBILITY_UNITS;
        m[a * n + a] += t;
        m[b * n + b] += t;
        m[a * n + b] -= t;
        m[b * n + a] -= t;
    };
    for j in 0..g.ny {
        for i in 0..g.nx {
            let a = j * g.nx + i;
            if i + 1 < g.nx {
                couple(a, a + 1, g.dy * g.thickness / g.dx);
            }
            if j + 1 < g.ny {
                couple(a, a + g.nx, g.dx * g.thickness / g.dy);
            }
        }
    }
    let mut q = vec![0.0; n];
    for (w, &r) in cfg.wells.iter().zip(rates) {
        q[w.cell.1 * g.nx + w.cell.0] += r * 1e9 / cfg.co2_density;
    }
    let mut x = p.to_vec();
    for _ in 0..cfg.substeps_per_step {
        let rhs: Vec<f64> = x.iter().zip(&q).map(|(p, q)| acc * p + q).collect();
        x = dense_solve(m.clone(), rhs);
    }
    x
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

/// Three operators in a row, one injector each, on an 9×3 strip.
///
/// Thresholds sit at the pressures reached under uniform mid-range
/// injection, so roughly half of the 3-level constant schedules are feasible.
pub fn tiny_spec() -> CmgSpec {
    let (nx, ny) = (9, 3);
    let grid = GridSpec {
        nx,
        ny,
        dx: 800.0,
        dy: 800.0,
        thickness: 100.0,
        porosity: 0.2,
        total_compressibility: 5e-7,
        viscosity: 0.5,
        permeability: (0..nx * ny).map(|a| 5.0 + (a % 4) as f64).collect(),
    };
    let well = |k: usize, i: usize| WellSpec {
        id: format!("{}", (b'A' + k as u8) as char),
        owner: k,
        cell: (i, 1),
        kind: WellKind::Injector,
        rate_min: 0.5,
        rate_max: 5.0,
    };
    let mut env = EnvConfig {
        grid,
        wells: vec![well(0, 1), well(1, 4), well(2, 7)],
        areas: (0..3).map(|k| ProjectArea::rectangle(k, 3 * k..3 * k + 3, 0..ny, 1e7)).collect(),
        p_init: 20_000.0,
        p_frac: 1e8,
        co2_density: 700.0,
        substeps_per_step: 4,
        dt_step: 1.0,
        solver: SolverKind::Propagator,
    };
    let mut spec = CmgSpec::new(env.clone(), PenaltyMode::Region, CoalitionStructure::singletons(3));
    spec.horizon = 10;
    let game = Game::new(spec.clone()).unwrap();
    let mid = ConstantPolicy::for_spec(&spec, 0.0);
    let traj = game.run_episode(&mid, None).unwrap();
    for k in 0..3 {
        let peak = traj.max_area_pressure.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
        env.areas[k].p_threshold = peak * (1.0 + 1e-6);
    }
    spec.env = env;
    spec
}

/// `a` weakly dominates `b` when it is at least as good everywhere (maximization).
pub fn weakly_dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y)
}

/// Maximization Pareto filter by exhaustive pairwise comparison.
pub fn pareto_filter(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points
        .iter()
        .filter(|p| !points.iter().any(|q| weakly_dominates(q, p) && q != *p))
        .cloned()
        .collect()
}
