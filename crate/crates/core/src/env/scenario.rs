use super::{lognormal_permeability, EnvConfig, GridSpec, ProjectArea, SolverKind, WellKind, WellSpec};

pub const DESK_PERMEABILITY_SEED: u64 = 2024;

/// Three-operator desk-scale basin: 55×16 cells of 800 m × 800 m × 200 m
/// (44 km × 12.8 km × 0.2 km), closed boundaries.
///
/// Leases occupy the left, middle and right of the basin with unleased
/// buffer strips between them. Each operator runs two injectors bounded to
/// 0.5–5 MMTon/yr. Allowable pressures are 65 000 kPa for A and 55 000 kPa for
/// B and C against a fracture pressure of 68 000 kPa.
pub fn desk_scale(permeability_seed: u64) -> EnvConfig {
    let (nx, ny) = (55, 16);
    let grid = GridSpec {
        nx,
        ny,
        dx: 800.0,
        dy: 800.0,
        thickness: 200.0,
        porosity: 0.2,
        total_compressibility: 5e-7,
        viscosity: 0.5,
        permeability: lognormal_permeability(nx, ny, 10.0, 0.5, permeability_seed)
            .expect("static log-normal parameters are valid"),
    };
    let injector = |id: &str, owner: usize, cell: (usize, usize)| WellSpec {
        id: id.to_string(),
        owner,
        cell,
        kind: WellKind::Injector,
        rate_min: 0.5,
        rate_max: 5.0,
    };
    EnvConfig {
        grid,
        wells: vec![
            injector("A1", 0, (4, 4)),
            injector("A2", 0, (14, 11)),
            injector("B1", 1, (23, 4)),
            injector("B2", 1, (31, 11)),
            injector("C1", 2, (41, 4)),
            injector("C2", 2, (51, 11)),
        ],
        areas: vec![
            ProjectArea::rectangle(0, 0..15, 0..ny, 65_000.0),
            ProjectArea::rectangle(1, 21..34, 0..ny, 55_000.0),
            ProjectArea::rectangle(2, 40..55, 0..ny, 55_000.0),
        ],
        p_init: 20_000.0,
        p_frac: 68_000.0,
        co2_density: 700.0,
        substeps_per_step: 10,
        dt_step: 1.0,
        solver: SolverKind::Propagator,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_scale_is_valid() {
        let cfg = desk_scale(DESK_PERMEABILITY_SEED);
        cfg.validate().unwrap();
        assert_eq!(cfg.n_agents(), 3);
        assert_eq!(cfg.grid.nx as f64 * cfg.grid.dx, 44_000.0);
        assert_eq!(cfg.grid.ny as f64 * cfg.grid.dy, 12_800.0);
        for agent in 0..3 {
            assert_eq!(cfg.wells_of(agent).len(), 2);
            let area = cfg.area(agent).unwrap();
            for k in cfg.wells_of(agent) {
                assert!(area.cells.contains(&cfg.wells[k].cell));
            }
        }
    }
}
