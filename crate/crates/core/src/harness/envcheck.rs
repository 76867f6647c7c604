use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AffinePropagator, Dynamics, EnvConfig, Reservoir};
use crate::error::Result;

/// Relative tolerance shared by every check.
pub const ENV_CHECK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    /// Relative error measured by the check.
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn result(name: &str, error: f64, tolerance: f64) -> CheckResult {
    CheckResult { name: name.into(), error, tolerance, passed: error <= tolerance }
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    num / den
}

fn random_rates(cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    cfg.wells.iter().map(|w| w.sign() * rng.random_range(w.rate_min..=w.rate_max)).collect()
}

/// Steady state, superposition, propagator agreement and mass balance.
pub fn env_check(cfg: &EnvConfig, seed: u64) -> Result<Vec<CheckResult>> {
    let reservoir = Reservoir::new(cfg.clone())?;
    let propagator = AffinePropagator::from_reservoir(&reservoir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = vec![0.0; cfg.wells.len()];
    let init = cfg.initial_state();
    let mut out = Vec::new();

    let still = reservoir.advance(&init, &zero)?;
    out.push(result("steady state without injection", rel_diff(&still.pressure, &init.pressure), ENV_CHECK_TOL));

    // The step is affine in (p, q): f(q1 + q2) - f(q1) - f(q2) + f(0) = 0 once
    // the initial pressure has been factored out.
    let q1 = random_rates(cfg, &mut rng);
    let q2 = random_rates(cfg, &mut rng);
    let q12: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| a + b).collect();
    let f = |q: &[f64]| reservoir.advance(&init, q).map(|s| s.pressure);
    let (f12, f1, f2, f0) = (f(&q12)?, f(&q1)?, f(&q2)?, f(&zero)?);
    let lhs: Vec<f64> = f12.iter().zip(&f0).map(|(a, b)| a - b).collect();
    let rhs: Vec<f64> = f1.iter().zip(&f2).zip(&f0).map(|((a, b), c)| a + b - 2.0 * c).collect();
    out.push(result("superposition", rel_diff(&lhs, &rhs), ENV_CHECK_TOL));

    let mut p_cg = init.clone();
    let mut p_prop = init.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let q = random_rates(cfg, &mut rng);
        p_cg = reservoir.advance(&p_cg, &q)?;
        p_prop = propagator.advance(&p_prop, &q)?;
        let rise_cg: Vec<f64> = p_cg.pressure.iter().map(|p| p - cfg.p_init).collect();
        let rise_prop: Vec<f64> = p_prop.pressure.iter().map(|p| p - cfg.p_init).collect();
        worst = worst.max(rel_diff(&rise_prop, &rise_cg));
    }
    out.push(result("propagator matches conjugate gradients over 25 steps", worst, ENV_CHECK_TOL));

    // No-flow boundaries: stored volume grows by exactly the injected volume.
    let q = random_rates(cfg, &mut rng);
    let next = reservoir.advance(&init, &q)?;
    let subs = cfg.substeps_per_step as f64;
    let stored: f64 = reservoir
        .accumulation()
        .iter()
        .zip(next.pressure.iter().zip(&init.pressure))
        .map(|(a, (p1, p0))| a * (p1 - p0))
        .sum();
    let injected: f64 = reservoir.source(&q).iter().sum::<f64>() * subs;
    out.push(result("mass balance", (stored - injected).abs() / injected.abs(), ENV_CHECK_TOL));
    Ok(out)
}

/// Renders one line per check.
pub fn format_checks(checks: &[CheckResult]) -> String {
    checks
        .iter()
        .map(|c| {
            format!(
                "{} {:<55} error {:.3e} (tol {:.0e})\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.error,
                c.tolerance
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::desk_scale;

    #[test]
    fn desk_scale_passes_every_check() {
        let checks = env_check(&desk_scale(crate::env::DESK_PERMEABILITY_SEED), 1).unwrap();
        assert_eq!(checks.len(), 4);
        for c in &checks {
            assert!(c.passed, "{c:?}");
        }
    }
}
