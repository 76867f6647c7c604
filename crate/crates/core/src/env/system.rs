//! Two-point flux discretization and the conjugate-gradient solve for the
//! implicit pressure update.

use super::grid::GridSpec;
use crate::error::{Error, Result};

/// 1 mD in m².
pub const MILLIDARCY_M2: f64 = 9.869_233e-16;
/// Julian year in seconds.
pub const SECONDS_PER_YEAR: f64 = 3.155_76e7;
/// Converts `mD · m² / (mPa·s · m)` into `m³ / (kPa · yr)`.
pub const TRANSMISSIBILITY_UNITS: f64 = MILLIDARCY_M2 / 1e-3 * 1e3 * SECONDS_PER_YEAR;

/// Symmetric graph Laplacian of inter-cell transmissibilities, m³/(kPa·yr).
///
/// Row `a` of the operator is `diag[a] * x[a] - Σ_b coupling(a,b) * x[b]`, so
/// constants lie in the null space (closed boundaries).
#[derive(Debug, Clone)]
pub struct TransmissibilityMatrix {
    n: usize,
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    couplings: Vec<f64>,
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Assembles the transmissibility operator for `grid`.
pub fn build_system(grid: &GridSpec) -> Result<TransmissibilityMatrix> {
    grid.validate()?;
    let n = grid.cell_count();
    let k = &grid.permeability;
    let tx = grid.dy * grid.thickness / (grid.dx * grid.viscosity) * TRANSMISSIBILITY_UNITS;
    let ty = grid.dx * grid.thickness / (grid.dy * grid.viscosity) * TRANSMISSIBILITY_UNITS;

    let mut diag = vec![0.0; n];
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(4 * n);
    let mut couplings = Vec::with_capacity(4 * n);
    row_ptr.push(0);
    for a in 0..n {
        let (i, j) = grid.cell(a);
        let mut push = |b: usize, geom: f64| {
            let t = harmonic_mean(k[a], k[b]) * geom;
            cols.push(b);
            couplings.push(t);
            diag[a] += t;
        };
        if j > 0 {
            push(a - grid.nx, ty);
        }
        if i > 0 {
            push(a - 1, tx);
        }
        if i + 1 < grid.nx {
            push(a + 1, tx);
        }
        if j + 1 < grid.ny {
            push(a + grid.nx, ty);
        }
        row_ptr.push(cols.len());
    }
    Ok(TransmissibilityMatrix { n, diag, row_ptr, cols, couplings })
}

impl TransmissibilityMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    /// Transmissibility between cells `a` and `b` (0 if they are not neighbours).
    pub fn coupling(&self, a: usize, b: usize) -> f64 {
        let row = self.row_ptr[a]..self.row_ptr[a + 1];
        self.cols[row.clone()]
            .iter()
            .zip(&self.couplings[row])
            .find(|(c, _)| **c == b)
            .map_or(0.0, |(_, t)| *t)
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// `y = (diag(shift) + L) x`.
    pub fn apply_shifted(&self, shift: &[f64], x: &[f64], y: &mut [f64]) {
        for a in 0..self.n {
            let mut acc = (shift[a] + self.diag[a]) * x[a];
            for idx in self.row_ptr[a]..self.row_ptr[a + 1] {
                acc -= self.couplings[idx] * x[self.cols[idx]];
            }
            y[a] = acc;
        }
    }

    /// Dense row-major copy of `diag(shift) + L`.
    pub fn to_dense_shifted(&self, shift: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut m = vec![0.0; n * n];
        for a in 0..n {
            m[a * n + a] = shift[a] + self.diag[a];
            for idx in self.row_ptr[a]..self.row_ptr[a + 1] {
                m[a * n + self.cols[idx]] -= self.couplings[idx];
            }
        }
        m
    }

    /// Solves `(diag(shift) + L) x = rhs` by Jacobi-preconditioned conjugate
    /// gradients, starting from the incoming `x`. Stops once
    /// `‖rhs − A x‖ ≤ rel_tol · ‖rhs‖`; returns the iteration count.
    pub fn solve_shifted(
        &self,
        shift: &[f64],
        rhs: &[f64],
        x: &mut [f64],
        rel_tol: f64,
        max_iter: usize,
    ) -> Result<usize> {
        let n = self.n;
        let b_norm = norm(rhs);
        if b_norm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok(0);
        }
        let target = rel_tol * b_norm;
        let inv_diag: Vec<f64> = (0..n).map(|a| 1.0 / (shift[a] + self.diag[a])).collect();

        let mut r = vec![0.0; n];
        self.apply_shifted(shift, x, &mut r);
        for a in 0..n {
            r[a] = rhs[a] - r[a];
        }
        let mut res = norm(&r);
        if res <= target {
            return Ok(0);
        }
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        for it in 1..=max_iter {
            self.apply_shifted(shift, &p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for a in 0..n {
                x[a] += alpha * p[a];
                r[a] -= alpha * ap[a];
            }
            res = norm(&r);
            if res <= target {
                return Ok(it);
            }
            for a in 0..n {
                z[a] = r[a] * inv_diag[a];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for a in 0..n {
                p[a] = z[a] + beta * p[a];
            }
        }
        Err(Error::SolverFailure { iterations: max_iter, residual: res / b_norm })
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nx: usize, ny: usize, perm: Vec<f64>) -> GridSpec {
        GridSpec {
            nx,
            ny,
            dx: 800.0,
            dy: 400.0,
            thickness: 50.0,
            porosity: 0.2,
            total_compressibility: 1e-6,
            viscosity: 0.5,
            permeability: perm,
        }
    }

    #[test]
    fn uniform_pair_coupling_is_plain_darcy() {
        let g = grid(2, 2, vec![100.0; 4]);
        let t = build_system(&g).unwrap();
        let expected = 100.0 * (g.dy * g.thickness) / (g.dx * g.viscosity) * TRANSMISSIBILITY_UNITS;
        assert!((t.coupling(0, 1) - expected).abs() <= 1e-12 * expected);
        assert_eq!(t.coupling(0, 3), 0.0);
    }

    #[test]
    fn heterogeneous_coupling_uses_harmonic_mean() {
        let g = grid(2, 2, vec![100.0, 300.0, 100.0, 100.0]);
        let t = build_system(&g).unwrap();
        let expected = 150.0 * (g.dy * g.thickness) / (g.dx * g.viscosity) * TRANSMISSIBILITY_UNITS;
        assert!((t.coupling(0, 1) - expected).abs() <= 1e-12 * expected);
        assert_eq!(t.coupling(0, 1), t.coupling(1, 0));
    }

    #[test]
    fn zero_permeability_is_an_invalid_grid() {
        let g = grid(2, 2, vec![100.0, 0.0, 100.0, 100.0]);
        assert!(matches!(build_system(&g), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn laplacian_annihilates_constants() {
        let g = grid(4, 3, (0..12).map(|v| 10.0 + v as f64).collect());
        let t = build_system(&g).unwrap();
        let zero = vec![0.0; 12];
        let mut y = vec![1.0; 12];
        t.apply_shifted(&zero, &vec![5.0; 12], &mut y);
        let scale = t.diagonal().iter().cloned().fold(0.0, f64::max);
        assert!(y.iter().all(|v| v.abs() < 1e-12 * scale));
    }

    #[test]
    fn cg_reports_failure_when_out_of_iterations() {
        let g = grid(6, 6, (0..36).map(|v| 1.0 + (v % 7) as f64 * 40.0).collect());
        let t = build_system(&g).unwrap();
        let shift = vec![1e-3; 36];
        let rhs: Vec<f64> = (0..36).map(|v| (v as f64).sin()).collect();
        let mut x = vec![0.0; 36];
        let err = t.solve_shifted(&shift, &rhs, &mut x, 1e-14, 1).unwrap_err();
        assert!(matches!(err, Error::SolverFailure { iterations: 1, .. }));
    }
}
