use std::io::Read;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid cell as `(i, j)`, `i` along x and `j` along y.
pub type Cell = (usize, usize);

/// Cartesian single-layer grid with per-cell permeability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Cell size along x, m.
    pub dx: f64,
    /// Cell size along y, m.
    pub dy: f64,
    /// Layer thickness, m.
    pub thickness: f64,
    pub porosity: f64,
    /// Total (rock + fluid) compressibility, 1/kPa.
    pub total_compressibility: f64,
    /// Fluid viscosity, mPa·s.
    pub viscosity: f64,
    /// Row-major (`j * nx + i`) permeability, mD.
    pub permeability: Vec<f64>,
}

impl GridSpec {
    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, (i, j): Cell) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn cell(&self, index: usize) -> Cell {
        (index % self.nx, index / self.nx)
    }

    pub fn contains(&self, (i, j): Cell) -> bool {
        i < self.nx && j < self.ny
    }

    /// Bulk volume of one cell, m³.
    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.thickness
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidGrid(msg));
        if self.nx < 2 || self.ny < 2 {
            return bad(format!("grid must be at least 2x2, got {}x{}", self.nx, self.ny));
        }
        if self.permeability.len() != self.cell_count() {
            return bad(format!(
                "permeability has {} entries, expected {}",
                self.permeability.len(),
                self.cell_count()
            ));
        }
        if let Some((idx, k)) = self
            .permeability
            .iter()
            .enumerate()
            .find(|(_, k)| !(k.is_finite() && **k > 0.0))
        {
            let (i, j) = self.cell(idx);
            return bad(format!("permeability at ({i},{j}) must be positive, got {k}"));
        }
        if !(self.porosity > 0.0 && self.porosity < 1.0) {
            return bad(format!("porosity must lie in (0,1), got {}", self.porosity));
        }
        for (name, v) in [
            ("dx", self.dx),
            ("dy", self.dy),
            ("thickness", self.thickness),
            ("total_compressibility", self.total_compressibility),
            ("viscosity", self.viscosity),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Independent log-normal permeability per cell with arithmetic mean `mean_md`.
pub fn lognormal_permeability(nx: usize, ny: usize, mean_md: f64, sigma_log: f64, seed: u64) -> Result<Vec<f64>> {
    if !(mean_md > 0.0) || !(sigma_log >= 0.0) {
        return Err(Error::InvalidGrid(format!(
            "log-normal permeability needs mean > 0 and sigma >= 0, got {mean_md}, {sigma_log}"
        )));
    }
    let mu = mean_md.ln() - 0.5 * sigma_log * sigma_log;
    let dist = LogNormal::new(mu, sigma_log).map_err(|e| Error::InvalidGrid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..nx * ny).map(|_| dist.sample(&mut rng)).collect())
}

/// Reads `i,j,perm_mD` rows (an optional header line is skipped). Every cell must
/// appear exactly once.
pub fn read_permeability_csv<R: Read>(reader: R, nx: usize, ny: usize) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut perm = vec![f64::NAN; nx * ny];
    let mut seen = 0usize;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 3 {
            return Err(Error::Input(format!(
                "permeability row {} has {} fields, expected 3",
                line + 1,
                record.len()
            )));
        }
        let (Ok(i), Ok(j), Ok(k)) = (
            record[0].parse::<usize>(),
            record[1].parse::<usize>(),
            record[2].parse::<f64>(),
        ) else {
            if line == 0 {
                continue; // header
            }
            return Err(Error::Input(format!("unparsable permeability row {}", line + 1)));
        };
        if i >= nx || j >= ny {
            return Err(Error::Input(format!("permeability cell ({i},{j}) outside {nx}x{ny} grid")));
        }
        let slot = &mut perm[j * nx + i];
        if !slot.is_nan() {
            return Err(Error::Input(format!("permeability cell ({i},{j}) listed twice")));
        }
        *slot = k;
        seen += 1;
    }
    if seen != nx * ny {
        return Err(Error::Input(format!(
            "permeability file lists {seen} cells, expected {}",
            nx * ny
        )));
    }
    Ok(perm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(perm: Vec<f64>) -> GridSpec {
        GridSpec {
            nx: 2,
            ny: 2,
            dx: 10.0,
            dy: 10.0,
            thickness: 1.0,
            porosity: 0.2,
            total_compressibility: 1e-6,
            viscosity: 1.0,
            permeability: perm,
        }
    }

    #[test]
    fn rejects_zero_permeability() {
        let err = grid(vec![1.0, 0.0, 1.0, 1.0]).validate().unwrap_err();
        assert!(matches!(err, Error::InvalidGrid(_)));
    }

    #[test]
    fn rejects_degenerate_shape_and_porosity() {
        let mut g = grid(vec![1.0; 4]);
        g.porosity = 1.0;
        assert!(g.validate().is_err());
        let g = GridSpec { nx: 1, ny: 4, ..grid(vec![1.0; 4]) };
        assert!(g.validate().is_err());
    }

    #[test]
    fn lognormal_field_is_seeded_and_has_target_mean() {
        let a = lognormal_permeability(100, 100, 100.0, 0.5, 3).unwrap();
        let b = lognormal_permeability(100, 100, 100.0, 0.5, 3).unwrap();
        assert_eq!(a, b);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!((mean - 100.0).abs() < 2.0, "mean {mean}");
        assert!(a.iter().all(|k| *k > 0.0));
    }

    #[test]
    fn csv_roundtrip_with_header() {
        let text = "i,j,perm_mD\n0,0,1\n1,0,2\n0,1,3\n1,1,4\n";
        let perm = read_permeability_csv(text.as_bytes(), 2, 2).unwrap();
        assert_eq!(perm, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn csv_missing_or_duplicate_cells_rejected() {
        assert!(read_permeability_csv("0,0,1\n1,0,2\n0,1,3\n".as_bytes(), 2, 2).is_err());
        assert!(read_permeability_csv("0,0,1\n0,0,2\n0,1,3\n1,1,4\n".as_bytes(), 2, 2).is_err());
    }
}
