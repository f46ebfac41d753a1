//! Empirical measures of periodic orbits on a cell grid, a weak* distance
//! surrogate between them, and the central exponent as an integral.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::SkewProductModel;
use crate::orbits::{PeriodicOrbit, SampleGrid};

/// Highest Fourier mode in the test family.
pub const FOURIER_MODES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub k: usize,
    pub grid: SampleGrid,
    /// `(cell, weight)` sorted by cell, cells `cylinder * bins + bin`.
    pub atoms: Vec<(usize, f64)>,
}

impl EmpiricalMeasure {
    /// Validated construction from arbitrary atoms; repeated cells are merged.
    pub fn from_atoms(k: usize, grid: SampleGrid, atoms: Vec<(usize, f64)>) -> Result<Self> {
        let total_cells = grid.cell_count(k);
        if let Some(&(c, _)) = atoms.iter().find(|a| a.0 >= total_cells) {
            return Err(LabError::Parameter(format!("cell {c} outside the grid ({total_cells} cells)")));
        }
        if atoms.iter().any(|a| !(a.1 >= 0.0) || !a.1.is_finite()) {
            return Err(LabError::Parameter("weights must be finite and non-negative".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LabError::Parameter(format!("weights sum to {total}, not 1")));
        }
        let mut atoms = atoms;
        atoms.sort_by_key(|a| a.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(atoms.len());
        for (c, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += w,
                _ => merged.push((c, w)),
            }
        }
        Ok(Self {
            k,
            grid,
            atoms: merged,
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    fn dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.grid.cell_count(self.k)];
        for &(c, w) in &self.atoms {
            v[c] += w;
        }
        v
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cell", "weight"])?;
        for &(c, wt) in &self.atoms {
            w.write_record([c.to_string(), wt.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, k: usize, grid: SampleGrid) -> Result<Self> {
        let rows: Vec<(usize, f64)> = csv::Reader::from_reader(reader)
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        Self::from_atoms(k, grid, rows)
    }
}

/// Uniform weight `1/π` on the orbit points, binned to grid cells.
pub fn empirical_measure(
    model: &SkewProductModel,
    orbit: &PeriodicOrbit,
    grid: &SampleGrid,
) -> Result<EmpiricalMeasure> {
    model.check_word(&orbit.word)?;
    let k = model.k();
    let mut counts = vec![0usize; grid.cell_count(k)];
    for i in 0..orbit.period {
        counts[grid.cell_of(k, orbit, i)] += 1;
    }
    let n = orbit.period as f64;
    let atoms = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(cell, &c)| (cell, c as f64 / n))
        .collect();
    Ok(EmpiricalMeasure {
        k,
        grid: *grid,
        atoms,
    })
}

/// Largest difference of integrals over a fixed test family:
///
/// * for every cylinder depth `e <= d`, each cell of the coarsened grid with
///   weight 1 and its two fiber neighbours with weight 1/2;
/// * `cos(2πjx)` and `sin(2πjx)` at the bin centers, `1 <= j <= 4`.
///
/// Values lie in `[0, 2]`. This is a surrogate for a bounded-Lipschitz
/// distance, adequate for spotting Cauchy behaviour, not a transport metric.
pub fn measure_distance(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure) -> Result<f64> {
    if mu1.k != mu2.k || mu1.grid != mu2.grid {
        return Err(LabError::Parameter(format!(
            "measures binned differently: k {} / {}, grid {:?} / {:?}",
            mu1.k, mu2.k, mu1.grid, mu2.grid
        )));
    }
    let k = mu1.k;
    let g = mu1.grid.bins;
    let d = mu1.grid.depth;
    let a = mu1.dense();
    let b = mu2.dense();
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();

    let mut best: f64 = 0.0;
    // coarsen from depth d down to 0, one symbol at a time
    let mut level = diff.clone();
    for e in (0..=d).rev() {
        let cylinders = k.pow(e as u32);
        for cyl in 0..cylinders {
            let row = &level[cyl * g..(cyl + 1) * g];
            for j in 0..g {
                let mut v = row[j];
                if g >= 2 {
                    v += 0.5 * row[(j + 1) % g];
                }
                if g >= 3 {
                    v += 0.5 * row[(j + g - 1) % g];
                }
                best = best.max(v.abs());
            }
        }
        if e > 0 {
            let parents = cylinders / k;
            let mut next = vec![0.0; parents * g];
            for cyl in 0..cylinders {
                let parent = cyl / k;
                for j in 0..g {
                    next[parent * g + j] += level[cyl * g + j];
                }
            }
            level = next;
        }
    }

    // Fourier modes only see the fiber coordinate; `level` is now per bin
    for j in 1..=FOURIER_MODES {
        let (mut c, mut s) = (0.0, 0.0);
        for (bin, &w) in level.iter().enumerate() {
            let x = mu1.grid.bin_center(bin);
            c += w * (TAU * j as f64 * x).cos();
            s += w * (TAU * j as f64 * x).sin();
        }
        best = best.max(c.abs()).max(s.abs());
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentIntegral {
    pub value: f64,
    /// Bound on the binning error: half a bin times the largest slope of
    /// `log f'`.
    pub error_bound: f64,
}

/// `Σ_cells w · log f'_{s}(x)` with `s` the first symbol of the cell's
/// cylinder and `x` its bin center.
pub fn exponent_integral(model: &SkewProductModel, mu: &EmpiricalMeasure) -> Result<ExponentIntegral> {
    if mu.k != model.k() {
        return Err(LabError::Parameter(format!(
            "measure over {} symbols, model has {}",
            mu.k,
            model.k()
        )));
    }
    if mu.grid.depth == 0 {
        return Err(LabError::Parameter(
            "base depth 0 does not determine the fiber map".into(),
        ));
    }
    let g = mu.grid.bins;
    let lead = mu.k.pow(mu.grid.depth as u32 - 1);
    let value = mu
        .atoms
        .iter()
        .map(|&(cell, w)| {
            let (cyl, bin) = (cell / g, cell % g);
            let sym = (cyl / lead) as u8;
            w * model.map(sym).log_derivative(mu.grid.bin_center(bin))
        })
        .sum();
    Ok(ExponentIntegral {
        value,
        error_bound: model.log_derivative_slope_bound() / (2.0 * g as f64),
    })
}

/// Symmetric matrix of pairwise distances.
pub fn distance_matrix(measures: &[EmpiricalMeasure]) -> Result<Vec<Vec<f64>>> {
    let n = measures.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = measure_distance(&measures[i], &measures[j])?;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

pub fn write_distance_matrix_csv<W: Write>(writer: W, labels: &[String], m: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (label, row) in labels.iter().zip(m) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_distance_matrix_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let labels: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| LabError::Parameter(format!("bad distance {v:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((labels, rows))
}
