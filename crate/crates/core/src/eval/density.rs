//! Kernel density estimates of teacher probability values before and after
//! clipping.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::divergences::ClipSelection;
use crate::error::{Error, Result};
use crate::prob::ProbVector;

pub const MIN_GRID: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityExport {
    pub grid: Vec<f64>,
    pub original: Vec<f64>,
    pub clipped: Vec<f64>,
    pub bandwidth: f64,
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule `0.9 · min(σ, IQR/1.34) · n^(-1/5)`; a zero spread
/// estimate falls back to the other, and both zero to 1e-3.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sigma = std_dev(values);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = match (sigma > 0.0, iqr > 0.0) {
        (true, true) => sigma.min(iqr),
        (true, false) => sigma,
        (false, true) => iqr,
        (false, false) => return 1e-3,
    };
    0.9 * spread * (values.len() as f64).powf(-0.2)
}

fn kde(values: &[f64], h: f64, x: f64) -> f64 {
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    norm * values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>()
}

/// Densities of all class probabilities and of the selected ones on a
/// shared uniform grid covering every value ± 4 bandwidths.
///
/// The bandwidth is Silverman's, raised if needed so that the grid spacing
/// never exceeds it (otherwise a narrow kernel falls between grid points).
pub fn export_density(teacher: &ProbVector, selection: &ClipSelection, grid_size: usize) -> Result<DensityExport> {
    if grid_size < MIN_GRID {
        return Err(Error::OutOfRange {
            name: "grid_size",
            value: grid_size as f64,
        });
    }
    let all = teacher.values();
    let chosen: Vec<f64> = selection
        .indices
        .iter()
        .map(|&k| {
            all.get(k).copied().ok_or(Error::TokenOutOfRange {
                id: k,
                vocab: all.len(),
            })
        })
        .collect::<Result<_>>()?;
    if chosen.is_empty() {
        return Err(Error::Invalid("empty clip selection".into()));
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = (hi - lo) / (grid_size - 9) as f64;
    let h = silverman_bandwidth(all).max(floor);
    let (start, end) = (lo - 4.0 * h, hi + 4.0 * h);
    let step = (end - start) / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size).map(|i| start + step * i as f64).collect();
    let original = grid.iter().map(|&x| kde(all, h, x)).collect();
    let clipped = grid.iter().map(|&x| kde(&chosen, h, x)).collect();
    Ok(DensityExport {
        grid,
        original,
        clipped,
        bandwidth: h,
    })
}

impl DensityExport {
    /// CSV with columns `x_original,density_original,x_clipped,density_clipped`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_original,density_original,x_clipped,density_clipped\n");
        for i in 0..self.grid.len() {
            let x = self.grid[i];
            out.push_str(&format!("{x},{},{x},{}\n", self.original[i], self.clipped[i]));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Trapezoid-rule integral of `ys` over `xs`.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}
