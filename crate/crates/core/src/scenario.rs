//! Grids, concentration fields, synthetic ground truths and simulated
//! backgrounds.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assimilation::{background_cov, correlation_matrix, sigma_from_background, CovarianceModel};
use crate::error::{Error, Result};

/// Regular axis-aligned grid of sensing cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    rows: usize,
    cols: usize,
    spacing: f64,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, spacing: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("grid dimensions must be positive, got {rows}x{cols}")));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::invalid(format!("grid spacing must be positive, got {spacing}")));
        }
        Ok(Self { rows, cols, spacing })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Meters between adjacent cell centers.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Number of cells.
    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    /// `(row, col)` of a cell index.
    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        (cell / self.cols, cell % self.cols)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    /// Center of a cell in meters as `(x, y) = (col * spacing, row * spacing)`.
    pub fn center(&self, cell: usize) -> (f64, f64) {
        let (r, c) = self.row_col(cell);
        (c as f64 * self.spacing, r as f64 * self.spacing)
    }

    pub fn check_cell(&self, cell: usize) -> Result<()> {
        if cell >= self.n() {
            Err(Error::invalid(format!("cell index {cell} out of range for grid with {} cells", self.n())))
        } else {
            Ok(())
        }
    }

    /// Euclidean distance between two cell centers, in meters.
    pub fn cell_distance(&self, i: usize, j: usize) -> Result<f64> {
        self.check_cell(i)?;
        self.check_cell(j)?;
        Ok(self.distance_unchecked(i, j))
    }

    pub(crate) fn distance_unchecked(&self, i: usize, j: usize) -> f64 {
        let (xi, yi) = self.center(i);
        let (xj, yj) = self.center(j);
        (xi - xj).hypot(yi - yj)
    }
}

pub fn make_grid(rows: usize, cols: usize, spacing: f64) -> Result<GridSpec> {
    GridSpec::new(rows, cols, spacing)
}

/// Concentrations (ppm) over the cells of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::invalid(format!(
                "field has {} values but the grid has {} cells",
                values.len(),
                grid.n()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite field value at cell {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn uniform(grid: GridSpec, value: f64) -> Self {
        Self { grid, values: vec![value; grid.n()] }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population standard deviation over cells.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64;
        var.sqrt()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::invalid("fields are defined on different grids"));
        }
        Ok(())
    }
}

/// Mean absolute error between two fields on the same grid.
pub fn mae(a: &Field, b: &Field) -> Result<f64> {
    a.check_same_grid(b)?;
    let sum: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// One isotropic Gaussian emission bump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlumeSource {
    pub row: usize,
    pub col: usize,
    pub amplitude_ppm: f64,
    pub length_scale_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlumeSpec {
    pub sources: Vec<PlumeSource>,
    #[serde(default)]
    pub background_level_ppm: f64,
}

impl PlumeSpec {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(self.background_level_ppm >= 0.0) || !self.background_level_ppm.is_finite() {
            return Err(Error::invalid("plume background level must be finite and >= 0"));
        }
        for (k, s) in self.sources.iter().enumerate() {
            if s.row >= grid.rows() || s.col >= grid.cols() {
                return Err(Error::invalid(format!(
                    "plume source {k} at ({}, {}) lies outside the {}x{} grid",
                    s.row,
                    s.col,
                    grid.rows(),
                    grid.cols()
                )));
            }
            if !(s.amplitude_ppm >= 0.0) || !s.amplitude_ppm.is_finite() {
                return Err(Error::invalid(format!("plume source {k} amplitude must be >= 0")));
            }
            if !(s.length_scale_m > 0.0) || !s.length_scale_m.is_finite() {
                return Err(Error::invalid(format!("plume source {k} length scale must be > 0")));
            }
        }
        Ok(())
    }

    /// Three-source plume on a 10x10 / 50 m grid: peak 300 ppm, cell std about 34.7 ppm.
    pub fn paperlike() -> Self {
        let src = |row, col, amplitude_ppm, length_scale_m| PlumeSource { row, col, amplitude_ppm, length_scale_m };
        Self {
            sources: vec![src(2, 3, 300.0, 30.0), src(5, 6, 85.0, 40.0), src(7, 4, 55.0, 45.0)],
            background_level_ppm: 0.0,
        }
    }
}

/// Steady synthetic truth: background level plus a sum of Gaussian bumps.
pub fn gaussian_plume_field(grid: &GridSpec, plume: &PlumeSpec) -> Result<Field> {
    plume.validate(grid)?;
    let values = (0..grid.n())
        .map(|i| {
            let (x, y) = grid.center(i);
            plume.background_level_ppm
                + plume
                    .sources
                    .iter()
                    .map(|s| {
                        let sx = s.col as f64 * grid.spacing();
                        let sy = s.row as f64 * grid.spacing();
                        let d2 = (x - sx).powi(2) + (y - sy).powi(2);
                        s.amplitude_ppm * (-d2 / (2.0 * s.length_scale_m * s.length_scale_m)).exp()
                    })
                    .sum::<f64>()
        })
        .collect();
    Field::new(*grid, values)
}

/// Parses a row-major comma-separated field; lines starting with `#` are skipped.
pub fn load_field_csv(text: &str, grid: &GridSpec) -> Result<Field> {
    let mut values = Vec::with_capacity(grid.n());
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        for token in trimmed.split(',') {
            let token = token.trim();
            let v: f64 = token.parse().map_err(|_| {
                Error::Format(format!("line {}: cannot parse {token:?} as a number", lineno + 1))
            })?;
            values.push(v);
        }
    }
    if values.len() != grid.n() {
        return Err(Error::Format(format!("expected {} cell values, found {}", grid.n(), values.len())));
    }
    Field::new(*grid, values)
}

/// Inverse of [`load_field_csv`]; values are written with round-trip precision.
pub fn write_field_csv(field: &Field) -> String {
    let grid = field.grid();
    let mut out = format!("# {}x{} field, spacing {} m, ppm\n", grid.rows(), grid.cols(), grid.spacing());
    for row in field.values().chunks(grid.cols()) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// How the simulated background is derived from the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    /// Number of simulations averaged into the background.
    pub k: usize,
    /// Multiplicative factor applied to the truth before error sampling.
    pub bias: f64,
    pub seed: u64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self { k: 5, bias: 1.0, seed: 42 }
    }
}

impl BackgroundSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("background sample count k must be >= 1"));
        }
        if !(self.bias >= 0.0) || !self.bias.is_finite() {
            return Err(Error::invalid("background bias must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Draws `k` correlated simulations around `bias * truth` and averages them.
///
/// The generating covariance is built from the biased truth with the same
/// kernel and `alpha` the assimilation step later assumes.
pub fn sample_background(truth: &Field, cov: &CovarianceModel, spec: &BackgroundSpec) -> Result<Field> {
    spec.validate()?;
    cov.validate()?;
    let grid = *truth.grid();
    let center: Vec<f64> = truth.values().iter().map(|v| spec.bias * v).collect();
    let w = correlation_matrix(&grid, cov.delta_per_m);
    let sigma = sigma_from_background(&center, cov.alpha);
    let b = background_cov(&w, &sigma, cov.jitter_ppm2)?;
    let l = b.cholesky_factor();

    let n = grid.n();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut acc = DVector::<f64>::zeros(n);
    for _ in 0..spec.k {
        let z = DVector::<f64>::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        acc += l * z;
    }
    let values = center.iter().zip(acc.iter()).map(|(c, e)| c + e / spec.k as f64).collect();
    Field::new(grid, values)
}
