//! Background-error covariance modelling and BLUE analyses.
//!
//! The background covariance is `B_ij = w_ij * sigma_i * sigma_j` with an
//! exponential distance-decay correlation `w_ij = exp(-delta * d_ij)` and a
//! standard deviation proportional to the background value. Observations are
//! point samples of single cells, so `H` is never materialized: `H B H^T` is a
//! sub-block of `B` and `B H^T` a column selection.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Field, GridSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceModel {
    /// Slope of the background-error std against the background value.
    pub alpha: f64,
    /// Correlation attenuation per meter.
    pub delta_per_m: f64,
    /// Observation-error variance.
    pub v0_ppm2: f64,
    /// Diagonal regularizer added to `B`.
    pub jitter_ppm2: f64,
}

impl Default for CovarianceModel {
    fn default() -> Self {
        Self { alpha: 0.3, delta_per_m: 0.01, v0_ppm2: 0.0, jitter_ppm2: 1e-6 }
    }
}

impl CovarianceModel {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, strict: bool| {
            let ok = v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
            if ok {
                Ok(())
            } else {
                let bound = if strict { "> 0" } else { ">= 0" };
                Err(Error::invalid(format!("covariance {name} must be finite and {bound}, got {v}")))
            }
        };
        check("alpha", self.alpha, false)?;
        check("delta_per_m", self.delta_per_m, false)?;
        check("v0_ppm2", self.v0_ppm2, false)?;
        check("jitter_ppm2", self.jitter_ppm2, true)
    }

    /// Builds `B` around a background field.
    pub fn build(&self, background: &Field) -> Result<BackgroundCov> {
        self.validate()?;
        let w = correlation_matrix(background.grid(), self.delta_per_m);
        let sigma = sigma_from_background(background.values(), self.alpha);
        background_cov(&w, &sigma, self.jitter_ppm2)
    }
}

/// `W_ij = exp(-delta * d_ij)` over all cell pairs.
pub fn correlation_matrix(grid: &GridSpec, delta: f64) -> DMatrix<f64> {
    let n = grid.n();
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { (-delta * grid.distance_unchecked(i, j)).exp() })
}

pub fn sigma_from_background(background: &[f64], alpha: f64) -> Vec<f64> {
    background.iter().map(|v| alpha * v.abs()).collect()
}

/// Symmetric positive-definite background-error covariance with its
/// lower Cholesky factor.
#[derive(Clone, Debug)]
pub struct BackgroundCov {
    matrix: DMatrix<f64>,
    lower: DMatrix<f64>,
}

impl BackgroundCov {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `L` with `L L^T = B`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Wraps an arbitrary SPD matrix (symmetrized) as a background covariance.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::invalid("background covariance must be square"));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let lower = Cholesky::new(sym.clone())
            .ok_or_else(|| {
                Error::Numeric("background covariance is not positive definite; increase jitter_ppm2".into())
            })?
            .unpack();
        Ok(Self { matrix: sym, lower })
    }
}

/// `B = W o (sigma sigma^T) + jitter I`.
pub fn background_cov(w: &DMatrix<f64>, sigma: &[f64], jitter: f64) -> Result<BackgroundCov> {
    let n = sigma.len();
    if w.nrows() != n || w.ncols() != n {
        return Err(Error::invalid(format!(
            "correlation matrix is {}x{} but sigma has length {n}",
            w.nrows(),
            w.ncols()
        )));
    }
    let b = DMatrix::from_fn(n, n, |i, j| w[(i, j)] * sigma[i] * sigma[j] + if i == j { jitter } else { 0.0 });
    BackgroundCov::from_matrix(b)
}

/// A point measurement, tagged with the agent and step that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub cell: usize,
    pub value: f64,
    pub agent: usize,
    pub step: usize,
}

/// Cumulative set of point measurements; defines `H` and `y` implicitly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationSet {
    entries: Vec<Observation>,
}

impl ObservationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<Observation>) -> Self {
        Self { entries }
    }

    pub fn push(&mut self, obs: Observation) {
        self.entries.push(obs);
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Unique cells in ascending order with the mean of their measurements.
    pub fn deduplicated(&self) -> Vec<(usize, f64)> {
        dedup(self.entries.iter())
    }
}

fn dedup<'a>(entries: impl Iterator<Item = &'a Observation>) -> Vec<(usize, f64)> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for o in entries {
        let e = acc.entry(o.cell).or_insert((0.0, 0));
        e.0 += o.value;
        e.1 += 1;
    }
    acc.into_iter().map(|(cell, (sum, count))| (cell, sum / count as f64)).collect()
}

/// `x^a = x^b + B H^T (H B H^T + v0 I)^-1 (y - H x^b)`.
pub fn blue_analysis(background: &Field, b: &BackgroundCov, obs: &ObservationSet, v0: f64) -> Result<Field> {
    solve_deduplicated(background, b, &obs.deduplicated(), v0)
}

/// BLUE over `obs` without the entries tagged by `excluded` `(agent, step)` pairs.
pub fn analysis_with_exclusion(
    background: &Field,
    b: &BackgroundCov,
    obs: &ObservationSet,
    v0: f64,
    excluded: &[(usize, usize)],
) -> Result<Field> {
    let kept = obs.entries.iter().filter(|o| !excluded.contains(&(o.agent, o.step)));
    solve_deduplicated(background, b, &dedup(kept), v0)
}

/// `trace((I - K H) B)` for observations at `cells` (duplicates collapse).
pub fn analysis_error_trace(b: &BackgroundCov, cells: &[usize], v0: f64) -> Result<f64> {
    let n = b.dim();
    let mut cells = cells.to_vec();
    cells.sort_unstable();
    cells.dedup();
    if let Some(&c) = cells.iter().find(|&&c| c >= n) {
        return Err(Error::invalid(format!("observation at cell {c} outside a grid of {n} cells")));
    }
    let bm = b.matrix();
    let prior = bm.trace();
    if cells.is_empty() {
        return Ok(prior);
    }
    let m = cells.len();
    let s = DMatrix::from_fn(m, m, |p, q| bm[(cells[p], cells[q])] + if p == q { v0 } else { 0.0 });
    let chol = Cholesky::new(s)
        .ok_or_else(|| Error::Numeric(format!("innovation covariance ({m}x{m}) is not positive definite")))?;
    // H B as an m x n block; the reduction is trace(B H^T S^-1 H B).
    let hb = DMatrix::from_fn(m, n, |p, j| bm[(cells[p], j)]);
    let solved = chol.solve(&hb);
    Ok(prior - hb.component_mul(&solved).sum())
}

fn solve_deduplicated(background: &Field, b: &BackgroundCov, cells: &[(usize, f64)], v0: f64) -> Result<Field> {
    let n = background.len();
    if b.dim() != n {
        return Err(Error::invalid(format!("covariance is {0}x{0} but the background has {n} cells", b.dim())));
    }
    if !(v0 >= 0.0) {
        return Err(Error::invalid(format!("observation variance must be >= 0, got {v0}")));
    }
    if let Some(&(cell, _)) = cells.iter().find(|(c, _)| *c >= n) {
        return Err(Error::invalid(format!("observation at cell {cell} outside a grid of {n} cells")));
    }
    if cells.is_empty() {
        return Ok(background.clone());
    }

    let bm = b.matrix();
    let xb = background.values();
    let m = cells.len();
    let s = DMatrix::from_fn(m, m, |p, q| bm[(cells[p].0, cells[q].0)] + if p == q { v0 } else { 0.0 });
    let innovation = DVector::from_iterator(m, cells.iter().map(|&(c, y)| y - xb[c]));
    let chol: Cholesky<f64, Dyn> = Cholesky::new(s)
        .ok_or_else(|| Error::Numeric(format!("innovation covariance ({m}x{m}) is not positive definite")))?;
    let weights = chol.solve(&innovation);

    let values: Vec<f64> = (0..n)
        .map(|i| xb[i] + cells.iter().zip(weights.iter()).map(|(&(c, _), w)| bm[(i, c)] * w).sum::<f64>())
        .collect();
    Field::new(*background.grid(), values)
}
