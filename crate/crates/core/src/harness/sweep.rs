use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::mean_ci95;
use super::train::{run_seed, CurveRow, SeedOutcome, SeedStatus};
use super::{Method, RunConfig};
use crate::error::{Error, Result};

/// Sweep axes; an empty axis keeps the base configuration's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    pub alphas: Vec<f64>,
    pub budgets_m: Vec<f64>,
    pub num_agents: Vec<usize>,
    pub methods: Vec<Method>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: Method,
    pub alpha: f64,
    pub budget_m: f64,
    pub num_agents: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub alpha: f64,
    pub budget: f64,
    pub n_agents: usize,
    pub final_mae_mean: Option<f64>,
    pub ci95_low: Option<f64>,
    pub ci95_high: Option<f64>,
    pub n_seeds: usize,
}

#[derive(Serialize)]
struct TidyRow<'a> {
    method: Method,
    alpha: f64,
    budget: f64,
    n_agents: usize,
    seed: u64,
    step: u64,
    eval_final_mae_mean: f64,
    eval_final_mae_std: f64,
    eval_step_mean_mae: f64,
    team_return_mean: f64,
    status: &'a str,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub cells: Vec<(SweepCell, Vec<SeedOutcome>)>,
}

impl SweepResult {
    /// Final MAE mean and Student-t 95% CI over per-seed final means;
    /// diverged seeds are left out of the count.
    pub fn summary(&self) -> Vec<SummaryRow> {
        self.cells
            .iter()
            .map(|(cell, seeds)| {
                let finals: Vec<f64> = seeds
                    .iter()
                    .filter(|s| s.status == SeedStatus::Completed)
                    .filter_map(|s| s.curve.last().map(|r| r.eval_final_mae_mean))
                    .collect();
                let ci = mean_ci95(&finals);
                SummaryRow {
                    method: cell.method,
                    alpha: cell.alpha,
                    budget: cell.budget_m,
                    n_agents: cell.num_agents,
                    final_mae_mean: (ci.n > 0).then_some(ci.mean),
                    ci95_low: ci.ci95.map(|c| c.0),
                    ci95_high: ci.ci95.map(|c| c.1),
                    n_seeds: ci.n,
                }
            })
            .collect()
    }

    pub fn tidy_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for (cell, seeds) in &self.cells {
            for s in seeds {
                let status = match s.status {
                    SeedStatus::Completed => "completed",
                    SeedStatus::Diverged { .. } => "diverged",
                };
                for r in &s.curve {
                    let CurveRow { seed, step, eval_final_mae_mean, eval_final_mae_std, eval_step_mean_mae, team_return_mean, .. } = *r;
                    w.serialize(TidyRow {
                        method: cell.method,
                        alpha: cell.alpha,
                        budget: cell.budget_m,
                        n_agents: cell.num_agents,
                        seed,
                        step,
                        eval_final_mae_mean,
                        eval_final_mae_std,
                        eval_step_mean_mae,
                        team_return_mean,
                        status,
                    })?;
                }
            }
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn summary_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.summary() {
            w.serialize(row)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

fn cell_configs(base: &RunConfig, axes: &SweepAxes) -> Result<Vec<(SweepCell, RunConfig)>> {
    let resolved = base.resolved_scenario()?;
    let base_budget = base.env_config()?.budgets_m.iter().copied().fold(0.0, f64::max);
    let or_base = |v: &[f64], b: f64| if v.is_empty() { vec![b] } else { v.to_vec() };
    let alphas = or_base(&axes.alphas, resolved.covariance.alpha);
    let budgets = or_base(&axes.budgets_m, base_budget);
    let agents = if axes.num_agents.is_empty() { vec![base.num_agents] } else { axes.num_agents.clone() };
    let methods = if axes.methods.is_empty() { vec![base.method] } else { axes.methods.clone() };

    let mut out = Vec::new();
    for &method in &methods {
        for &alpha in &alphas {
            for &budget_m in &budgets {
                for &num_agents in &agents {
                    let cfg = RunConfig {
                        method,
                        alpha: Some(alpha),
                        budget_m: Some(budget_m),
                        num_agents,
                        ..base.clone()
                    };
                    cfg.validate()?;
                    out.push((SweepCell { method, alpha, budget_m, num_agents }, cfg));
                }
            }
        }
    }
    Ok(out)
}

/// Cartesian product of runs over the axes, every (cell, seed) pair an
/// independent job. Diverged seeds are recorded and skipped in the summary.
pub fn sweep(base: &RunConfig, axes: &SweepAxes) -> Result<SweepResult> {
    let cells = cell_configs(base, axes)?;
    let jobs: Vec<(usize, u64)> =
        (0..cells.len()).flat_map(|c| base.seeds.iter().map(move |&s| (c, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(base.workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<SeedOutcome> =
        pool.install(|| jobs.par_iter().map(|&(c, s)| run_seed(&cells[c].1, s)).collect::<Result<_>>())?;
    let mut outcomes = outcomes.into_iter();
    let cells = cells
        .into_iter()
        .map(|(cell, _)| {
            let seeds: Vec<SeedOutcome> = outcomes
                .by_ref()
                .take(base.seeds.len())
                .map(|mut s| {
                    s.agents.clear();
                    s
                })
                .collect();
            (cell, seeds)
        })
        .collect();
    Ok(SweepResult { cells })
}

/// Writes `sweep.csv` (one row per run and checkpoint) and `summary.csv`.
pub fn write_sweep(result: &SweepResult, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("sweep.csv"), result.tidy_csv()?)?;
    fs::write(out_dir.join("summary.csv"), result.summary_csv()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::scenario_file::ScenarioFile;

    fn base() -> RunConfig {
        let mut cfg = RunConfig::new(ScenarioFile::paperlike(), 1, Method::Random);
        cfg.total_steps = 20;
        cfg.eval_period = 10;
        cfg.eval_episodes = 2;
        cfg.warmup_steps = 5;
        cfg.seeds = vec![1, 2];
        cfg.budget_m = Some(200.0);
        cfg.agent = AgentConfig { hidden: vec![8], num_atoms: 11, batch_size: 4, ..AgentConfig::default() };
        cfg
    }

    #[test]
    fn empty_axes_give_a_single_cell() {
        let r = sweep(&base(), &SweepAxes::default()).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.summary()[0].n_seeds, 2);
    }

    #[test]
    fn product_shape_and_tidy_rows() {
        let axes = SweepAxes {
            alphas: vec![0.1, 0.3, 0.5, 0.7],
            methods: vec![Method::Random, Method::DaDiff],
            ..SweepAxes::default()
        };
        let r = sweep(&base(), &axes).unwrap();
        assert_eq!(r.cells.len(), 8);
        let tidy = String::from_utf8(r.tidy_csv().unwrap()).unwrap();
        assert_eq!(tidy.lines().count(), 1 + 8 * 2 * 2);
        let summary = String::from_utf8(r.summary_csv().unwrap()).unwrap();
        assert!(summary.starts_with("method,alpha,budget,n_agents,final_mae_mean,ci95_low,ci95_high,n_seeds\n"));
        assert_eq!(summary.lines().count(), 9);
    }

    #[test]
    fn summary_uses_last_checkpoint_of_each_seed() {
        let r = sweep(&base(), &SweepAxes::default()).unwrap();
        let finals: Vec<f64> = r.cells[0].1.iter().map(|s| s.curve.last().unwrap().eval_final_mae_mean).collect();
        let row = &r.summary()[0];
        assert_eq!(row.final_mae_mean, Some((finals[0] + finals[1]) / 2.0));
        assert!(row.ci95_low.unwrap() <= row.final_mae_mean.unwrap());
    }
}
