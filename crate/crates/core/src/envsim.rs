//! The multi-drone sensing game.
//!
//! One step moves every active drone to its chosen cell, charges the
//! Euclidean flight distance to its budget, takes a noiseless measurement,
//! and re-assimilates the whole observation history against the fixed
//! background. Drones that cannot afford any move land and stay landed.

use std::io::Write;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assimilation::{analysis_with_exclusion, blue_analysis, Observation, ObservationSet};
use crate::error::{Error, Result};
use crate::scenario::{mae, Field, GridSpec};
use crate::scenario_file::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Mean drop of the analysis between consecutive steps.
    Da,
    /// Relative MAE improvement over the background; needs the truth.
    Gt,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub mode: RewardMode,
    /// +1 when simulations overestimate, -1 when they underestimate. DA mode only.
    pub sign: f64,
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sign != 1.0 && self.sign != -1.0 {
            return Err(Error::invalid(format!("reward sign must be +1 or -1, got {}", self.sign)));
        }
        Ok(())
    }
}

/// `sign * mean(prev - new)`.
pub fn team_reward_da(prev: &Field, new: &Field, sign: f64) -> Result<f64> {
    prev.check_same_grid(new)?;
    let sum: f64 = prev.values().iter().zip(new.values()).map(|(p, n)| p - n).sum();
    Ok(sign * sum / prev.len() as f64)
}

/// `1 - MAE(truth, analysis) / MAE(truth, background)`.
pub fn team_reward_gt(truth: &Field, analysis: &Field, background: &Field) -> Result<f64> {
    let base = mae(truth, background)?;
    if base == 0.0 {
        return Err(Error::InvalidScenario("background equals the truth; ground-truth reward is undefined".into()));
    }
    Ok(1.0 - mae(truth, analysis)? / base)
}

pub fn move_cost(grid: &GridSpec, from: usize, to: usize) -> Result<f64> {
    grid.cell_distance(from, to)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub cell: usize,
    /// Remaining flight distance, meters.
    pub budget: f64,
    pub active: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub drones: Vec<DroneState>,
    /// Current analysis `x^a_t`.
    pub analysis: Field,
    /// Analysis the next team reward is measured against. At reset this is
    /// the background, so rewards telescope to `mean(x^b - x^a_final)`.
    pub reward_anchor: Field,
    pub observations: ObservationSet,
    pub step: usize,
    pub done: bool,
}

impl EnvState {
    pub fn active_mask(&self) -> Vec<bool> {
        self.drones.iter().map(|d| d.active).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub team_reward: f64,
    /// Team reward with agent `i`'s measurement of this step removed; `None`
    /// for agents that did not sense this step.
    pub counterfactuals: Vec<Option<f64>>,
    /// Agents that moved and sensed this step.
    pub acted: Vec<bool>,
    /// Agents with no further decisions in this episode.
    pub per_agent_done: Vec<bool>,
    pub done: bool,
    /// Diagnostic `MAE(x^t, x^a_t)`; never part of the learners' inputs.
    pub mae_truth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub budgets_m: Vec<f64>,
    pub max_steps: usize,
    pub sense_at_start: bool,
}

impl EnvConfig {
    /// Shared budget, `max_steps = ceil(budget / spacing)`.
    pub fn new(grid: &GridSpec, num_drones: usize, budget_m: f64) -> Self {
        Self {
            budgets_m: vec![budget_m; num_drones],
            max_steps: default_max_steps(grid, budget_m),
            sense_at_start: true,
        }
    }

    pub fn num_drones(&self) -> usize {
        self.budgets_m.len()
    }
}

pub fn default_max_steps(grid: &GridSpec, max_budget: f64) -> usize {
    ((max_budget / grid.spacing()).ceil() as usize).max(1)
}

/// A scenario plus a fleet configuration. Stateless: all episode state lives
/// in [`EnvState`].
#[derive(Clone, Debug)]
pub struct Env {
    scenario: Arc<Scenario>,
    config: EnvConfig,
}

impl Env {
    pub fn new(scenario: Arc<Scenario>, config: EnvConfig) -> Result<Self> {
        if config.budgets_m.is_empty() {
            return Err(Error::invalid("environment needs at least one drone"));
        }
        if config.max_steps == 0 {
            return Err(Error::invalid("max_steps must be >= 1"));
        }
        if config.budgets_m.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::invalid("drone budgets must be >= 0"));
        }
        if config.num_drones() > scenario.grid().n() {
            return Err(Error::invalid(format!(
                "cannot place {} drones on distinct cells of a {}-cell grid",
                config.num_drones(),
                scenario.grid().n()
            )));
        }
        Ok(Self { scenario, config })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn grid(&self) -> &GridSpec {
        self.scenario.grid()
    }

    pub fn num_drones(&self) -> usize {
        self.config.num_drones()
    }

    /// Random distinct start cells, full budgets, optional initial sensing.
    pub fn reset(&self, seed: u64) -> Result<EnvState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.grid().n();
        let cells = index::sample(&mut rng, n, self.num_drones()).into_vec();
        let drones: Vec<DroneState> = cells
            .iter()
            .zip(&self.config.budgets_m)
            .map(|(&cell, &budget)| DroneState { cell, budget, active: true })
            .collect();

        let background = &self.scenario.background;
        let mut observations = ObservationSet::new();
        if self.config.sense_at_start {
            for (agent, d) in drones.iter().enumerate() {
                observations.push(self.sense(agent, d.cell, 0));
            }
        }
        let analysis = self.assimilate(&observations)?;
        Ok(EnvState {
            drones,
            analysis,
            reward_anchor: background.clone(),
            observations,
            step: 0,
            done: false,
        })
    }

    fn sense(&self, agent: usize, cell: usize, step: usize) -> Observation {
        Observation { cell, value: self.scenario.truth.values()[cell], agent, step }
    }

    fn assimilate(&self, obs: &ObservationSet) -> Result<Field> {
        blue_analysis(&self.scenario.background, &self.scenario.background_cov, obs, self.scenario.covariance.v0_ppm2)
    }

    /// Cells the agent may fly to next. All-false means it must land.
    pub fn feasible_actions(&self, state: &EnvState, agent: usize) -> Vec<bool> {
        let n = self.grid().n();
        match state.drones.get(agent) {
            Some(d) if d.active && !state.done => (0..n)
                .map(|j| j != d.cell && self.grid().distance_unchecked(d.cell, j) <= d.budget)
                .collect(),
            _ => vec![false; n],
        }
    }

    fn team_reward(&self, anchor: &Field, analysis: &Field) -> Result<f64> {
        let sc = &self.scenario;
        match sc.reward.mode {
            RewardMode::Da => team_reward_da(anchor, analysis, sc.reward.sign),
            RewardMode::Gt => team_reward_gt(&sc.truth, analysis, &sc.background),
        }
    }

    /// Advances one step. `joint_action[i]` is the target cell of agent `i`;
    /// it is ignored for landed agents and agents with no affordable move.
    pub fn step(&self, state: &mut EnvState, joint_action: &[Option<usize>]) -> Result<StepOutcome> {
        let n_agents = self.num_drones();
        if state.done {
            return Err(Error::ContractViolation("step called on a finished episode".into()));
        }
        if joint_action.len() != n_agents {
            return Err(Error::invalid(format!("{} actions for {n_agents} agents", joint_action.len())));
        }

        // Validate the whole joint action before touching the state.
        let mut moves: Vec<Option<usize>> = vec![None; n_agents];
        for agent in 0..n_agents {
            if !state.drones[agent].active {
                continue;
            }
            let mask = self.feasible_actions(state, agent);
            if !mask.iter().any(|&f| f) {
                continue;
            }
            match joint_action[agent] {
                Some(cell) if cell < mask.len() && mask[cell] => moves[agent] = Some(cell),
                other => {
                    return Err(Error::ContractViolation(format!(
                        "agent {agent} chose {other:?}, which is not a feasible move"
                    )))
                }
            }
        }

        let t = state.step + 1;
        let grid = *self.grid();
        for (agent, mv) in moves.iter().enumerate() {
            let drone = &mut state.drones[agent];
            if !drone.active {
                continue;
            }
            match *mv {
                Some(cell) => {
                    drone.budget = (drone.budget - grid.distance_unchecked(drone.cell, cell)).max(0.0);
                    drone.cell = cell;
                }
                None => drone.active = false,
            }
        }
        let acted: Vec<bool> = moves.iter().map(Option::is_some).collect();
        for (agent, mv) in moves.iter().enumerate() {
            if let Some(cell) = *mv {
                state.observations.push(self.sense(agent, cell, t));
            }
        }

        let analysis = if acted.iter().any(|&a| a) { self.assimilate(&state.observations)? } else { state.analysis.clone() };
        let team_reward = self.team_reward(&state.reward_anchor, &analysis)?;

        let sc = &self.scenario;
        let counterfactuals = acted
            .iter()
            .enumerate()
            .map(|(agent, &a)| {
                if !a {
                    return Ok(None);
                }
                let without = analysis_with_exclusion(
                    &sc.background,
                    &sc.background_cov,
                    &state.observations,
                    sc.covariance.v0_ppm2,
                    &[(agent, t)],
                )?;
                self.team_reward(&state.reward_anchor, &without).map(Some)
            })
            .collect::<Result<Vec<_>>>()?;

        let mae_truth = mae(&sc.truth, &analysis)?;
        state.reward_anchor = analysis.clone();
        state.analysis = analysis;
        state.step = t;

        let any_move_left = (0..n_agents).any(|a| self.feasible_actions(state, a).iter().any(|&f| f));
        state.done = !any_move_left || t >= self.config.max_steps;
        if state.done {
            for d in &mut state.drones {
                d.active = false;
            }
        }
        let per_agent_done =
            (0..n_agents).map(|a| state.done || !self.feasible_actions(state, a).iter().any(|&f| f)).collect();

        Ok(StepOutcome { team_reward, counterfactuals, acted, per_agent_done, done: state.done, mae_truth })
    }
}

/// Uniform choice among feasible cells, `None` when the mask is empty.
pub fn random_feasible_action<R: Rng + ?Sized>(mask: &[bool], rng: &mut R) -> Option<usize> {
    let count = mask.iter().filter(|&&f| f).count();
    if count == 0 {
        return None;
    }
    let k = rng.random_range(0..count);
    mask.iter().enumerate().filter(|(_, &f)| f).nth(k).map(|(i, _)| i)
}

/// One JSON-lines record of an episode trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub positions: Vec<usize>,
    pub budgets_m: Vec<f64>,
    pub active: Vec<bool>,
    pub team_reward: f64,
    pub counterfactuals: Vec<Option<f64>>,
    pub mae_truth: f64,
}

impl TraceRecord {
    pub fn new(state: &EnvState, outcome: &StepOutcome) -> Self {
        Self {
            step: state.step,
            positions: state.drones.iter().map(|d| d.cell).collect(),
            budgets_m: state.drones.iter().map(|d| d.budget).collect(),
            active: state.active_mask(),
            team_reward: outcome.team_reward,
            counterfactuals: outcome.counterfactuals.clone(),
            mae_truth: outcome.mae_truth,
        }
    }
}

pub fn write_trace_jsonl<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assimilation::{BackgroundCov, CovarianceModel};
    use crate::scenario::make_grid;
    use crate::scenario_file::ScenarioFile;
    use nalgebra::DMatrix;

    fn paperlike() -> Arc<Scenario> {
        Arc::new(ScenarioFile::paperlike().build(std::path::Path::new(".")).unwrap())
    }

    /// 1x2 grid at 50 m with the hand-worked BLUE example: x^b = (10, 10),
    /// B = [[4, 2], [2, 4]], truth (4, 4).
    fn two_cell_env(budget: f64) -> Env {
        let g = make_grid(1, 2, 50.0).unwrap();
        let truth = Field::new(g, vec![4.0, 4.0]).unwrap();
        let background = Field::new(g, vec![10.0, 10.0]).unwrap();
        let cov = CovarianceModel { alpha: 0.0, delta_per_m: 0.0, v0_ppm2: 0.0, jitter_ppm2: 1e-6 };
        let mut sc =
            Scenario::with_background(truth, background, cov, RewardConfig { mode: RewardMode::Da, sign: 1.0 })
                .unwrap();
        sc.background_cov =
            Arc::new(BackgroundCov::from_matrix(DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 4.0])).unwrap());
        let config = EnvConfig { budgets_m: vec![budget], max_steps: 10, sense_at_start: false };
        Env::new(Arc::new(sc), config).unwrap()
    }

    #[test]
    fn reset_places_distinct_drones() {
        let sc = paperlike();
        let env = Env::new(sc.clone(), EnvConfig::new(sc.grid(), 3, 2000.0)).unwrap();
        let s = env.reset(11).unwrap();
        let mut cells: Vec<_> = s.drones.iter().map(|d| d.cell).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 3);
        assert!(s.drones.iter().all(|d| d.budget == 2000.0 && d.active));
        assert_eq!(s.observations.len(), 3);
        assert_eq!(s.reward_anchor, sc.background);
        assert_eq!(env.reset(11).unwrap(), s);
    }

    #[test]
    fn reset_single_cell_grid() {
        let g = make_grid(1, 1, 50.0).unwrap();
        let truth = Field::new(g, vec![3.0]).unwrap();
        let sc = Scenario::with_background(
            truth,
            Field::new(g, vec![4.0]).unwrap(),
            CovarianceModel::default(),
            RewardConfig { mode: RewardMode::Da, sign: 1.0 },
        )
        .unwrap();
        let env = Env::new(Arc::new(sc), EnvConfig::new(&g, 1, 100.0)).unwrap();
        assert_eq!(env.reset(0).unwrap().drones[0].cell, 0);
    }

    #[test]
    fn too_many_drones() {
        let sc = paperlike();
        assert!(Env::new(sc.clone(), EnvConfig::new(sc.grid(), 101, 2000.0)).is_err());
    }

    #[test]
    fn move_costs() {
        let g = make_grid(10, 10, 50.0).unwrap();
        assert_eq!(move_cost(&g, 0, 1).unwrap(), 50.0);
        assert_eq!(move_cost(&g, 5, 5).unwrap(), 0.0);
        assert!((move_cost(&g, 0, 99).unwrap() - 636.396).abs() < 1e-2);
        assert!(move_cost(&g, 0, 100).is_err());
    }

    #[test]
    fn feasibility_masks() {
        let sc = paperlike();
        let env = Env::new(sc.clone(), EnvConfig::new(sc.grid(), 1, 2000.0)).unwrap();
        let mut s = env.reset(3).unwrap();
        s.drones[0].cell = 0;
        assert_eq!(env.feasible_actions(&s, 0).iter().filter(|&&f| f).count(), 99);
        s.drones[0].budget = 49.0;
        assert!(env.feasible_actions(&s, 0).iter().all(|&f| !f));
        s.drones[0].budget = 2000.0;
        s.drones[0].active = false;
        assert!(env.feasible_actions(&s, 0).iter().all(|&f| !f));
    }

    #[test]
    fn hand_computed_step_reward() {
        let env = two_cell_env(100.0);
        let mut s = env.reset(0).unwrap();
        s.drones[0].cell = 1;
        let out = env.step(&mut s, &[Some(0)]).unwrap();
        assert!((s.analysis.values()[0] - 4.0).abs() < 1e-6);
        assert!((s.analysis.values()[1] - 7.0).abs() < 1e-6);
        assert!((out.team_reward - 4.5).abs() < 1e-6);
        // Without the only measurement the analysis is the background.
        assert!(out.counterfactuals[0].unwrap().abs() < 1e-12);
        assert!((s.drones[0].budget - 50.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_move_budget() {
        let sc = paperlike();
        let env = Env::new(sc.clone(), EnvConfig::new(sc.grid(), 1, 2000.0)).unwrap();
        let mut s = env.reset(5).unwrap();
        s.drones[0].cell = 0;
        env.step(&mut s, &[Some(11)]).unwrap();
        assert!((s.drones[0].budget - 1929.29).abs() < 0.01);
    }

    #[test]
    fn landing_everyone_gives_zero_reward() {
        let env = two_cell_env(60.0);
        let mut s = env.reset(0).unwrap();
        s.drones[0].cell = 1;
        env.step(&mut s, &[Some(0)]).unwrap();
        assert!(s.done, "10 m of budget left, nowhere to go");

        let env = two_cell_env(40.0);
        let mut s = env.reset(0).unwrap();
        let before = s.analysis.clone();
        let out = env.step(&mut s, &[None]).unwrap();
        assert_eq!(out.team_reward, 0.0);
        assert_eq!(s.analysis, before);
        assert_eq!(out.counterfactuals, vec![None]);
        assert!(out.done && !s.drones[0].active);
    }

    #[test]
    fn infeasible_action_is_rejected() {
        let sc = paperlike();
        let env = Env::new(sc.clone(), EnvConfig::new(sc.grid(), 1, 2000.0)).unwrap();
        let mut s = env.reset(5).unwrap();
        let here = s.drones[0].cell;
        let snapshot = s.clone();
        assert!(matches!(env.step(&mut s, &[Some(here)]), Err(Error::ContractViolation(_))));
        assert!(matches!(env.step(&mut s, &[None]), Err(Error::ContractViolation(_))));
        assert_eq!(s, snapshot);
    }

    #[test]
    fn reward_functions() {
        let g = make_grid(1, 2, 1.0).unwrap();
        let a = Field::new(g, vec![5.0, 7.0]).unwrap();
        let b = Field::new(g, vec![3.0, 5.0]).unwrap();
        assert_eq!(team_reward_da(&a, &a, 1.0).unwrap(), 0.0);
        assert_eq!(team_reward_da(&a, &b, 1.0).unwrap(), 2.0);
        assert_eq!(team_reward_da(&a, &b, -1.0).unwrap(), -2.0);

        let truth = Field::new(g, vec![0.0, 0.0]).unwrap();
        let bg = Field::new(g, vec![4.0, 4.0]).unwrap();
        let half = Field::new(g, vec![2.0, -2.0]).unwrap();
        assert_eq!(team_reward_gt(&truth, &truth, &bg).unwrap(), 1.0);
        assert_eq!(team_reward_gt(&truth, &bg, &bg).unwrap(), 0.0);
        assert_eq!(team_reward_gt(&truth, &half, &bg).unwrap(), 0.5);
        assert!(matches!(team_reward_gt(&truth, &bg, &truth), Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn random_episode_invariants() {
        let sc = paperlike();
        let env = Env::new(sc.clone(), EnvConfig::new(sc.grid(), 3, 2000.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for episode in 0..5 {
            let mut s = env.reset(episode).unwrap();
            let mut total = 0.0;
            while !s.done {
                let before_obs = s.observations.len();
                let before_budgets: Vec<f64> = s.drones.iter().map(|d| d.budget).collect();
                let joint: Vec<_> = (0..3).map(|a| random_feasible_action(&env.feasible_actions(&s, a), &mut rng)).collect();
                let out = env.step(&mut s, &joint).unwrap();
                total += out.team_reward;
                let acted = out.acted.iter().filter(|&&a| a).count();
                assert_eq!(s.observations.len(), before_obs + acted);
                for (d, b) in s.drones.iter().zip(before_budgets) {
                    assert!(d.budget <= b);
                }
                assert!(s.step <= env.config().max_steps);
            }
            let telescoped = team_reward_da(&sc.background, &s.analysis, 1.0).unwrap();
            assert!((total - telescoped).abs() < 1e-9 * sc.background.std());
        }
    }

    #[test]
    fn trace_is_json_lines() {
        let sc = paperlike();
        let env = Env::new(sc.clone(), EnvConfig::new(sc.grid(), 2, 500.0)).unwrap();
        let mut s = env.reset(9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut records = Vec::new();
        while !s.done {
            let joint: Vec<_> = (0..2).map(|a| random_feasible_action(&env.feasible_actions(&s, a), &mut rng)).collect();
            let out = env.step(&mut s, &joint).unwrap();
            records.push(TraceRecord::new(&s, &out));
        }
        let mut buf = Vec::new();
        write_trace_jsonl(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), records.len());
        let first: TraceRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first, records[0]);
    }
}
