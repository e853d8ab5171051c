//! Training runs, evaluation, baselines and sweeps, plus their on-disk artifacts.

mod eval;
mod stats;
mod sweep;
mod train;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use eval::{evaluate_policy, random_joint_action, run_random_baseline, EpisodeMetrics, EvalStats};
pub use stats::{mean_ci95, MeanCi};
pub use sweep::{sweep, write_sweep, SummaryRow, SweepAxes, SweepCell, SweepResult};
pub use train::{
    run_seed, run_training, CurveRow, RunArtifacts, SeedOutcome, SeedStatus, LEARNING_CURVE_HEADER,
};

use crate::agent::{AgentConfig, EpsilonSchedule};
use crate::credit::CreditStrategy;
use crate::envsim::{default_max_steps, EnvConfig, RewardMode};
use crate::error::{Error, Result};
use crate::scenario_file::{BudgetSpec, Scenario, ScenarioFile};

/// Training or baseline policy named on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "da-diff")]
    DaDiff,
    #[serde(rename = "da-equal")]
    DaEqual,
    #[serde(rename = "gt-diff")]
    GtDiff,
    #[serde(rename = "gt-equal")]
    GtEqual,
    #[serde(rename = "random")]
    Random,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::DaDiff, Method::DaEqual, Method::GtDiff, Method::GtEqual, Method::Random];

    pub fn name(self) -> &'static str {
        match self {
            Method::DaDiff => "da-diff",
            Method::DaEqual => "da-equal",
            Method::GtDiff => "gt-diff",
            Method::GtEqual => "gt-equal",
            Method::Random => "random",
        }
    }

    /// Reward signal and credit strategy, `None` for the random baseline.
    pub fn learning(self) -> Option<(RewardMode, CreditStrategy)> {
        match self {
            Method::DaDiff => Some((RewardMode::Da, CreditStrategy::DiffDa)),
            Method::DaEqual => Some((RewardMode::Da, CreditStrategy::Equal)),
            Method::GtDiff => Some((RewardMode::Gt, CreditStrategy::DiffGt)),
            Method::GtEqual => Some((RewardMode::Gt, CreditStrategy::Equal)),
            Method::Random => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let valid: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::invalid(format!("unknown method '{s}'; valid methods: {}", valid.join(", ")))
        })
    }
}

/// Everything that defines a run. Serialized verbatim into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioFile,
    /// Resolves relative paths inside `scenario`.
    pub scenario_dir: PathBuf,
    pub num_agents: usize,
    /// Overrides the scenario's budget when set.
    pub budget_m: Option<f64>,
    /// Overrides the scenario's covariance scale when set.
    pub alpha: Option<f64>,
    pub method: Method,
    pub total_steps: u64,
    pub eval_period: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub warmup_steps: u64,
    pub epsilon: EpsilonSchedule,
    pub eval_epsilon: f64,
    /// Difference-reward temperature; defaults to `1 / num_agents`.
    pub gamma_credit: Option<f64>,
    pub agent: AgentConfig,
    /// Redraw the background per training seed instead of using the scenario's.
    pub redraw_background: bool,
    pub workers: usize,
}

impl RunConfig {
    pub fn new(scenario: ScenarioFile, num_agents: usize, method: Method) -> Self {
        Self {
            scenario,
            scenario_dir: PathBuf::from("."),
            num_agents,
            budget_m: None,
            alpha: None,
            method,
            total_steps: 100_000,
            eval_period: 1000,
            eval_episodes: 10,
            seeds: vec![1, 2, 3, 4, 5],
            warmup_steps: 1000,
            epsilon: EpsilonSchedule::default(),
            eval_epsilon: 0.01,
            gamma_credit: None,
            agent: AgentConfig::default(),
            redraw_background: false,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.num_agents) {
            return Err(Error::invalid(format!("num_agents must be 1, 2 or 3, got {}", self.num_agents)));
        }
        if self.eval_period == 0 || self.eval_episodes == 0 || self.workers == 0 {
            return Err(Error::invalid("eval_period, eval_episodes and workers must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::invalid("seeds must be distinct"));
        }
        if let Some(b) = self.budget_m {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::invalid(format!("budget must be finite and >= 0, got {b}")));
            }
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return Err(Error::invalid("eval_epsilon must lie in [0, 1]"));
        }
        if let Some(g) = self.gamma_credit {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::invalid("gamma_credit must be positive"));
            }
        }
        self.resolved_scenario()?.validate()
    }

    /// The scenario document after applying overrides and the method's reward mode.
    pub fn resolved_scenario(&self) -> Result<ScenarioFile> {
        let mut file = self.scenario.clone();
        if let Some(alpha) = self.alpha {
            file.covariance.alpha = alpha;
        }
        if let Some(b) = self.budget_m {
            file.episode.budget_m = BudgetSpec::Shared(b);
        }
        if let Some((mode, _)) = self.method.learning() {
            file.reward.mode = mode;
        }
        Ok(file)
    }

    pub fn gamma_credit(&self) -> f64 {
        self.gamma_credit.unwrap_or(1.0 / self.num_agents as f64)
    }

    /// Scenario used by one training seed.
    pub fn build_scenario(&self, seed: u64) -> Result<Scenario> {
        let mut file = self.resolved_scenario()?;
        if self.redraw_background {
            file.background.seed = derive_seed(seed, Stream::Background, 0);
        }
        file.build(&self.scenario_dir)
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        env_config(&self.resolved_scenario()?, self.num_agents)
    }
}

/// Fleet settings of a scenario document for `num_agents` drones.
pub fn env_config(file: &ScenarioFile, num_agents: usize) -> Result<EnvConfig> {
    let budgets_m = file.episode.budget_m.resolve(num_agents)?;
    let grid = file.grid_spec()?;
    let max_budget = budgets_m.iter().copied().fold(0.0, f64::max);
    Ok(EnvConfig {
        max_steps: file.episode.max_steps.unwrap_or_else(|| default_max_steps(&grid, max_budget)),
        budgets_m,
        sense_at_start: file.episode.sense_at_start,
    })
}

/// Independent random streams derived from one user-facing seed.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Stream {
    TrainEpisode,
    EvalEpisode,
    Agent,
    Background,
    Exploration,
}

/// Evaluation episode seeds have the top bit set, training episode seeds
/// never do, so the two sets are disjoint by construction.
pub const EVAL_SEED_BIT: u64 = 1 << 63;

pub(crate) fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    let tag = match stream {
        Stream::TrainEpisode => 1,
        Stream::EvalEpisode => 2,
        Stream::Agent => 3,
        Stream::Background => 4,
        Stream::Exploration => 5,
    };
    let mixed = splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ index);
    match stream {
        Stream::TrainEpisode => mixed & !EVAL_SEED_BIT,
        Stream::EvalEpisode => mixed | EVAL_SEED_BIT,
        _ => mixed,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        let err = "q-learning".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("da-diff") && err.contains("random"));
    }

    #[test]
    fn train_and_eval_seeds_are_disjoint() {
        for s in 0..200 {
            for i in 0..50 {
                assert_eq!(derive_seed(s, Stream::TrainEpisode, i) & EVAL_SEED_BIT, 0);
                assert_ne!(derive_seed(s, Stream::EvalEpisode, i) & EVAL_SEED_BIT, 0);
            }
        }
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = RunConfig::new(ScenarioFile::paperlike(), 2, Method::GtEqual);
        cfg.alpha = Some(0.7);
        cfg.budget_m = Some(1000.0);
        let file = cfg.resolved_scenario().unwrap();
        assert_eq!(file.covariance.alpha, 0.7);
        assert_eq!(file.reward.mode, RewardMode::Gt);
        let env = cfg.env_config().unwrap();
        assert_eq!(env.budgets_m, vec![1000.0, 1000.0]);
        assert_eq!(env.max_steps, 20);
        assert_eq!(cfg.gamma_credit(), 0.5);
    }

    #[test]
    fn validation() {
        let base = RunConfig::new(ScenarioFile::paperlike(), 2, Method::DaDiff);
        assert!(base.validate().is_ok());
        for bad in [
            RunConfig { num_agents: 4, ..base.clone() },
            RunConfig { seeds: vec![], ..base.clone() },
            RunConfig { seeds: vec![1, 1], ..base.clone() },
            RunConfig { eval_period: 0, ..base.clone() },
            RunConfig { budget_m: Some(-1.0), ..base.clone() },
            RunConfig { alpha: Some(-0.3), ..base.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
