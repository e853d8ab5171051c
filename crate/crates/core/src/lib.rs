//! Budgeted multi-drone sensing for BLUE data assimilation.
//!
//! Drones fly over a gridded pollution field, take point measurements and
//! feed them to a best-linear-unbiased-estimator analysis. Independent
//! categorical (C51) Q-learners, one per drone, learn where to fly from a
//! reward computed on the analysis alone; the ground truth is used only for
//! evaluation and for the ground-truth reward baselines.


pub mod agent;
pub mod assimilation;
pub mod credit;
pub mod envsim;
pub mod error;
pub mod harness;

pub mod scenario;
pub mod scenario_file;

pub use assimilation::{BackgroundCov, CovarianceModel, Observation, ObservationSet};
pub use credit::{CreditConfig, CreditOutcome, CreditStrategy};
pub use envsim::{Env, EnvConfig, EnvState, RewardConfig, RewardMode, StepOutcome};
pub use error::{Error, Result};
pub use harness::{Method, RunConfig};
pub use scenario::{Field, GridSpec, PlumeSpec};
pub use scenario_file::{Scenario, ScenarioFile};
