//! JSON scenario documents and their resolved, ready-to-simulate form.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assimilation::{BackgroundCov, CovarianceModel};
use crate::envsim::{RewardConfig, RewardMode};
use crate::error::{Error, Result};
use crate::scenario::{
    gaussian_plume_field, load_field_csv, mae, sample_background, BackgroundSpec, Field, GridSpec, PlumeSpec,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum TruthSection {
    Plume(PlumeSpec),
    /// Path to a field CSV, relative to the scenario file.
    CsvPath(PathBuf),
}

/// Either one budget shared by every drone or one budget per drone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BudgetSpec {
    Shared(f64),
    PerDrone(Vec<f64>),
}

impl BudgetSpec {
    pub fn resolve(&self, num_drones: usize) -> Result<Vec<f64>> {
        let budgets = match self {
            BudgetSpec::Shared(b) => vec![*b; num_drones],
            BudgetSpec::PerDrone(list) => {
                if list.len() != num_drones {
                    return Err(Error::InvalidScenario(format!(
                        "{} per-drone budgets given for {num_drones} drones",
                        list.len()
                    )));
                }
                list.clone()
            }
        };
        if let Some(b) = budgets.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
            return Err(Error::InvalidScenario(format!("drone budget must be finite and >= 0, got {b}")));
        }
        Ok(budgets)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSection {
    pub budget_m: BudgetSpec,
    /// Defaults to `ceil(max budget / spacing)`.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_true")]
    pub sense_at_start: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: GridSection,
    pub truth: TruthSection,
    pub covariance: CovarianceModel,
    pub background: BackgroundSpec,
    pub episode: EpisodeSection,
    pub reward: RewardConfig,
}

impl ScenarioFile {
    /// 10x10 grid at 50 m, three-source plume (peak 300 ppm), alpha 0.3,
    /// delta 0.01 /m, noiseless sensing, five averaged simulations, 2000 m budgets.
    pub fn paperlike() -> Self {
        Self {
            grid: GridSection { rows: 10, cols: 10, spacing_m: 50.0 },
            truth: TruthSection::Plume(PlumeSpec::paperlike()),
            covariance: CovarianceModel::default(),
            background: BackgroundSpec::default(),
            episode: EpisodeSection { budget_m: BudgetSpec::Shared(2000.0), max_steps: None, sense_at_start: true },
            reward: RewardConfig { mode: RewardMode::Da, sign: 1.0 },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_json(&text)?, base))
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.rows, self.grid.cols, self.grid.spacing_m)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid_spec()?;
        if let TruthSection::Plume(p) = &self.truth {
            p.validate(&grid)?;
        }
        self.covariance.validate()?;
        self.background.validate()?;
        self.reward.validate()?;
        if let BudgetSpec::PerDrone(list) = &self.episode.budget_m {
            self.episode.budget_m.resolve(list.len())?;
        } else {
            self.episode.budget_m.resolve(1)?;
        }
        Ok(())
    }

    /// Materializes truth, background and covariance. `base_dir` resolves a
    /// relative truth CSV path.
    pub fn build(&self, base_dir: &Path) -> Result<Scenario> {
        self.validate()?;
        let grid = self.grid_spec()?;
        let truth = match &self.truth {
            TruthSection::Plume(p) => gaussian_plume_field(&grid, p)?,
            TruthSection::CsvPath(rel) => {
                let path = if rel.is_absolute() { rel.clone() } else { base_dir.join(rel) };
                load_field_csv(&std::fs::read_to_string(&path)?, &grid)?
            }
        };
        Scenario::new(truth, self.covariance.clone(), &self.background, self.reward)
    }
}

/// Everything an environment needs that does not depend on the fleet.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub truth: Field,
    pub background: Field,
    pub covariance: CovarianceModel,
    pub background_cov: Arc<BackgroundCov>,
    pub reward: RewardConfig,
    /// `MAE(x^t, x^b)`.
    pub background_mae: f64,
}

impl Scenario {
    pub fn new(
        truth: Field,
        covariance: CovarianceModel,
        background_spec: &BackgroundSpec,
        reward: RewardConfig,
    ) -> Result<Self> {
        if truth.values().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidScenario("ground-truth concentrations must be >= 0".into()));
        }
        let background = sample_background(&truth, &covariance, background_spec)?;
        Self::with_background(truth, background, covariance, reward)
    }

    pub fn with_background(
        truth: Field,
        background: Field,
        covariance: CovarianceModel,
        reward: RewardConfig,
    ) -> Result<Self> {
        covariance.validate()?;
        reward.validate()?;
        let background_cov = Arc::new(covariance.build(&background)?);
        let background_mae = mae(&truth, &background)?;
        Ok(Self { truth, background, covariance, background_cov, reward, background_mae })
    }

    pub fn grid(&self) -> &GridSpec {
        self.truth.grid()
    }
}
