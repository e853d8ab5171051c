//! Splitting a team reward into per-agent rewards.
//!
//! Three strategies: an equal split among active agents, difference rewards
//! driven by the DA convergence reward (mean-centred, range-normalized
//! counterfactual deviations), and difference rewards driven by the
//! ground-truth reward (counterfactual shares normalized to sum to one).
//! Only agents active this step take part; inactive agents receive exactly 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreditStrategy {
    Equal,
    DiffDa,
    DiffGt,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreditConfig {
    pub strategy: CreditStrategy,
    /// Scales the counterfactual deviation term of the DA difference rewards.
    pub gamma_credit: f64,
}

impl CreditConfig {
    /// `gamma_credit = 1 / fleet_size`.
    pub fn new(strategy: CreditStrategy, fleet_size: usize) -> Self {
        Self { strategy, gamma_credit: 1.0 / fleet_size.max(1) as f64 }
    }

    pub fn split(&self, team_reward: f64, counterfactuals: &[Option<f64>], active: &[bool]) -> Result<CreditOutcome> {
        match self.strategy {
            CreditStrategy::Equal => equal_split(team_reward, active),
            CreditStrategy::DiffDa => diff_rewards_da(team_reward, counterfactuals, self.gamma_credit, active),
            CreditStrategy::DiffGt => diff_rewards_gt(team_reward, counterfactuals, active),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CreditOutcome {
    pub contributions: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl CreditOutcome {
    fn from_contributions(team_reward: f64, contributions: Vec<f64>) -> Self {
        let rewards = contributions.iter().map(|c| team_reward * c).collect();
        Self { contributions, rewards }
    }
}

fn active_count(active: &[bool]) -> Result<usize> {
    let count = active.iter().filter(|&&a| a).count();
    if count == 0 {
        return Err(Error::invalid("credit assignment needs at least one active agent"));
    }
    Ok(count)
}

fn active_counterfactuals(counterfactuals: &[Option<f64>], active: &[bool]) -> Result<Vec<(usize, f64)>> {
    if counterfactuals.len() != active.len() {
        return Err(Error::invalid(format!(
            "{} counterfactuals for {} agents",
            counterfactuals.len(),
            active.len()
        )));
    }
    active
        .iter()
        .enumerate()
        .filter(|(_, &a)| a)
        .map(|(i, _)| {
            counterfactuals[i]
                .map(|r| (i, r))
                .ok_or_else(|| Error::invalid(format!("missing counterfactual reward for active agent {i}")))
        })
        .collect()
}

pub fn equal_split(team_reward: f64, active: &[bool]) -> Result<CreditOutcome> {
    let count = active_count(active)?;
    let share = 1.0 / count as f64;
    let contributions = active.iter().map(|&a| if a { share } else { 0.0 }).collect();
    Ok(CreditOutcome::from_contributions(team_reward, contributions))
}

/// `c_i = 1/N_a - (1/gamma) (r_{-i} - mean r_{-k}) / (max r_{-k} - min r_{-k})`.
pub fn diff_rewards_da(
    team_reward: f64,
    counterfactuals: &[Option<f64>],
    gamma_credit: f64,
    active: &[bool],
) -> Result<CreditOutcome> {
    if !(gamma_credit > 0.0) {
        return Err(Error::invalid(format!("gamma_credit must be > 0, got {gamma_credit}")));
    }
    let count = active_count(active)?;
    let cf = active_counterfactuals(counterfactuals, active)?;
    let base = 1.0 / count as f64;
    let mean = cf.iter().map(|(_, r)| r).sum::<f64>() / count as f64;
    let max = cf.iter().map(|&(_, r)| r).fold(f64::NEG_INFINITY, f64::max);
    let min = cf.iter().map(|&(_, r)| r).fold(f64::INFINITY, f64::min);
    let range = max - min;

    let mut contributions = vec![0.0; active.len()];
    for &(i, r) in &cf {
        contributions[i] = if range > 0.0 { base - (r - mean) / (gamma_credit * range) } else { base };
    }
    Ok(CreditOutcome::from_contributions(team_reward, contributions))
}

/// `c_i = (1 - r_{-i} / sum_j r_{-j}) / (N_a - 1)`.
pub fn diff_rewards_gt(team_reward: f64, counterfactuals: &[Option<f64>], active: &[bool]) -> Result<CreditOutcome> {
    let count = active_count(active)?;
    let cf = active_counterfactuals(counterfactuals, active)?;
    if count == 1 {
        return equal_split(team_reward, active);
    }
    let total: f64 = cf.iter().map(|(_, r)| r).sum();
    if total == 0.0 {
        return equal_split(team_reward, active);
    }
    let mut contributions = vec![0.0; active.len()];
    for &(i, r) in &cf {
        contributions[i] = (1.0 - r / total) / (count - 1) as f64;
    }
    Ok(CreditOutcome::from_contributions(team_reward, contributions))
}
