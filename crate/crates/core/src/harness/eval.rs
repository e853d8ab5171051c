use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, Stream};
use crate::agent::{select_action, C51Agent, StateEncoder};
use crate::envsim::{Env, EnvState, StepOutcome};
use crate::error::{Error, Result};
use crate::scenario::mae;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// `MAE(x^t, x^a)` when the episode ends.
    pub final_mae: f64,
    /// Mean of `MAE(x^t, x^a_t)` over the episode's steps.
    pub step_mean_mae: f64,
    pub team_return: f64,
    pub steps: usize,
}

/// Per-episode metrics of one evaluation; summaries use population std.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: Vec<EpisodeMetrics>,
}

impl EvalStats {
    fn summarize(&self, f: impl Fn(&EpisodeMetrics) -> f64) -> (f64, f64) {
        let n = self.episodes.len() as f64;
        if self.episodes.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let mean = self.episodes.iter().map(&f).sum::<f64>() / n;
        let var = self.episodes.iter().map(|e| (f(e) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    pub fn final_mae_mean(&self) -> f64 {
        self.summarize(|e| e.final_mae).0
    }

    pub fn final_mae_std(&self) -> f64 {
        self.summarize(|e| e.final_mae).1
    }

    pub fn step_mean_mae_mean(&self) -> f64 {
        self.summarize(|e| e.step_mean_mae).0
    }

    pub fn step_mean_mae_std(&self) -> f64 {
        self.summarize(|e| e.step_mean_mae).1
    }

    pub fn team_return_mean(&self) -> f64 {
        self.summarize(|e| e.team_return).0
    }

    pub fn final_maes(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.final_mae).collect()
    }
}

/// Plays one episode from `state` to termination with `choose` picking the
/// joint action given the state and every agent's feasibility mask.
fn play_episode(
    env: &Env,
    mut state: EnvState,
    mut choose: impl FnMut(&mut EnvState, &[Vec<bool>]) -> Result<Vec<Option<usize>>>,
) -> Result<EpisodeMetrics> {
    let mut team_return = 0.0;
    let mut mae_sum = 0.0;
    let mut steps = 0;
    let mut last: Option<StepOutcome> = None;
    while !state.done {
        let masks: Vec<Vec<bool>> = (0..env.num_drones()).map(|i| env.feasible_actions(&state, i)).collect();
        let joint = choose(&mut state, &masks)?;
        let outcome = env.step(&mut state, &joint)?;
        team_return += outcome.team_reward;
        mae_sum += outcome.mae_truth;
        steps += 1;
        last = Some(outcome);
    }
    let final_mae = match last {
        Some(o) => o.mae_truth,
        None => mae(&env.scenario().truth, &state.analysis)?,
    };
    Ok(EpisodeMetrics { final_mae, step_mean_mae: if steps > 0 { mae_sum / steps as f64 } else { final_mae }, team_return, steps })
}

/// Near-greedy rollouts of the agents' online networks on evaluation seeds.
/// Agents are only read; their RNGs are untouched.
pub fn evaluate_policy(
    agents: &[C51Agent],
    env: &Env,
    episodes: usize,
    seed: u64,
    epsilon: f64,
) -> Result<EvalStats> {
    if agents.len() != env.num_drones() {
        return Err(Error::invalid(format!("{} agents for {} drones", agents.len(), env.num_drones())));
    }
    let encoder = StateEncoder::new(&env.scenario().background, env.num_drones())?;
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes as u64 {
        let ep_seed = derive_seed(seed, Stream::EvalEpisode, ep);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ep_seed, Stream::Exploration, 0));
        let state = env.reset(ep_seed)?;
        let metrics = play_episode(env, state, |state, masks| {
            let encoding = encoder.encode(state);
            agents
                .iter()
                .zip(masks)
                .map(|(agent, mask)| {
                    if !mask.iter().any(|&f| f) {
                        return Ok(None);
                    }
                    select_action(&agent.online, &agent.support, &encoding, mask, epsilon, &mut rng).map(Some)
                })
                .collect()
        })?;
        out.push(metrics);
    }
    Ok(EvalStats { episodes: out })
}

/// Each drone in turn picks a uniform free cell among its feasible moves, so
/// no two drones share a destination. A drone whose feasible cells were all
/// taken lands.
pub fn random_joint_action<R: Rng + ?Sized>(state: &mut EnvState, masks: &[Vec<bool>], rng: &mut R) -> Vec<Option<usize>> {
    let mut taken = vec![false; masks.first().map_or(0, Vec::len)];
    let mut joint = vec![None; masks.len()];
    for (agent, mask) in masks.iter().enumerate() {
        if !mask.iter().any(|&f| f) {
            continue;
        }
        let free: Vec<usize> = (0..mask.len()).filter(|&c| mask[c] && !taken[c]).collect();
        if free.is_empty() {
            state.drones[agent].active = false;
            continue;
        }
        let cell = free[index::sample(rng, free.len(), 1).index(0)];
        taken[cell] = true;
        joint[agent] = Some(cell);
    }
    joint
}

/// Uniformly random flights on evaluation seeds; see [`random_joint_action`].
pub fn run_random_baseline(env: &Env, episodes: usize, seed: u64) -> Result<EvalStats> {
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes as u64 {
        let ep_seed = derive_seed(seed, Stream::EvalEpisode, ep);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ep_seed, Stream::Exploration, 0));
        let state = env.reset(ep_seed)?;
        let metrics = play_episode(env, state, |state, masks| Ok(random_joint_action(state, masks, &mut rng)))?;
        out.push(metrics);
    }
    Ok(EvalStats { episodes: out })
}
