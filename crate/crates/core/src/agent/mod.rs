//! Independent categorical (C51) Q-learners, one per drone.
//!
//! Every agent sees the same shared state (standardized analysis map plus
//! normalized drone positions) but learns from its own actions and its own
//! credited reward, with a private replay buffer, target network and Adam
//! optimizer.

mod adam;
mod checkpoint;
mod network;
mod replay;
mod support;

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{softmax_in_place, Dense, DistTable, Gradients, QNetwork, PROB_FLOOR};
pub use replay::{ReplayBuffer, Transition};
pub use support::AtomSupport;

use crate::envsim::EnvState;
use crate::error::{Error, Result};
use crate::scenario::{Field, GridSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub num_atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub discount: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Hard target copy every this many gradient updates.
    pub target_update_period: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            num_atoms: 51,
            v_min: -2.0,
            v_max: 2.0,
            hidden: vec![128, 64],
            adam: AdamConfig::default(),
            discount: 0.99,
            batch_size: 128,
            replay_capacity: 300_000,
            target_update_period: 3,
        }
    }
}

/// Linear decay from `start` to `end` over the first `fraction` of training, then flat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { start: 1.0, end: 0.05, fraction: 0.2 }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64, total_steps: u64) -> f64 {
        let horizon = self.fraction * total_steps as f64;
        if horizon <= 0.0 || step as f64 >= horizon {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / horizon
    }
}

/// Shared state encoding: `(x^a - mean(x^b)) / std(x^b)` per cell, then each
/// drone's `(col, row)` scaled to `[0, 1]`. Budgets are deliberately absent.
#[derive(Clone, Debug, PartialEq)]
pub struct StateEncoder {
    grid: GridSpec,
    num_drones: usize,
    mean: f64,
    std: f64,
}

impl StateEncoder {
    pub fn new(background: &Field, num_drones: usize) -> Result<Self> {
        let std = background.std();
        if !(std > 0.0) {
            return Err(Error::InvalidScenario("background has zero spread; cannot standardize the state".into()));
        }
        Ok(Self { grid: *background.grid(), num_drones, mean: background.mean(), std })
    }

    pub fn dim(&self) -> usize {
        self.grid.n() + 2 * self.num_drones
    }

    /// `std(x^b)`, also the reward normalizer.
    pub fn scale(&self) -> f64 {
        self.std
    }

    pub fn encode(&self, state: &EnvState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend(state.analysis.values().iter().map(|v| (v - self.mean) / self.std));
        let norm = |k: usize, extent: usize| if extent > 1 { k as f64 / (extent - 1) as f64 } else { 0.0 };
        for d in &state.drones {
            let (row, col) = self.grid.row_col(d.cell);
            out.push(norm(col, self.grid.cols()));
            out.push(norm(row, self.grid.rows()));
        }
        out
    }
}

fn argmax_masked(values: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (a, (&q, &ok)) in values.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|(_, b)| q > b) {
            best = Some((a, q));
        }
    }
    best.map(|(a, _)| a)
}

/// ε-greedy over feasible actions; greedy ties go to the lowest index.
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    support: &AtomSupport,
    encoding: &[f64],
    mask: &[bool],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if mask.len() != net.num_actions() {
        return Err(Error::invalid(format!("mask has {} entries for {} actions", mask.len(), net.num_actions())));
    }
    let feasible: Vec<usize> = mask.iter().enumerate().filter(|(_, &f)| f).map(|(a, _)| a).collect();
    if feasible.is_empty() {
        return Err(Error::invalid("no feasible action; the drone must land"));
    }
    if rng.random::<f64>() < epsilon {
        return Ok(feasible[rng.random_range(0..feasible.len())]);
    }
    let q = net.forward(encoding)?.q_values(support.atoms());
    Ok(argmax_masked(&q, mask).expect("mask has a feasible action"))
}

/// Network, target copy, optimizer, replay buffer and RNG of one drone.
#[derive(Clone, Debug)]
pub struct C51Agent {
    pub config: AgentConfig,
    pub support: AtomSupport,
    pub online: QNetwork,
    pub target: QNetwork,
    pub optimizer: Adam,
    pub buffer: ReplayBuffer,
    pub rng: ChaCha8Rng,
    pub grad_updates: u64,
    pub target_syncs: u64,
}

impl C51Agent {
    pub fn new(config: AgentConfig, input_dim: usize, num_actions: usize, seed: u64) -> Result<Self> {
        let support = AtomSupport::new(config.num_atoms, config.v_min, config.v_max)?;
        if config.batch_size == 0 || config.target_update_period == 0 {
            return Err(Error::invalid("batch size and target update period must be positive"));
        }
        if !(0.0..=1.0).contains(&config.discount) {
            return Err(Error::invalid(format!("discount must lie in [0, 1], got {}", config.discount)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = QNetwork::new(input_dim, &config.hidden, num_actions, config.num_atoms, &mut rng);
        let shapes: Vec<usize> = online.tensors().iter().map(|t| t.len()).collect();
        let optimizer = Adam::new(config.adam, &shapes);
        let buffer = ReplayBuffer::new(config.replay_capacity);
        Ok(Self {
            target: online.clone(),
            online,
            optimizer,
            buffer,
            support,
            rng,
            config,
            grad_updates: 0,
            target_syncs: 0,
        })
    }

    pub fn act(&mut self, encoding: &[f64], mask: &[bool], epsilon: f64) -> Result<usize> {
        select_action(&self.online, &self.support, encoding, mask, epsilon, &mut self.rng)
    }

    pub fn remember(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
        self.target_syncs += 1;
    }

    /// C51 targets for a minibatch: greedy next action under the target
    /// network (restricted to the stored next-state mask), then projection.
    pub fn compute_targets(&self, batch: &[&Transition]) -> Result<DMatrix<f64>> {
        let k = self.support.num_atoms();
        let dim = self.online.input_dim();
        let next = DMatrix::from_fn(dim, batch.len(), |i, b| batch[b].next_state[i]);
        let logits = self.target.logits_batch(&next)?;
        let mut next_dists = DMatrix::zeros(k, batch.len());
        let mut dones = Vec::with_capacity(batch.len());
        let atoms = self.support.atoms();
        for (b, t) in batch.iter().enumerate() {
            let column = logits.column(b);
            let column = column.as_slice();
            let mut best: Option<(f64, usize)> = None;
            if !t.done {
                for (a, _) in t.next_mask.iter().enumerate().filter(|(_, &ok)| ok) {
                    let q = expected_atom(&column[a * k..(a + 1) * k], atoms);
                    if best.is_none_or(|(bq, _)| q > bq) {
                        best = Some((q, a));
                    }
                }
            }
            match best {
                Some((_, a)) => {
                    let mut dest = next_dists.column_mut(b);
                    let dest = dest.as_mut_slice();
                    dest.copy_from_slice(&column[a * k..(a + 1) * k]);
                    softmax_in_place(dest);
                    dones.push(false);
                }
                None => dones.push(true),
            }
        }
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        self.support.project_target(&rewards, &dones, &next_dists, self.config.discount)
    }

    /// One gradient update from a fresh minibatch; `None` until the buffer
    /// holds a full batch. Syncs the target every `target_update_period` updates.
    pub fn train_step(&mut self) -> Result<Option<f64>> {
        let batch_size = self.config.batch_size;
        let Some(batch) = self.buffer.sample(batch_size, &mut self.rng) else {
            return Ok(None);
        };
        let targets = self.compute_targets(&batch)?;
        let dim = self.online.input_dim();
        let inputs = DMatrix::from_fn(dim, batch.len(), |i, b| batch[b].state[i]);
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let (loss, grads) = self.online.loss_and_grads(&inputs, &actions, &targets)?;
        self.optimizer.update(&mut self.online.tensors_mut(), &grads.tensors())?;
        self.grad_updates += 1;
        if self.grad_updates % self.config.target_update_period == 0 {
            self.sync_target();
        }
        Ok(Some(loss))
    }
}

/// Mean of the softmax of `logits` over `atoms`, in one exp pass.
fn expected_atom(logits: &[f64], atoms: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut sum, mut weighted) = (0.0, 0.0);
    for (&l, &z) in logits.iter().zip(atoms) {
        let e = (l - max).exp();
        sum += e;
        weighted += e * z;
    }
    weighted / sum
}

/// Builds a shared-ownership transition payload once per step.
pub fn shared<T: Clone>(v: Vec<T>) -> Arc<[T]> {
    Arc::from(v)
}
