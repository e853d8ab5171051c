use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::eval::{evaluate_policy, run_random_baseline, EvalStats};
use super::{derive_seed, Method, RunConfig, Stream, EVAL_SEED_BIT};
use crate::agent::{save_checkpoint, shared, C51Agent, ReplayBuffer, StateEncoder, Transition};
use crate::credit::CreditConfig;
use crate::envsim::{random_feasible_action, Env};
use crate::error::{Error, Result};

pub const LEARNING_CURVE_HEADER: [&str; 7] = [
    "method",
    "seed",
    "step",
    "eval_final_mae_mean",
    "eval_final_mae_std",
    "eval_step_mean_mae",
    "team_return_mean",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: Method,
    pub seed: u64,
    pub step: u64,
    pub eval_final_mae_mean: f64,
    pub eval_final_mae_std: f64,
    pub eval_step_mean_mae: f64,
    pub team_return_mean: f64,
}

impl CurveRow {
    fn new(method: Method, seed: u64, step: u64, stats: &EvalStats) -> Self {
        Self {
            method,
            seed,
            step,
            eval_final_mae_mean: stats.final_mae_mean(),
            eval_final_mae_std: stats.final_mae_std(),
            eval_step_mean_mae: stats.step_mean_mae_mean(),
            team_return_mean: stats.team_return_mean(),
        }
    }

    fn missing(method: Method, seed: u64, step: u64) -> Self {
        Self::new(method, seed, step, &EvalStats::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SeedStatus {
    Completed,
    /// Non-finite loss; later checkpoints are recorded as NaN rows.
    Diverged { step: u64, message: String },
}

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub status: SeedStatus,
    /// One row per evaluation checkpoint, `total_steps / eval_period` rows.
    pub curve: Vec<CurveRow>,
    /// Final agents with empty replay buffers; empty for the random baseline.
    pub agents: Vec<C51Agent>,
    pub train_episodes: u64,
    /// Share of stored normalized rewards inside the atom support.
    pub rewards_in_support: Option<f64>,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub config: RunConfig,
    pub seeds: Vec<SeedOutcome>,
    pub wall_clock_s: f64,
}

impl RunArtifacts {
    pub fn diverged(&self) -> bool {
        self.seeds.iter().any(|s| s.status != SeedStatus::Completed)
    }

    pub fn curve_rows(&self) -> impl Iterator<Item = &CurveRow> {
        self.seeds.iter().flat_map(|s| &s.curve)
    }

    pub fn learning_curve_csv(&self) -> Result<Vec<u8>> {
        write_curve_csv(self.curve_rows())
    }

    /// Writes `learning_curve.csv`, per-seed agent checkpoints and
    /// `manifest.json` (last, with hashes of everything else).
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out_dir)?;
        let mut artifacts = Vec::new();
        let curve = self.learning_curve_csv()?;
        fs::write(out_dir.join("learning_curve.csv"), &curve)?;
        artifacts.push(ArtifactEntry::new("learning_curve.csv", &curve));

        for outcome in &self.seeds {
            if outcome.agents.is_empty() {
                continue;
            }
            let dir = format!("seed_{}", outcome.seed);
            fs::create_dir_all(out_dir.join(&dir))?;
            for (i, agent) in outcome.agents.iter().enumerate() {
                let rel = format!("{dir}/agent_{i}.ckpt");
                let path = out_dir.join(&rel);
                save_checkpoint(agent, &path)?;
                artifacts.push(ArtifactEntry::new(&rel, &fs::read(&path)?));
            }
        }

        let manifest = Manifest {
            software: format!("plume-scout {}", env!("CARGO_PKG_VERSION")),
            config: &self.config,
            resolved_scenario: self.config.resolved_scenario()?,
            env: self.config.env_config()?,
            gamma_credit: self.config.gamma_credit(),
            seeds: self
                .seeds
                .iter()
                .map(|s| SeedEntry {
                    seed: s.seed,
                    status: s.status.clone(),
                    train_episodes: s.train_episodes,
                    checkpoints: s.curve.len(),
                    rewards_in_support: s.rewards_in_support,
                    wall_clock_s: s.wall_clock_s,
                })
                .collect(),
            seed_domains: SeedDomains {
                train_episode_seeds: "top bit clear (< 2^63)",
                eval_episode_seeds: "top bit set (>= 2^63)",
                eval_seed_bit: EVAL_SEED_BIT,
            },
            artifacts,
            wall_clock_s: self.wall_clock_s,
        };
        let path = out_dir.join("manifest.json");
        let mut file = fs::File::create(&path)?;
        serde_json::to_writer_pretty(&mut file, &manifest)?;
        file.write_all(b"\n")?;
        Ok(path)
    }
}

pub(crate) fn write_curve_csv<'a>(rows: impl Iterator<Item = &'a CurveRow>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(LEARNING_CURVE_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Serialize)]
struct ArtifactEntry {
    path: String,
    sha256: String,
    bytes: usize,
}

impl ArtifactEntry {
    fn new(path: &str, bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self { path: path.to_string(), sha256, bytes: bytes.len() }
    }
}

#[derive(Serialize)]
struct SeedEntry {
    seed: u64,
    #[serde(flatten)]
    status: SeedStatus,
    train_episodes: u64,
    checkpoints: usize,
    rewards_in_support: Option<f64>,
    wall_clock_s: f64,
}

#[derive(Serialize)]
struct SeedDomains {
    train_episode_seeds: &'static str,
    eval_episode_seeds: &'static str,
    eval_seed_bit: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    software: String,
    config: &'a RunConfig,
    resolved_scenario: crate::scenario_file::ScenarioFile,
    env: crate::envsim::EnvConfig,
    gamma_credit: f64,
    seeds: Vec<SeedEntry>,
    seed_domains: SeedDomains,
    artifacts: Vec<ArtifactEntry>,
    wall_clock_s: f64,
}

/// Trains every seed (in parallel up to `config.workers`). A diverging seed
/// is recorded and does not stop the others; any other error aborts the run.
pub fn run_training(config: &RunConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let seeds = pool.install(|| config.seeds.par_iter().map(|&s| run_seed(config, s)).collect::<Result<Vec<_>>>())?;
    Ok(RunArtifacts { config: config.clone(), seeds, wall_clock_s: start.elapsed().as_secs_f64() })
}

/// One training seed end to end.
pub fn run_seed(config: &RunConfig, seed: u64) -> Result<SeedOutcome> {
    let start = Instant::now();
    let scenario = Arc::new(config.build_scenario(seed)?);
    let env = Env::new(scenario, config.env_config()?)?;
    let checkpoints = config.total_steps / config.eval_period;
    let eval_seed = seed;

    let Some((_, strategy)) = config.method.learning() else {
        let curve = if checkpoints > 0 {
            let stats = run_random_baseline(&env, config.eval_episodes, eval_seed)?;
            (1..=checkpoints).map(|c| CurveRow::new(config.method, seed, c * config.eval_period, &stats)).collect()
        } else {
            Vec::new()
        };
        return Ok(SeedOutcome {
            seed,
            status: SeedStatus::Completed,
            curve,
            agents: Vec::new(),
            train_episodes: 0,
            rewards_in_support: None,
            wall_clock_s: start.elapsed().as_secs_f64(),
        });
    };

    let n_agents = config.num_agents;
    let n_cells = env.grid().n();
    let encoder = StateEncoder::new(&env.scenario().background, n_agents)?;
    let credit = CreditConfig { strategy, gamma_credit: config.gamma_credit() };
    let mut agents = (0..n_agents)
        .map(|i| C51Agent::new(config.agent.clone(), encoder.dim(), n_cells, derive_seed(seed, Stream::Agent, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut explore = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Exploration, 0));
    let (v_min, v_max) = (config.agent.v_min, config.agent.v_max);

    let mut curve = Vec::with_capacity(checkpoints as usize);
    let mut status = SeedStatus::Completed;
    let mut episode = 0u64;
    let mut state = env.reset(derive_seed(seed, Stream::TrainEpisode, episode))?;
    let mut encoding = shared(encoder.encode(&state));
    let (mut stored, mut in_support) = (0u64, 0u64);

    'train: for step in 0..config.total_steps {
        if state.done {
            episode += 1;
            state = env.reset(derive_seed(seed, Stream::TrainEpisode, episode))?;
            encoding = shared(encoder.encode(&state));
        }
        let epsilon = config.epsilon.value(step, config.total_steps);
        let masks: Vec<Vec<bool>> = (0..n_agents).map(|i| env.feasible_actions(&state, i)).collect();
        let mut joint = Vec::with_capacity(n_agents);
        for (agent, mask) in agents.iter_mut().zip(&masks) {
            joint.push(if !mask.iter().any(|&f| f) {
                None
            } else if step < config.warmup_steps {
                random_feasible_action(mask, &mut explore)
            } else {
                Some(agent.act(&encoding, mask, epsilon)?)
            });
        }

        let outcome = env.step(&mut state, &joint)?;
        let split = credit.split(outcome.team_reward, &outcome.counterfactuals, &outcome.acted)?;
        let next_encoding = shared(encoder.encode(&state));
        for (i, agent) in agents.iter_mut().enumerate() {
            let Some(action) = joint[i].filter(|_| outcome.acted[i]) else { continue };
            let reward = split.rewards[i] / encoder.scale();
            stored += 1;
            in_support += u64::from((v_min..=v_max).contains(&reward));
            agent.remember(Transition {
                state: encoding.clone(),
                action,
                reward,
                next_state: next_encoding.clone(),
                done: outcome.per_agent_done[i],
                next_mask: shared(env.feasible_actions(&state, i)),
            });
        }
        encoding = next_encoding;

        if step >= config.warmup_steps {
            for agent in agents.iter_mut() {
                match agent.train_step() {
                    Ok(_) => {}
                    Err(Error::Numeric(message)) => {
                        log::warn!("seed {seed}: diverged at step {}: {message}", step + 1);
                        status = SeedStatus::Diverged { step: step + 1, message };
                        break 'train;
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        if (step + 1) % config.eval_period == 0 {
            let stats = evaluate_policy(&agents, &env, config.eval_episodes, eval_seed, config.eval_epsilon)?;
            let row = CurveRow::new(config.method, seed, step + 1, &stats);
            log::info!(
                "{} seed {seed} step {}: final MAE {:.4} ± {:.4}",
                config.method,
                step + 1,
                row.eval_final_mae_mean,
                row.eval_final_mae_std
            );
            curve.push(row);
        }
    }

    while (curve.len() as u64) < checkpoints {
        let step = (curve.len() as u64 + 1) * config.eval_period;
        curve.push(CurveRow::missing(config.method, seed, step));
    }
    let rewards_in_support = (stored > 0).then(|| in_support as f64 / stored as f64);
    if let Some(share) = rewards_in_support {
        if share < 0.99 {
            log::warn!("seed {seed}: only {:.1}% of normalized rewards fall inside the atom support", share * 100.0);
        }
    }
    for agent in &mut agents {
        agent.buffer = ReplayBuffer::new(agent.config.replay_capacity);
    }
    Ok(SeedOutcome {
        seed,
        status,
        curve,
        agents,
        train_episodes: episode + 1,
        rewards_in_support,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}
