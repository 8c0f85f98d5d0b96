//! The training loop and the policies it produces.
//!
//! One call to [`train_agent`] owns the whole lifecycle for a single
//! (method, market, phase, seed) cell: derive the rng streams, fill the
//! replay buffer with Dirichlet exploration until warmup, then run
//! `epochs` passes over the training segment with one gradient update per
//! environment step. The untrained baselines (`random`, `market_average`)
//! short-circuit — they carry no parameters, so "training" them is a
//! no-op that still returns a usable policy.
//!
//! [`backtest`] replays any trained policy over an environment
//! deterministically and returns the run record the metrics layer
//! consumes.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha20Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use super::ensemble::EnsembleAgent;
use super::sac::{SacAgent, SacCheckpoint, SacHp};
use super::{AgentConfig, Method, ReplayBuffer};
use crate::env::{run_episode, uniform_policy, PortfolioEnv, RunRecord};
use crate::error::{bail, CoreError, Result};
use crate::seed::component_rng;

/// A policy ready to act, trained or not.
pub enum TrainedPolicy {
    Sac(SacAgent),
    Ensemble(EnsembleAgent),
    Random,
    MarketAverage,
}

/// Everything needed to rebuild a [`TrainedPolicy`] from disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub method: String,
    pub temperature: f64,
    pub floor: f64,
    pub experts: Vec<SacCheckpoint>,
}

/// Counters the CLI reports after a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub updates: usize,
    pub env_steps: usize,
    /// terminal portfolio value after each epoch's rollout
    pub epoch_values: Vec<f64>,
}

impl TrainedPolicy {
    pub fn method_name(&self) -> &'static str {
        match self {
            TrainedPolicy::Sac(_) => Method::Sac.name(),
            TrainedPolicy::Ensemble(_) => Method::AlphaMix.name(),
            TrainedPolicy::Random => Method::Random.name(),
            TrainedPolicy::MarketAverage => Method::MarketAverage.name(),
        }
    }

    pub fn checkpoint(&self) -> PolicyCheckpoint {
        match self {
            TrainedPolicy::Sac(agent) => PolicyCheckpoint {
                method: Method::Sac.name().to_string(),
                temperature: 0.0,
                floor: 0.0,
                experts: vec![agent.checkpoint()],
            },
            TrainedPolicy::Ensemble(ens) => PolicyCheckpoint {
                method: Method::AlphaMix.name().to_string(),
                temperature: ens.temperature(),
                floor: ens.floor(),
                experts: ens.experts().iter().map(|e| e.checkpoint()).collect(),
            },
            TrainedPolicy::Random => PolicyCheckpoint {
                method: Method::Random.name().to_string(),
                temperature: 0.0,
                floor: 0.0,
                experts: Vec::new(),
            },
            TrainedPolicy::MarketAverage => PolicyCheckpoint {
                method: Method::MarketAverage.name().to_string(),
                temperature: 0.0,
                floor: 0.0,
                experts: Vec::new(),
            },
        }
    }

    pub fn from_checkpoint(ck: &PolicyCheckpoint) -> Result<Self> {
        let method: Method = ck.method.parse()?;
        match method {
            Method::Sac => {
                let [expert] = ck.experts.as_slice() else {
                    bail!(Schema, "sac checkpoint must hold exactly one expert");
                };
                Ok(TrainedPolicy::Sac(SacAgent::from_checkpoint(expert)?))
            }
            Method::AlphaMix => {
                let experts = ck
                    .experts
                    .iter()
                    .map(SacAgent::from_checkpoint)
                    .collect::<Result<Vec<_>>>()?;
                Ok(TrainedPolicy::Ensemble(EnsembleAgent::from_experts(
                    experts,
                    ck.temperature,
                    ck.floor,
                )?))
            }
            Method::Random => Ok(TrainedPolicy::Random),
            Method::MarketAverage => Ok(TrainedPolicy::MarketAverage),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.checkpoint())
            .map_err(|e| CoreError::Schema(format!("encode checkpoint: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| {
            CoreError::Missing(format!("checkpoint {}: {e}", path.display()))
        })?;
        let ck: PolicyCheckpoint = serde_json::from_str(&raw)
            .map_err(|e| CoreError::Schema(format!("decode {}: {e}", path.display())))?;
        TrainedPolicy::from_checkpoint(&ck)
    }
}

/// Train `method` on `env` under `cfg`. Rng streams are all derived from
/// `(master, tag)` so the same call is bit-reproducible.
pub fn train_agent(
    env: &mut PortfolioEnv<'_>,
    method: Method,
    cfg: &AgentConfig,
    master: u64,
    tag: &str,
) -> Result<(TrainedPolicy, TrainReport)> {
    cfg.validate()?;
    let report_empty = TrainReport { updates: 0, env_steps: 0, epoch_values: Vec::new() };
    match method {
        Method::Random => return Ok((TrainedPolicy::Random, report_empty)),
        Method::MarketAverage => return Ok((TrainedPolicy::MarketAverage, report_empty)),
        Method::Sac | Method::AlphaMix => {}
    }

    // plain SAC is the one-expert, no-bootstrap corner of the ensemble
    let (n_experts, beta) =
        if method == Method::Sac { (1, 1.0) } else { (cfg.experts, cfg.beta) };
    let mut ensemble = EnsembleAgent::new(
        n_experts,
        env.obs_dim(),
        env.action_dim(),
        &cfg.hidden,
        cfg.lr,
        cfg.temperature,
        cfg.floor,
        master,
        tag,
    )?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, n_experts, beta)?;
    let hp = SacHp { gamma: cfg.gamma, alpha: cfg.alpha, rho: cfg.rho };

    let mut mask_rng = component_rng(master, &format!("{tag}/mask"));
    let mut warmup_rng = component_rng(master, &format!("{tag}/warmup"));
    let mut rollout_rng = component_rng(master, &format!("{tag}/rollout"));
    let mut update_rng = component_rng(master, &format!("{tag}/update"));

    let dirichlet = Dirichlet::new(&vec![1.0; env.action_dim()])
        .map_err(|e| CoreError::Training(format!("warmup distribution: {e}")))?;

    let mut updates = 0usize;
    let mut env_steps = 0usize;
    let mut epoch_values = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut obs = env.reset();
        loop {
            let action = if buffer.len() < cfg.warmup {
                dirichlet.sample(&mut warmup_rng)
            } else {
                ensemble.act_explore(&obs, &mut rollout_rng)
            };
            let step = env.step(&action).map_err(|e| {
                CoreError::Training(format!("epoch {epoch}, step {env_steps}: {e}"))
            })?;
            env_steps += 1;
            buffer.push(obs, action, step.reward, step.obs.clone(), step.done, &mut mask_rng);

            if buffer.len() >= cfg.warmup {
                let idx = buffer.sample_indices(cfg.batch_size, &mut update_rng);
                let batch = buffer.gather(&idx);
                let stats =
                    ensemble.update(&batch, &hp, &mut update_rng).map_err(|e| {
                        CoreError::Training(format!("update {updates}: {e}"))
                    })?;
                if !stats.is_finite() {
                    bail!(
                        Training,
                        "non-finite loss at update {updates} (critic {}, actor {})",
                        stats.critic_loss,
                        stats.actor_loss
                    );
                }
                updates += 1;
            }

            obs = step.obs;
            if step.done {
                break;
            }
        }
        epoch_values.push(env.value());
    }

    let policy = if method == Method::Sac {
        let Some(expert) = ensemble.experts.pop() else {
            bail!(Training, "ensemble lost its only expert");
        };
        TrainedPolicy::Sac(expert)
    } else {
        TrainedPolicy::Ensemble(ensemble)
    };
    Ok((policy, TrainReport { updates, env_steps, epoch_values }))
}

/// Replay `policy` greedily over `env` and collect the run record.
/// `rng` only matters for the random baseline, which redraws a Dirichlet
/// book every step.
pub fn backtest(
    policy: &TrainedPolicy,
    env: &mut PortfolioEnv<'_>,
    phase: usize,
    seed: u64,
    rng: &mut ChaCha20Rng,
) -> Result<RunRecord> {
    let method = policy.method_name();
    match policy {
        TrainedPolicy::Sac(agent) => {
            run_episode(env, |obs| agent.act_mean(obs), method, phase, seed)
        }
        TrainedPolicy::Ensemble(ens) => {
            run_episode(env, |obs| ens.act_mean(obs), method, phase, seed)
        }
        TrainedPolicy::Random => {
            let dirichlet = Dirichlet::new(&vec![1.0; env.action_dim()])
                .map_err(|e| CoreError::Training(format!("random policy: {e}")))?;
            run_episode(env, |_obs| dirichlet.sample(rng), method, phase, seed)
        }
        TrainedPolicy::MarketAverage => {
            run_episode(env, uniform_policy(env.n_assets()), method, phase, seed)
        }
    }
}
