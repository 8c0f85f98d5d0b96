//! Learning agents for the portfolio MDP.
//!
//! Two trainable methods share one soft actor–critic core ([`sac`]):
//!
//! - `sac` — a single agent: Gaussian actor, twin critics, EMA targets.
//! - `alphamix` — an ensemble of bootstrapped SAC experts ([`ensemble`]).
//!   Every stored transition carries one Bernoulli mask per expert, drawn
//!   at insertion time, so each expert trains on its own bootstrap of the
//!   shared replay buffer. Critic updates are additionally weighted by a
//!   per-sample confidence derived from how much the experts' target
//!   critics disagree.
//!
//! Two more methods exist only as fixed policies: `random` (uniform draws
//! from the simplex) and `market_average` (the uniform book, which anchors
//! every market-relative score downstream).
//!
//! All gradients are analytic — the networks are small enough that the
//! handful of backward formulas is simpler to audit than an autodiff tape,
//! and the tests check every one of them against finite differences.

mod ensemble;
mod sac;
mod train;

pub use ensemble::{confidence_weight, EnsembleAgent};
pub use sac::{
    actor_loss_grads, critic_loss_grads, SacAgent, SacCheckpoint, SacHp,
    UpdateStats,
};
pub use train::{
    backtest, train_agent, PolicyCheckpoint, TrainReport, TrainedPolicy,
};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, CoreError, Result};

/// The four run-producing methods the pipeline knows how to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    AlphaMix,
    Sac,
    Random,
    MarketAverage,
}

impl Method {
    pub const ALL: [Method; 4] =
        [Method::AlphaMix, Method::Sac, Method::Random, Method::MarketAverage];

    pub fn name(self) -> &'static str {
        match self {
            Method::AlphaMix => "alphamix",
            Method::Sac => "sac",
            Method::Random => "random",
            Method::MarketAverage => "market_average",
        }
    }

    /// Whether this method has parameters that training updates.
    pub fn is_trainable(self) -> bool {
        matches!(self, Method::AlphaMix | Method::Sac)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alphamix" => Ok(Method::AlphaMix),
            "sac" => Ok(Method::Sac),
            "random" => Ok(Method::Random),
            "market_average" => Ok(Method::MarketAverage),
            other => Err(CoreError::Validation(format!(
                "unknown method {other:?}; expected one of alphamix, sac, random, market_average"
            ))),
        }
    }
}

/// Agent hyperparameters. The defaults are the reference configuration the
/// whole pipeline is tuned around; individual keys are overridable from the
/// config file (`agent.*`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Hidden layer widths shared by actor and critics.
    pub hidden: Vec<usize>,
    /// Adam learning rate for actor and critics alike.
    pub lr: f64,
    pub gamma: f64,
    /// Entropy temperature in the actor objective.
    pub alpha: f64,
    /// Target-network retention: after each update, targets keep `rho` of
    /// their distance to the online nets.
    pub rho: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Environment steps collected (with random simplex actions) before the
    /// first gradient update.
    pub warmup: usize,
    /// Passes over the training segment.
    pub epochs: usize,
    /// Ensemble size for `alphamix`; `sac` always uses one.
    pub experts: usize,
    /// Bernoulli mask probability for the per-expert bootstrap.
    pub beta: f64,
    /// Sharpness of the disagreement→confidence squash.
    pub temperature: f64,
    /// Confidence floor: weights live in `[floor, floor + 0.5]`.
    pub floor: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![128, 128],
            lr: 7e-4,
            gamma: 0.99,
            alpha: 0.2,
            rho: 0.995,
            batch_size: 256,
            buffer_capacity: 10_000,
            warmup: 10_000,
            epochs: 10,
            experts: 3,
            beta: 0.5,
            temperature: 20.0,
            floor: 0.5,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            bail!(Validation, "agent.hidden must be nonempty positive widths");
        }
        if !(self.lr > 0.0) || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            bail!(Validation, "agent.lr must be positive and agent.gamma in (0, 1]");
        }
        if !(self.alpha >= 0.0) || !(0.0..1.0).contains(&self.rho) {
            bail!(Validation, "agent.alpha must be nonnegative and agent.rho in [0, 1)");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.epochs == 0 {
            bail!(Validation, "agent batch size, buffer capacity and epochs must be positive");
        }
        if self.warmup > self.buffer_capacity {
            bail!(
                Validation,
                "agent.warmup ({}) exceeds the buffer capacity ({}); updates would never start",
                self.warmup,
                self.buffer_capacity
            );
        }
        if self.experts == 0 || !(0.0..=1.0).contains(&self.beta) {
            bail!(Validation, "agent.experts must be ≥ 1 and agent.beta in [0, 1]");
        }
        if !(self.temperature > 0.0) || !(self.floor >= 0.0) {
            bail!(Validation, "agent.temperature must be positive and agent.floor nonnegative");
        }
        Ok(())
    }
}

/// One stored transition. Actions are kept raw (pre-projection) — critics
/// are trained on what the actor actually emitted.
#[derive(Debug, Clone)]
struct Transition {
    obs: Vec<f64>,
    act: Vec<f64>,
    rew: f64,
    next_obs: Vec<f64>,
    done: bool,
    masks: Vec<bool>,
}

/// Fixed-capacity ring buffer of transitions with per-expert bootstrap
/// masks drawn at insertion.
pub struct ReplayBuffer {
    capacity: usize,
    n_experts: usize,
    beta: f64,
    data: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, n_experts: usize, beta: f64) -> Result<Self> {
        if capacity == 0 || n_experts == 0 || !(0.0..=1.0).contains(&beta) {
            bail!(Validation, "replay buffer needs capacity ≥ 1, experts ≥ 1, beta in [0, 1]");
        }
        Ok(ReplayBuffer { capacity, n_experts, beta, data: Vec::new(), cursor: 0 })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(
        &mut self,
        obs: Vec<f64>,
        act: Vec<f64>,
        rew: f64,
        next_obs: Vec<f64>,
        done: bool,
        mask_rng: &mut ChaCha20Rng,
    ) {
        use rand::Rng;
        let masks = (0..self.n_experts).map(|_| mask_rng.gen_bool(self.beta)).collect();
        let t = Transition { obs, act, rew, next_obs, done, masks };
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Uniform sample of `batch` indices, with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
        use rand::Rng;
        (0..batch).map(|_| rng.gen_range(0..self.data.len())).collect()
    }

    /// Materialize the indexed transitions as dense minibatch arrays.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let b = indices.len();
        let (d, a) = (self.data[0].obs.len(), self.data[0].act.len());
        let mut obs = Array2::zeros((b, d));
        let mut act = Array2::zeros((b, a));
        let mut rew = Array1::zeros(b);
        let mut next_obs = Array2::zeros((b, d));
        let mut done = Array1::zeros(b);
        let mut masks = Array2::zeros((b, self.n_experts));
        for (r, &i) in indices.iter().enumerate() {
            let t = &self.data[i];
            for (c, &v) in t.obs.iter().enumerate() {
                obs[[r, c]] = v;
            }
            for (c, &v) in t.act.iter().enumerate() {
                act[[r, c]] = v;
            }
            rew[r] = t.rew;
            for (c, &v) in t.next_obs.iter().enumerate() {
                next_obs[[r, c]] = v;
            }
            done[r] = if t.done { 1.0 } else { 0.0 };
            for e in 0..self.n_experts {
                masks[[r, e]] = if t.masks[e] { 1.0 } else { 0.0 };
            }
        }
        Batch { obs, act, rew, next_obs, done, masks }
    }
}

/// A dense minibatch. `masks` has one column per expert.
pub struct Batch {
    pub obs: Array2<f64>,
    pub act: Array2<f64>,
    pub rew: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub done: Array1<f64>,
    pub masks: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
