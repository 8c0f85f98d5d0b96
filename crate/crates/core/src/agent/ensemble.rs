//! Bootstrapped ensemble of SAC experts with disagreement-weighted
//! critic updates.
//!
//! Each expert is a full [`SacAgent`] with its own actor, twin critics and
//! targets. The pieces that make it an ensemble:
//!
//! - **Bootstrap masks.** Every buffered transition carries one Bernoulli
//!   mask per expert; an expert's critic *and* actor losses average only
//!   over its masked-in rows (`Σ m·ℓ / Σ m`). A batch where an expert draws
//!   no rows skips that expert's gradient steps entirely.
//! - **Confidence weights.** For expert i's update, its sampled next
//!   actions `a′_i` are priced by *every* expert's target critics; the
//!   per-row sample standard deviation of those `min`-twin values measures
//!   ensemble disagreement, and `w = sigmoid(−std·T) + k` scales the critic
//!   loss row-wise: confidently-valued targets teach harder. With one
//!   expert the std is zero by definition and `w ≡ k + ½`, which makes the
//!   whole update collapse to plain SAC with a scaled critic loss — a
//!   reduction the tests pin to the last bit.
//! - **Acting.** Exploration follows one uniformly-drawn expert's sample;
//!   evaluation takes the mean of the experts' mean actions.
//!
//! Target EMA happens once per update, after *all* experts' gradient
//! steps, so every expert's disagreement measure reads the same target
//! snapshot.

use ndarray::Array2;
use rand_chacha::ChaCha20Rng;

use super::sac::{cat_obs_act, SacAgent, SacHp, UpdateStats};
use super::Batch;
use crate::error::{bail, Result};
use crate::seed::component_rng;

/// Disagreement→confidence squash: `sigmoid(−std·temperature) + floor`,
/// monotone decreasing in `std`, range `(floor, floor + ½]`.
pub fn confidence_weight(std: f64, temperature: f64, floor: f64) -> f64 {
    1.0 / (1.0 + (std * temperature).exp()) + floor
}

/// A committee of bootstrapped SAC experts.
pub struct EnsembleAgent {
    pub(crate) experts: Vec<SacAgent>,
    temperature: f64,
    floor: f64,
}

impl EnsembleAgent {
    /// Build `n` experts with independent initializations, each derived
    /// from `(master, "{tag}/init/expert{i}")`.
    pub fn new(
        n: usize,
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        lr: f64,
        temperature: f64,
        floor: f64,
        master: u64,
        tag: &str,
    ) -> Result<Self> {
        if n == 0 {
            bail!(Validation, "ensemble needs at least one expert");
        }
        let mut experts = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = component_rng(master, &format!("{tag}/init/expert{i}"));
            experts.push(SacAgent::new(obs_dim, act_dim, hidden, lr, &mut rng)?);
        }
        Ok(EnsembleAgent { experts, temperature, floor })
    }

    /// Assemble from prebuilt experts (checkpoint restore, tests).
    pub fn from_experts(experts: Vec<SacAgent>, temperature: f64, floor: f64) -> Result<Self> {
        if experts.is_empty() {
            bail!(Validation, "ensemble needs at least one expert");
        }
        Ok(EnsembleAgent { experts, temperature, floor })
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn experts(&self) -> &[SacAgent] {
        &self.experts
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Evaluation action: mean over experts of each actor's mean.
    pub fn act_mean(&self, obs: &[f64]) -> Vec<f64> {
        let n = self.experts.len() as f64;
        let mut avg = vec![0.0; self.experts[0].act_dim()];
        for e in &self.experts {
            for (a, v) in avg.iter_mut().zip(e.act_mean(obs)) {
                *a += v;
            }
        }
        avg.iter().map(|a| a / n).collect()
    }

    /// Exploration action: pick one expert uniformly, sample its Gaussian.
    pub fn act_explore(&self, obs: &[f64], rng: &mut ChaCha20Rng) -> Vec<f64> {
        use rand::Rng;
        let i = rng.gen_range(0..self.experts.len());
        self.experts[i].act_sample(obs, rng)
    }

    /// One ensemble update on a minibatch. Per expert, in index order:
    /// draw `a′_i`, price it under every expert's targets, weight by
    /// confidence, critic steps on the masked rows, actor step on the
    /// masked rows. Afterwards all targets EMA at once. Returns losses
    /// averaged over the experts that actually stepped.
    pub fn update(
        &mut self,
        batch: &Batch,
        hp: &SacHp,
        rng: &mut ChaCha20Rng,
    ) -> Result<UpdateStats> {
        let n = self.experts.len();
        let b = batch.len();
        if batch.masks.ncols() != n {
            bail!(
                Validation,
                "batch carries {} mask columns for {} experts",
                batch.masks.ncols(),
                n
            );
        }
        let mut critic_loss = 0.0;
        let mut actor_loss = 0.0;
        let mut stepped = 0usize;

        for i in 0..n {
            let (y, sa_next) = self.experts[i].bellman_targets(batch, hp, rng)?;

            // every expert's min-twin target value at this expert's a′
            let mut tvals = Array2::zeros((n, b));
            for j in 0..n {
                let q = self.experts[j].min_target(&sa_next);
                for r in 0..b {
                    tvals[[j, r]] = q[r];
                }
            }
            let mut weights = vec![0.0; b];
            for r in 0..b {
                let std = if n == 1 {
                    0.0
                } else {
                    let mean = (0..n).map(|j| tvals[[j, r]]).sum::<f64>() / n as f64;
                    let ss: f64 = (0..n).map(|j| (tvals[[j, r]] - mean).powi(2)).sum();
                    (ss / (n - 1) as f64).sqrt()
                };
                weights[r] = confidence_weight(std, self.temperature, self.floor);
            }

            let mask_sum: f64 = (0..b).map(|r| batch.masks[[r, i]]).sum();
            if mask_sum == 0.0 {
                // this expert drew no rows of the bootstrap; nothing to learn
                continue;
            }
            let sa = cat_obs_act(&batch.obs, &batch.act);
            let ccoeff: Vec<f64> =
                (0..b).map(|r| weights[r] * batch.masks[[r, i]] / mask_sum).collect();
            critic_loss += self.experts[i].critic_step(&sa, &y, &ccoeff)?;
            let acoeff: Vec<f64> = (0..b).map(|r| batch.masks[[r, i]] / mask_sum).collect();
            actor_loss += self.experts[i].actor_step(&batch.obs, &acoeff, hp.alpha, rng)?;
            stepped += 1;
        }

        for e in &mut self.experts {
            e.ema_targets(hp.rho);
        }

        if stepped > 0 {
            critic_loss /= stepped as f64;
            actor_loss /= stepped as f64;
        }
        Ok(UpdateStats { critic_loss, actor_loss })
    }
}
