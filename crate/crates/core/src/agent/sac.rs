//! Soft actor–critic with analytic gradients.
//!
//! One agent is a Gaussian-policy actor, twin Q critics, and EMA target
//! copies of the critics. The update is the standard two-step:
//!
//! - **Critics** regress on `y = r + γ(1−done)(min Q̄(s′,a′) − α log π(a′))`
//!   with `a′` freshly sampled from the actor at `s′`. The squared error is
//!   combined with arbitrary per-row coefficients, which is how the
//!   ensemble layers its confidence weights and bootstrap masks on top of
//!   the same code path.
//! - **Actor** minimizes `α log π(a|s) − min Q(s,a)` with `a = μ + σξ`
//!   reparameterized. Under the reparameterization the log-density of the
//!   drawn action reduces to `Σ(−½ln2π − logσ − ½ξ²)`, so its total
//!   derivative w.r.t. μ is zero and w.r.t. log σ is exactly −1 per
//!   component. What remains flows through the critic:
//!   `g_μ = −∂Qmin/∂a` and `g_logσ = −α − (∂Qmin/∂a)⊙σ⊙ξ`.
//!
//! Every formula above is checked against finite differences in the tests.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{Adam, AdamCheckpoint, GaussianHead, Grads, Mlp, MlpCheckpoint};

/// The slice of [`super::AgentConfig`] the update equations actually use.
#[derive(Debug, Clone, Copy)]
pub struct SacHp {
    pub gamma: f64,
    pub alpha: f64,
    pub rho: f64,
}

/// Losses of one gradient step, for logging and divergence detection.
#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

impl UpdateStats {
    pub fn is_finite(&self) -> bool {
        self.critic_loss.is_finite() && self.actor_loss.is_finite()
    }
}

/// One soft actor–critic learner (also the expert unit of the ensemble).
pub struct SacAgent {
    pub(crate) actor: Mlp,
    pub(crate) c1: Mlp,
    pub(crate) c2: Mlp,
    pub(crate) t1: Mlp,
    pub(crate) t2: Mlp,
    pub(crate) actor_opt: Adam,
    pub(crate) c1_opt: Adam,
    pub(crate) c2_opt: Adam,
}

impl SacAgent {
    /// Fresh agent; consumes the rng in a fixed order (actor, critic 1,
    /// critic 2), targets start as exact copies of the critics.
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        lr: f64,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self> {
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(2 * act_dim);
        let mut critic_sizes = vec![obs_dim + act_dim];
        critic_sizes.extend_from_slice(hidden);
        critic_sizes.push(1);
        let actor = Mlp::init(&actor_sizes, rng)?;
        let c1 = Mlp::init(&critic_sizes, rng)?;
        let c2 = Mlp::init(&critic_sizes, rng)?;
        let t1 = c1.clone();
        let t2 = c2.clone();
        let actor_opt = Adam::new(&actor, lr);
        let c1_opt = Adam::new(&c1, lr);
        let c2_opt = Adam::new(&c2, lr);
        Ok(SacAgent { actor, c1, c2, t1, t2, actor_opt, c1_opt, c2_opt })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.output_dim() / 2
    }

    /// Deterministic action: the Gaussian mean.
    pub fn act_mean(&self, obs: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row vector");
        let head = GaussianHead::from_raw(&self.actor.forward(&x))
            .expect("actor output width is even by construction");
        head.mean.row(0).to_vec()
    }

    /// Stochastic action: one reparameterized draw.
    pub fn act_sample(&self, obs: &[f64], rng: &mut ChaCha20Rng) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row vector");
        let head = GaussianHead::from_raw(&self.actor.forward(&x))
            .expect("actor output width is even by construction");
        head.sample(rng).actions.row(0).to_vec()
    }

    /// `min(Q̄₁, Q̄₂)` of the target critics, per row of `sa`.
    pub(crate) fn min_target(&self, sa: &Array2<f64>) -> Array1<f64> {
        let q1 = self.t1.forward(sa);
        let q2 = self.t2.forward(sa);
        Array1::from_iter((0..sa.nrows()).map(|r| q1[[r, 0]].min(q2[[r, 0]])))
    }

    /// Bellman targets for this agent's critics: sample `a′` from the own
    /// actor at `s′` (consuming `rng`), bootstrap through the own target
    /// critics. Also returns the state-action matrix of the `a′` draw so an
    /// ensemble can evaluate *other* experts' targets at the same points.
    pub(crate) fn bellman_targets(
        &self,
        batch: &super::Batch,
        hp: &SacHp,
        rng: &mut ChaCha20Rng,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let head = GaussianHead::from_raw(&self.actor.forward(&batch.next_obs))?;
        let sample = head.sample(rng);
        let logp = head.log_prob(&sample.actions);
        let sa_next = cat_obs_act(&batch.next_obs, &sample.actions);
        let qmin = self.min_target(&sa_next);
        let b = batch.len();
        let mut y = Array1::zeros(b);
        for r in 0..b {
            let v = qmin[r] - hp.alpha * logp[r];
            y[r] = batch.rew[r] + hp.gamma * (1.0 - batch.done[r]) * v;
        }
        Ok((y, sa_next))
    }

    /// One Adam step on both twins with per-row loss coefficients:
    /// `L_t = Σ_r coeff_r (Q_t(s,a)_r − y_r)²`. Returns the summed loss of
    /// the two twins, evaluated before the step.
    pub(crate) fn critic_step(
        &mut self,
        sa: &Array2<f64>,
        y: &Array1<f64>,
        coeff: &[f64],
    ) -> Result<f64> {
        let (l1, g1) = critic_loss_grads(&self.c1, sa, y, coeff);
        self.c1_opt.step(&mut self.c1, &g1)?;
        let (l2, g2) = critic_loss_grads(&self.c2, sa, y, coeff);
        self.c2_opt.step(&mut self.c2, &g2)?;
        Ok(l1 + l2)
    }

    /// One Adam step on the actor with per-row coefficients; draws the
    /// reparameterization noise from `rng`. Returns the loss before the step.
    pub(crate) fn actor_step(
        &mut self,
        obs: &Array2<f64>,
        coeff: &[f64],
        alpha: f64,
        rng: &mut ChaCha20Rng,
    ) -> Result<f64> {
        let noise = draw_noise(rng, obs.nrows(), self.act_dim());
        let (loss, grads) =
            actor_loss_grads(&self.actor, &self.c1, &self.c2, obs, &noise, coeff, alpha)?;
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(loss)
    }

    pub(crate) fn ema_targets(&mut self, rho: f64) {
        self.t1.ema_toward(&self.c1, rho);
        self.t2.ema_toward(&self.c2, rho);
    }

    /// The full plain-SAC update on one minibatch: critics toward the
    /// Bellman target, actor against the fresh critics, then target EMA.
    /// `critic_scale` multiplies the critic loss only. The training loop
    /// reaches SAC through a one-expert ensemble instead; this reference
    /// path exists so the reduction can be checked against it.
    pub fn update(
        &mut self,
        batch: &super::Batch,
        hp: &SacHp,
        critic_scale: f64,
        rng: &mut ChaCha20Rng,
    ) -> Result<UpdateStats> {
        let b = batch.len();
        let (y, _) = self.bellman_targets(batch, hp, rng)?;
        let sa = cat_obs_act(&batch.obs, &batch.act);
        let ccoeff = vec![critic_scale / b as f64; b];
        let critic_loss = self.critic_step(&sa, &y, &ccoeff)?;
        let acoeff = vec![1.0 / b as f64; b];
        let actor_loss = self.actor_step(&batch.obs, &acoeff, hp.alpha, rng)?;
        self.ema_targets(hp.rho);
        Ok(UpdateStats { critic_loss, actor_loss })
    }

    pub fn checkpoint(&self) -> SacCheckpoint {
        SacCheckpoint {
            actor: self.actor.checkpoint(),
            c1: self.c1.checkpoint(),
            c2: self.c2.checkpoint(),
            t1: self.t1.checkpoint(),
            t2: self.t2.checkpoint(),
            actor_opt: self.actor_opt.checkpoint(),
            c1_opt: self.c1_opt.checkpoint(),
            c2_opt: self.c2_opt.checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &SacCheckpoint) -> Result<Self> {
        let actor = Mlp::from_checkpoint(&ck.actor)?;
        let c1 = Mlp::from_checkpoint(&ck.c1)?;
        let c2 = Mlp::from_checkpoint(&ck.c2)?;
        let t1 = Mlp::from_checkpoint(&ck.t1)?;
        let t2 = Mlp::from_checkpoint(&ck.t2)?;
        let actor_opt = Adam::from_checkpoint(&ck.actor_opt, &actor)?;
        let c1_opt = Adam::from_checkpoint(&ck.c1_opt, &c1)?;
        let c2_opt = Adam::from_checkpoint(&ck.c2_opt, &c2)?;
        Ok(SacAgent { actor, c1, c2, t1, t2, actor_opt, c1_opt, c2_opt })
    }
}

/// Full state of one agent, JSON-serializable and bit-exact on reload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SacCheckpoint {
    pub actor: MlpCheckpoint,
    pub c1: MlpCheckpoint,
    pub c2: MlpCheckpoint,
    pub t1: MlpCheckpoint,
    pub t2: MlpCheckpoint,
    pub actor_opt: AdamCheckpoint,
    pub c1_opt: AdamCheckpoint,
    pub c2_opt: AdamCheckpoint,
}

/// `[obs | act]` rows for critic input.
pub(crate) fn cat_obs_act(obs: &Array2<f64>, act: &Array2<f64>) -> Array2<f64> {
    let (b, d, a) = (obs.nrows(), obs.ncols(), act.ncols());
    let mut sa = Array2::zeros((b, d + a));
    for r in 0..b {
        for c in 0..d {
            sa[[r, c]] = obs[[r, c]];
        }
        for c in 0..a {
            sa[[r, d + c]] = act[[r, c]];
        }
    }
    sa
}

/// Standard-normal noise drawn row-major — the same order
/// [`GaussianHead::sample`] consumes, so streams stay aligned.
pub(crate) fn draw_noise(rng: &mut ChaCha20Rng, b: usize, a: usize) -> Array2<f64> {
    use rand::Rng;
    let mut noise = Vec::with_capacity(b * a);
    for _ in 0..b * a {
        noise.push(rng.sample::<f64, _>(StandardNormal));
    }
    Array2::from_shape_vec((b, a), noise).expect("shape matches fill")
}

/// Loss and parameter gradients of `Σ_r coeff_r (Q(sa_r) − y_r)²`.
pub fn critic_loss_grads(
    critic: &Mlp,
    sa: &Array2<f64>,
    y: &Array1<f64>,
    coeff: &[f64],
) -> (f64, Grads) {
    let (q, cache) = critic.forward_cached(sa);
    let b = sa.nrows();
    let mut loss = 0.0;
    let mut gout = Array2::zeros((b, 1));
    for r in 0..b {
        let res = q[[r, 0]] - y[r];
        loss += coeff[r] * res * res;
        gout[[r, 0]] = 2.0 * coeff[r] * res;
    }
    let (grads, _) = critic.backward(&cache, &gout);
    (loss, grads)
}

/// Loss and actor-parameter gradients of
/// `Σ_r coeff_r (α log π(a_r|s_r) − min(Q₁,Q₂)(s_r, a_r))` with
/// `a = μ + σ⊙ξ` for the given noise. Critic parameters are read, not
/// updated; per row the gradient flows through whichever twin attains the
/// min (ties go to the first).
pub fn actor_loss_grads(
    actor: &Mlp,
    c1: &Mlp,
    c2: &Mlp,
    obs: &Array2<f64>,
    noise: &Array2<f64>,
    coeff: &[f64],
    alpha: f64,
) -> Result<(f64, Grads)> {
    let (raw, cache) = actor.forward_cached(obs);
    let head = GaussianHead::from_raw(&raw)?;
    let (b, a) = (obs.nrows(), head.action_dim());

    let mut actions = head.mean.clone();
    for r in 0..b {
        for c in 0..a {
            actions[[r, c]] += head.log_std[[r, c]].exp() * noise[[r, c]];
        }
    }
    let logp = head.log_prob(&actions);

    let sa = cat_obs_act(obs, &actions);
    let (q1, cache1) = c1.forward_cached(&sa);
    let (q2, cache2) = c2.forward_cached(&sa);

    // route each row's gradient through the twin that attains the min
    let mut pick1 = Array2::zeros((b, 1));
    let mut pick2 = Array2::zeros((b, 1));
    let mut loss = 0.0;
    for r in 0..b {
        let qmin = if q1[[r, 0]] <= q2[[r, 0]] {
            pick1[[r, 0]] = 1.0;
            q1[[r, 0]]
        } else {
            pick2[[r, 0]] = 1.0;
            q2[[r, 0]]
        };
        loss += coeff[r] * (alpha * logp[r] - qmin);
    }
    let (_, gin1) = c1.backward(&cache1, &pick1);
    let (_, gin2) = c2.backward(&cache2, &pick2);

    let d = obs.ncols();
    let mut g_mean = Array2::zeros((b, a));
    let mut g_log_std = Array2::zeros((b, a));
    for r in 0..b {
        for c in 0..a {
            // exactly one of the two input-gradients is nonzero per row
            let dq_da = gin1[[r, d + c]] + gin2[[r, d + c]];
            let sigma_xi = head.log_std[[r, c]].exp() * noise[[r, c]];
            g_mean[[r, c]] = coeff[r] * (-dq_da);
            g_log_std[[r, c]] = coeff[r] * (-alpha - dq_da * sigma_xi);
        }
    }
    let gout = head.grads_to_raw(&g_mean, &g_log_std);
    let (grads, _) = actor.backward(&cache, &gout);
    Ok((loss, grads))
}
