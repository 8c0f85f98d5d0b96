//! The portfolio MDP: hold a simplex of weights over cash + M assets, step
//! through a calendar segment, get paid the change in account value.
//!
//! Accounting per step, in order:
//!
//! 1. the raw action is projected to portfolio weights `w` (cash is index 0),
//! 2. turnover against the previous weights is charged at the commission
//!    rate: `cost = c · v_t · Σ_{i≥1} |w_i − w_prev_i|`,
//! 3. the remaining value rides the close-to-close price relatives:
//!    `v_{t+1} = (v_t − cost) · (w_0 + Σ_{i≥1} w_i · p_{t+1,i}/p_{t,i})`,
//! 4. reward is the plain difference `v_{t+1} − v_t`.
//!
//! The difference form makes episode rewards telescope: summed exactly they
//! equal `v_H − v_0` (per-step moves are well inside the 2× band where
//! floating-point subtraction of nearby values is exact, and the tests hold
//! the sum to *zero* error, not a tolerance).
//!
//! Observations stack the last `stack` feature frames (oldest first, assets
//! major within a frame) and append the previous cash weight and the account
//! value relative to its start — `M·11·stack + 2` numbers.

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::market::{AssetPanel, FeaturePanel};

/// Stationary parameters of the environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Proportional transaction cost on turnover, per unit traded value.
    pub commission: f64,
    /// Account value at reset.
    pub initial_value: f64,
    /// Number of feature frames stacked into one observation.
    pub stack: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { commission: 0.0, initial_value: 100.0, stack: 3 }
    }
}

/// Map a raw action vector to portfolio weights on the simplex.
///
/// Vectors that already are weights — nonnegative, summing to one within
/// 1e-6 — are only renormalized, so handing the environment a valid
/// portfolio is (numerically) a fixed point. Anything else goes through a
/// max-shifted softmax.
pub fn project_action(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.iter().any(|x| !x.is_finite()) {
        bail!(Domain, "action contains a non-finite component");
    }
    let sum: f64 = raw.iter().sum();
    if raw.iter().all(|&x| x >= 0.0) && (sum - 1.0).abs() <= 1e-6 {
        return Ok(raw.iter().map(|&x| x / sum).collect());
    }
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| e / z).collect())
}

/// One accounting step. `weights` must already be on the simplex with cash
/// at index 0; `closes_t`/`closes_t1` are the M asset closes at the current
/// and next calendar position. `prev_weights = None` waives the turnover
/// charge. Returns `(next_value, reward)`.
pub fn value_step(
    value: f64,
    weights: &[f64],
    closes_t: ArrayView1<'_, f64>,
    closes_t1: ArrayView1<'_, f64>,
    commission: f64,
    prev_weights: Option<&[f64]>,
) -> (f64, f64) {
    debug_assert_eq!(weights.len(), closes_t.len() + 1);
    let turnover: f64 = match prev_weights {
        Some(prev) => weights[1..]
            .iter()
            .zip(&prev[1..])
            .map(|(w, p)| (w - p).abs())
            .sum(),
        None => 0.0,
    };
    let after_cost = value - commission * value * turnover;
    let mut growth = weights[0]; // cash holds its value
    for i in 0..closes_t.len() {
        growth += weights[i + 1] * closes_t1[i] / closes_t[i];
    }
    let next = after_cost * growth;
    (next, next - value)
}

/// What [`PortfolioEnv::step`] hands back.
#[derive(Debug, Clone)]
pub struct Step {
    /// Observation at the new position (valid even on the terminal step).
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// The projected weights the step actually traded.
    pub weights: Vec<f64>,
    /// Account value after the step.
    pub value: f64,
}

/// A trading episode over one calendar segment of one market.
pub struct PortfolioEnv<'a> {
    features: &'a FeaturePanel,
    closes: Array2<f64>, // [time, asset]
    calendar: Vec<NaiveDate>,
    segment: (usize, usize),
    cfg: EnvConfig,
    t0: usize,
    t: usize,
    value: f64,
    prev_weights: Vec<f64>,
    done: bool,
}

impl<'a> PortfolioEnv<'a> {
    /// `segment` is a half-open calendar index range `[start, end)`. The
    /// first decision happens once `stack` frames clear both the segment
    /// start and the feature warmup; the last price used is at `end − 1`.
    pub fn new(
        features: &'a FeaturePanel,
        panel: &AssetPanel,
        segment: (usize, usize),
        cfg: EnvConfig,
    ) -> Result<Self> {
        if features.norm().is_none() {
            bail!(Validation, "environment needs a normalized feature panel");
        }
        if features.n_assets() != panel.n_assets() || features.len() != panel.len() {
            bail!(
                Validation,
                "feature panel ({}×{}) does not match asset panel ({}×{})",
                features.n_assets(),
                features.len(),
                panel.n_assets(),
                panel.len()
            );
        }
        if segment.1 > panel.len() || segment.0 >= segment.1 {
            bail!(Validation, "segment {}..{} out of bounds", segment.0, segment.1);
        }
        if !(0.0..0.5).contains(&cfg.commission) {
            bail!(Validation, "commission must be in [0, 0.5), got {}", cfg.commission);
        }
        if !(cfg.initial_value > 0.0) || cfg.stack == 0 {
            bail!(Validation, "initial value must be positive and stack nonzero");
        }
        let t0 = segment.0.max(features.warmup()) + cfg.stack - 1;
        if t0 + 1 >= segment.1 {
            bail!(
                Validation,
                "segment {}..{} leaves no steps after warmup and frame stacking",
                segment.0,
                segment.1
            );
        }
        let closes = panel.closes();
        Ok(PortfolioEnv {
            features,
            closes,
            calendar: panel.calendar().to_vec(),
            segment,
            t0,
            t: t0,
            value: cfg.initial_value,
            prev_weights: all_cash(panel.n_assets()),
            done: false,
            cfg,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.features.n_assets()
    }

    /// Observation length: `assets × features × stack + 2`.
    pub fn obs_dim(&self) -> usize {
        self.n_assets() * self.features.n_features() * self.cfg.stack + 2
    }

    /// Action length: one weight per asset plus cash.
    pub fn action_dim(&self) -> usize {
        self.n_assets() + 1
    }

    /// Number of decisions in one episode.
    pub fn horizon(&self) -> usize {
        self.segment.1 - 1 - self.t0
    }

    /// Calendar date at decision index `k` (0 = reset position).
    pub fn date_at(&self, k: usize) -> NaiveDate {
        self.calendar[self.t0 + k]
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Restart the episode: all-cash book, fresh account, first observation.
    pub fn reset(&mut self) -> Vec<f64> {
        self.t = self.t0;
        self.value = self.cfg.initial_value;
        self.prev_weights = all_cash(self.n_assets());
        self.done = false;
        self.observation()
    }

    /// Trade one step with a raw action. Errors if the episode is over or
    /// if the action is malformed.
    pub fn step(&mut self, raw_action: &[f64]) -> Result<Step> {
        if self.done {
            bail!(Validation, "episode is over; call reset() first");
        }
        if raw_action.len() != self.action_dim() {
            bail!(
                Validation,
                "action has {} components, environment needs {}",
                raw_action.len(),
                self.action_dim()
            );
        }
        let weights = project_action(raw_action)?;
        let (next_value, reward) = value_step(
            self.value,
            &weights,
            self.closes.row(self.t),
            self.closes.row(self.t + 1),
            self.cfg.commission,
            Some(&self.prev_weights),
        );
        self.value = next_value;
        self.prev_weights = weights.clone();
        self.t += 1;
        self.done = self.t == self.segment.1 - 1;
        Ok(Step { obs: self.observation(), reward, done: self.done, weights, value: next_value })
    }

    fn observation(&self) -> Vec<f64> {
        let (m, f) = (self.features.n_assets(), self.features.n_features());
        let mut obs = Vec::with_capacity(m * f * self.cfg.stack + 2);
        for tau in self.t + 1 - self.cfg.stack..=self.t {
            for a in 0..m {
                obs.extend(self.features.row(a, tau).iter());
            }
        }
        obs.push(self.prev_weights[0]);
        obs.push(self.value / self.cfg.initial_value);
        obs
    }
}

fn all_cash(n_assets: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_assets + 1];
    w[0] = 1.0;
    w
}

/// Everything the evaluation side needs to know about one finished episode.
/// `equity` has one more entry than `returns` and `weights`; `dates` aligns
/// with `equity`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub method: String,
    pub market: String,
    pub phase: usize,
    pub seed: u64,
    pub dates: Vec<NaiveDate>,
    pub equity: Vec<f64>,
    /// Per-step simple returns of the equity curve.
    pub returns: Vec<f64>,
    /// Traded weights per step, cash first (`horizon × (M+1)` rows).
    pub weights: Vec<Vec<f64>>,
}

impl RunRecord {
    pub fn horizon(&self) -> usize {
        self.returns.len()
    }

    /// Internal consistency: length relations, finite equity, simplex rows.
    pub fn validate(&self) -> Result<()> {
        let h = self.returns.len();
        if self.equity.len() != h + 1 || self.dates.len() != h + 1 || self.weights.len() != h {
            bail!(
                Schema,
                "run {}/{}/phase{}/seed{}: inconsistent lengths (equity {}, dates {}, returns {}, weights {})",
                self.method,
                self.market,
                self.phase,
                self.seed,
                self.equity.len(),
                self.dates.len(),
                h,
                self.weights.len()
            );
        }
        if h == 0 {
            bail!(Schema, "run has an empty horizon");
        }
        if self.equity.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            bail!(Validation, "equity curve must stay positive and finite");
        }
        for row in &self.weights {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&w| !(w >= -1e-9)) || (sum - 1.0).abs() > 1e-6 {
                bail!(Validation, "weight row off the simplex (sum {sum})");
            }
        }
        Ok(())
    }
}

/// Drive one full episode with `policy` (a map from observation to raw
/// action) and collect the record.
pub fn run_episode(
    env: &mut PortfolioEnv<'_>,
    mut policy: impl FnMut(&[f64]) -> Vec<f64>,
    method: &str,
    phase: usize,
    seed: u64,
) -> Result<RunRecord> {
    let mut obs = env.reset();
    let h = env.horizon();
    let mut equity = Vec::with_capacity(h + 1);
    let mut returns = Vec::with_capacity(h);
    let mut weights = Vec::with_capacity(h);
    equity.push(env.value());
    loop {
        let step = env.step(&policy(&obs))?;
        let prev = *equity.last().unwrap();
        equity.push(step.value);
        returns.push(step.value / prev - 1.0);
        weights.push(step.weights);
        obs = step.obs;
        if step.done {
            break;
        }
    }
    let dates = (0..=h).map(|k| env.date_at(k)).collect();
    let record = RunRecord {
        method: method.to_string(),
        market: env.features.market().to_string(),
        phase,
        seed,
        dates,
        equity,
        returns,
        weights,
    };
    record.validate()?;
    Ok(record)
}

/// The fixed uniform book `1/(M+1)` on every component including cash —
/// the reference line every score in the pipeline is measured against.
pub fn uniform_policy(n_assets: usize) -> impl FnMut(&[f64]) -> Vec<f64> {
    move |_obs| vec![1.0 / (n_assets + 1) as f64; n_assets + 1]
}
