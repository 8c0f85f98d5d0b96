//! Diagonal-Gaussian policy head on top of an [`Mlp`](super::Mlp).
//!
//! The actor network emits `2A` values per state: the first `A` are the mean,
//! the last `A` the log standard deviation, clamped to `[-20, 2]` before use.
//! Sampling is reparameterized (`u = μ + σ·ξ`, `ξ ~ N(0, I)`) so gradients
//! flow through samples; the clamp gates log-std gradients to zero where it
//! is active, matching how the clamp behaves in the loss itself.

use ndarray::{Array1, Array2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{bail, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453; // ln(2π)

/// Mean / clamped log-std split of one actor forward pass, plus the clamp
/// gate needed to push gradients back into the raw network output.
#[derive(Debug, Clone)]
pub struct GaussianHead {
    pub mean: Array2<f64>,
    pub log_std: Array2<f64>,
    gate: Array2<f64>,
}

/// A reparameterized draw: the actions and the standard-normal noise that
/// produced them (kept so losses can be re-expressed in terms of ξ).
#[derive(Debug, Clone)]
pub struct Sample {
    pub actions: Array2<f64>,
    pub noise: Array2<f64>,
}

impl GaussianHead {
    /// Split a raw `[batch, 2A]` network output into the two heads.
    pub fn from_raw(raw: &Array2<f64>) -> Result<Self> {
        let cols = raw.ncols();
        if cols == 0 || cols % 2 != 0 {
            bail!(Validation, "gaussian head needs an even output width, got {cols}");
        }
        let a = cols / 2;
        let mean = raw.slice(ndarray::s![.., ..a]).to_owned();
        let pre = raw.slice(ndarray::s![.., a..]).to_owned();
        let log_std = pre.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let gate = pre.mapv(|v| if v > LOG_STD_MIN && v < LOG_STD_MAX { 1.0 } else { 0.0 });
        Ok(GaussianHead { mean, log_std, gate })
    }

    pub fn action_dim(&self) -> usize {
        self.mean.ncols()
    }

    /// Reparameterized sample. Noise is drawn element-by-element in row-major
    /// order so a given rng stream always yields the same draw.
    pub fn sample(&self, rng: &mut impl Rng) -> Sample {
        let (b, a) = (self.mean.nrows(), self.mean.ncols());
        let mut noise = Vec::with_capacity(b * a);
        for _ in 0..b * a {
            noise.push(rng.sample::<f64, _>(StandardNormal));
        }
        let noise = Array2::from_shape_vec((b, a), noise).expect("shape matches fill");
        let mut actions = self.mean.clone();
        Zip::from(&mut actions)
            .and(&self.log_std)
            .and(&noise)
            .for_each(|u, &ls, &xi| *u += ls.exp() * xi);
        Sample { actions, noise }
    }

    /// Per-row log density of `actions` under this head's diagonal Gaussian.
    pub fn log_prob(&self, actions: &Array2<f64>) -> Array1<f64> {
        let b = self.mean.nrows();
        let mut out = Array1::zeros(b);
        for r in 0..b {
            let mut lp = 0.0;
            for c in 0..self.mean.ncols() {
                let ls = self.log_std[[r, c]];
                let z = (actions[[r, c]] - self.mean[[r, c]]) / ls.exp();
                lp += -0.5 * LN_2PI - ls - 0.5 * z * z;
            }
            out[r] = lp;
        }
        out
    }

    /// Assemble `dL/d(raw output)` from gradients on the two heads. The
    /// log-std half passes through the clamp gate.
    pub fn grads_to_raw(&self, g_mean: &Array2<f64>, g_log_std: &Array2<f64>) -> Array2<f64> {
        let (b, a) = (self.mean.nrows(), self.mean.ncols());
        let mut raw = Array2::zeros((b, 2 * a));
        for r in 0..b {
            for c in 0..a {
                raw[[r, c]] = g_mean[[r, c]];
                raw[[r, a + c]] = g_log_std[[r, c]] * self.gate[[r, c]];
            }
        }
        raw
    }
}
