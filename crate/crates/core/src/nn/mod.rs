//! Function approximators: a plain dense MLP with sigmoid hidden units and a
//! linear output layer, reverse-mode gradients, and bias-corrected Adam.
//!
//! Everything is `f64` and batch-first: activations are `[batch, width]`
//! matrices, a weight layer is `[fan_in, fan_out]`, and the matmuls go
//! through ndarray (which dispatches to SIMD kernels at runtime). None of
//! the deep-learning frameworks earn their footprint here: the networks are
//! two hidden layers of 128 units and the training loop wants deterministic,
//! checkpointable arithmetic more than it wants speed.
//!
//! Gradient convention: [`Mlp::backward`] maps `dL/d(output)` to
//! `dL/d(params)` and `dL/d(input)`. Any `1/batch` averaging belongs to the
//! caller's output gradient, not to this module.

pub mod gaussian;

pub use gaussian::GaussianHead;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

use crate::error::{bail, CoreError, Result};

/// Dense multi-layer perceptron. `sizes = [in, h1, ..., out]`; hidden layers
/// apply the logistic sigmoid, the output layer is affine.
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Activations saved by [`Mlp::forward_cached`] for the backward pass:
/// the input batch plus each hidden layer's post-sigmoid output.
#[derive(Debug, Clone)]
pub struct Cache {
    input: Array2<f64>,
    hidden: Vec<Array2<f64>>,
}

/// Parameter-shaped gradient (or moment) buffers, one entry per layer.
#[derive(Debug, Clone)]
pub struct Grads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Mlp {
    /// Fresh network with weights and biases drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` — the usual fan-in scaling that
    /// keeps sigmoid pre-activations in their responsive range at init.
    pub fn init(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 {
            bail!(Validation, "mlp needs at least input and output sizes, got {sizes:?}");
        }
        if sizes.iter().any(|&s| s == 0) {
            bail!(Validation, "mlp layer sizes must be positive, got {sizes:?}");
        }
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            // Row-major fill order is part of the determinism contract: the
            // same seed must yield the same network on every platform.
            let mut w = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in * fan_out {
                w.push(rng.gen_range(-bound..bound));
            }
            let mut b = Vec::with_capacity(fan_out);
            for _ in 0..fan_out {
                b.push(rng.gen_range(-bound..bound));
            }
            weights.push(
                Array2::from_shape_vec((fan_in, fan_out), w).expect("shape matches fill"),
            );
            biases.push(Array1::from_vec(b));
        }
        Ok(Mlp { sizes: sizes.to_vec(), weights, biases })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated nonempty")
    }

    /// Total scalar parameters (weights + biases across layers).
    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.run(x).0
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, Cache) {
        let (out, hidden) = self.run(x);
        (out, Cache { input: x.clone(), hidden })
    }

    fn run(&self, x: &Array2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        assert_eq!(x.ncols(), self.sizes[0], "input width mismatch");
        let last = self.weights.len() - 1;
        let mut hidden = Vec::with_capacity(last);
        let mut a = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(w) + b;
            if l < last {
                z.mapv_inplace(sigmoid);
                hidden.push(z.clone());
            }
            a = z;
        }
        (a, hidden)
    }

    /// Reverse-mode pass. `gout` is `dL/d(output)` for the batch that
    /// produced `cache`; returns parameter gradients and `dL/d(input)`.
    pub fn backward(&self, cache: &Cache, gout: &Array2<f64>) -> (Grads, Array2<f64>) {
        let n = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); n];
        let mut gb = vec![Array1::zeros(0); n];
        let mut g = gout.clone();
        for l in (0..n).rev() {
            let a_prev = if l == 0 { &cache.input } else { &cache.hidden[l - 1] };
            gw[l] = a_prev.t().dot(&g);
            gb[l] = g.sum_axis(Axis(0));
            g = g.dot(&self.weights[l].t());
            if l > 0 {
                // σ'(z) = a(1-a) in terms of the cached post-activation.
                Zip::from(&mut g).and(a_prev).for_each(|gi, &a| *gi *= a * (1.0 - a));
            }
        }
        (Grads { weights: gw, biases: gb }, g)
    }

    /// EMA tracking toward `source`, written as `θ̄ ← θ + ρ(θ̄ − θ)` so the
    /// gap to the source contracts by exactly ρ per call.
    pub fn ema_toward(&mut self, source: &Mlp, rho: f64) {
        for (t, s) in self.weights.iter_mut().zip(&source.weights) {
            Zip::from(t).and(s).for_each(|t, &s| *t = s + rho * (*t - s));
        }
        for (t, s) in self.biases.iter_mut().zip(&source.biases) {
            Zip::from(t).and(s).for_each(|t, &s| *t = s + rho * (*t - s));
        }
    }

    /// Parameters flattened in checkpoint order (per layer: weights
    /// row-major, then bias). The finite-difference tests key on this.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length mismatch");
        let mut it = flat.iter();
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for v in w.iter_mut() {
                *v = *it.next().expect("length checked");
            }
            for v in b.iter_mut() {
                *v = *it.next().expect("length checked");
            }
        }
    }

    pub fn checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            sizes: self.sizes.clone(),
            weights: self.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: self.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }

    pub fn from_checkpoint(ck: &MlpCheckpoint) -> Result<Self> {
        if ck.sizes.len() < 2 || ck.weights.len() != ck.sizes.len() - 1 || ck.biases.len() != ck.sizes.len() - 1 {
            bail!(Schema, "checkpoint layer counts inconsistent with sizes {:?}", ck.sizes);
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in ck.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            if ck.weights[l].len() != fan_in * fan_out || ck.biases[l].len() != fan_out {
                bail!(Schema, "checkpoint layer {l} has wrong element count");
            }
            weights.push(
                Array2::from_shape_vec((fan_in, fan_out), ck.weights[l].clone())
                    .expect("length checked"),
            );
            biases.push(Array1::from_vec(ck.biases[l].clone()));
        }
        Ok(Mlp { sizes: ck.sizes.clone(), weights, biases })
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Grads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Grads {
            weights: mlp.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: mlp.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| v * c);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v * c);
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Flattened in the same order as [`Mlp::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

/// Adam with the standard bias correction (Kingma & Ba defaults for the
/// moment decays; the learning rate comes from config).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(mlp: &Mlp, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Grads::zeros_like(mlp),
            v: Grads::zeros_like(mlp),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Rejects non-finite gradients without touching any state,
    /// so a caller can checkpoint the last good parameters and abort.
    pub fn step(&mut self, params: &mut Mlp, grads: &Grads) -> Result<()> {
        if !grads.is_finite() {
            bail!(Domain, "non-finite gradient rejected at adam step {}", self.step + 1);
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.lr;
        let eps = self.eps;
        for l in 0..params.weights.len() {
            Zip::from(&mut params.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .and(&grads.weights[l])
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
            Zip::from(&mut params.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .and(&grads.biases[l])
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> AdamCheckpoint {
        AdamCheckpoint {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            step: self.step,
            m_weights: self.m.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            m_biases: self.m.biases.iter().map(|b| b.to_vec()).collect(),
            v_weights: self.v.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            v_biases: self.v.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }

    pub fn from_checkpoint(ck: &AdamCheckpoint, mlp: &Mlp) -> Result<Self> {
        let mut adam = Adam::new(mlp, ck.lr);
        adam.beta1 = ck.beta1;
        adam.beta2 = ck.beta2;
        adam.eps = ck.eps;
        adam.step = ck.step;
        let restore2 = |dst: &mut Vec<Array2<f64>>, src: &Vec<Vec<f64>>| -> Result<()> {
            for (d, s) in dst.iter_mut().zip(src) {
                if d.len() != s.len() {
                    return Err(CoreError::Schema("adam moment shape mismatch".into()));
                }
                *d = Array2::from_shape_vec(d.raw_dim(), s.clone()).expect("length checked");
            }
            Ok(())
        };
        let restore1 = |dst: &mut Vec<Array1<f64>>, src: &Vec<Vec<f64>>| -> Result<()> {
            for (d, s) in dst.iter_mut().zip(src) {
                if d.len() != s.len() {
                    return Err(CoreError::Schema("adam moment shape mismatch".into()));
                }
                *d = Array1::from_vec(s.clone());
            }
            Ok(())
        };
        if ck.m_weights.len() != adam.m.weights.len() {
            bail!(Schema, "adam checkpoint layer count mismatch");
        }
        restore2(&mut adam.m.weights, &ck.m_weights)?;
        restore1(&mut adam.m.biases, &ck.m_biases)?;
        restore2(&mut adam.v.weights, &ck.v_weights)?;
        restore1(&mut adam.v.biases, &ck.v_biases)?;
        Ok(adam)
    }
}

/// Flat JSON image of an [`Mlp`]: layer sizes plus per-layer flattened
/// (row-major) weights and biases. Stable field order, so serialized
/// checkpoints are byte-reproducible.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MlpCheckpoint {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Adam state in the same flat layout as [`MlpCheckpoint`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AdamCheckpoint {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m_weights: Vec<Vec<f64>>,
    pub m_biases: Vec<Vec<f64>>,
    pub v_weights: Vec<Vec<f64>>,
    pub v_biases: Vec<Vec<f64>>,
}
