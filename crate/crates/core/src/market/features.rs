//! Temporal features: eleven price-relative indicators per asset per step,
//! plus train-range z-score normalization.
//!
//! All eleven are dimensionless ratios against the current close (or the
//! previous close/adjusted close), so they are comparable across assets with
//! wildly different price levels:
//!
//! ```text
//! z_open  = open_t  / close_t     - 1        z_d_k = mean(close_{t-k+1..t}) / close_t - 1
//! z_high  = high_t  / close_t     - 1                for k in {5, 10, 15, 20, 25, 30}
//! z_low   = low_t   / close_t     - 1
//! z_close = close_t / close_{t-1} - 1
//! z_adj   = adj_t   / adj_{t-1}   - 1        (falls back to close when the
//!                                              source has no adjusted series)
//! ```
//!
//! `z_d_30` needs thirty closes, so the first [`WARMUP`] = 29 calendar
//! positions carry no usable features and are never served as states.
//!
//! Normalization is fit on an explicit index range — in the pipeline, the
//! training segment of the active phase — and applied everywhere. Statistics
//! never see validation or test rows; that is the no-lookahead guarantee.

use ndarray::{Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::AssetPanel;
use crate::error::{bail, Result};

/// Canonical feature order; column numbering everywhere follows this.
pub const FEATURE_NAMES: [&str; 11] = [
    "z_open", "z_high", "z_low", "z_close", "z_adj_close",
    "z_d_5", "z_d_10", "z_d_15", "z_d_20", "z_d_25", "z_d_30",
];

/// Calendar positions before this index have undefined features.
pub const WARMUP: usize = 29;

const MA_WINDOWS: [usize; 6] = [5, 10, 15, 20, 25, 30];

/// Per-feature z-score statistics and the range they were fit on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose fit-range sample std fell below 1e-12; their values
    /// are zeroed everywhere instead of divided by noise.
    pub constant: Vec<bool>,
    pub fit: (usize, usize),
}

/// Feature cube aligned with an [`AssetPanel`]: `[asset, time, feature]`.
/// Rows before `warmup` are zero-filled and must not be served.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeaturePanel {
    market: String,
    tickers: Vec<String>,
    #[serde(with = "array3_serde")]
    values: Array3<f64>,
    warmup: usize,
    norm: Option<NormStats>,
}

impl FeaturePanel {
    pub fn market(&self) -> &str {
        &self.market
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n_assets(&self) -> usize {
        self.values.len_of(Axis(0))
    }

    pub fn len(&self) -> usize {
        self.values.len_of(Axis(1))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.values.len_of(Axis(2))
    }

    pub fn warmup(&self) -> usize {
        self.warmup
    }

    pub fn norm(&self) -> Option<&NormStats> {
        self.norm.as_ref()
    }

    /// Feature vector for one `(asset, time)` cell.
    pub fn row(&self, asset: usize, t: usize) -> ArrayView1<'_, f64> {
        debug_assert!(t >= self.warmup, "feature row {t} is inside warmup");
        self.values.slice(ndarray::s![asset, t, ..])
    }
}

/// Raw (unnormalized) features for every asset and post-warmup step.
pub fn compute_features(panel: &AssetPanel) -> Result<FeaturePanel> {
    let (m, l) = (panel.n_assets(), panel.len());
    if l < WARMUP + 1 {
        bail!(Validation, "need at least {} calendar points for features, got {l}", WARMUP + 1);
    }
    let mut values = Array3::zeros((m, l, FEATURE_NAMES.len()));
    for a in 0..m {
        // Per-ticker adjusted series (complete or absent by construction).
        let adj_at = |t: usize| -> f64 {
            let bar = panel.bar(a, t);
            bar.adj_close.unwrap_or(bar.close)
        };
        for t in WARMUP..l {
            let bar = panel.bar(a, t);
            let c = bar.close;
            values[[a, t, 0]] = bar.open / c - 1.0;
            values[[a, t, 1]] = bar.high / c - 1.0;
            values[[a, t, 2]] = bar.low / c - 1.0;
            values[[a, t, 3]] = c / panel.bar(a, t - 1).close - 1.0;
            values[[a, t, 4]] = adj_at(t) / adj_at(t - 1) - 1.0;
            for (j, &k) in MA_WINDOWS.iter().enumerate() {
                // summed in chronological order; keeps results reproducible
                // against a straightforward reference implementation
                let sum: f64 = (t + 1 - k..=t).map(|i| panel.bar(a, i).close).sum();
                values[[a, t, 5 + j]] = sum / k as f64 / c - 1.0;
            }
        }
    }
    Ok(FeaturePanel {
        market: panel.market().to_string(),
        tickers: panel.tickers().to_vec(),
        values,
        warmup: WARMUP,
        norm: None,
    })
}

/// Z-score each feature with statistics estimated on `fit` only (pooled over
/// assets), then applied to every post-warmup row. Mean is the arithmetic
/// mean, std the (n-1)-divisor sample standard deviation, so the fit range
/// itself normalizes to exactly zero mean and unit sample std.
pub fn normalize_features(raw: &FeaturePanel, fit: (usize, usize)) -> Result<FeaturePanel> {
    if raw.norm.is_some() {
        bail!(Validation, "panel is already normalized");
    }
    let (lo, hi) = fit;
    if lo < raw.warmup {
        bail!(Validation, "fit range starts at {lo}, inside the {}-step warmup", raw.warmup);
    }
    if hi > raw.len() || lo >= hi {
        bail!(Validation, "fit range {lo}..{hi} out of bounds for length {}", raw.len());
    }
    let (m, f) = (raw.n_assets(), raw.n_features());
    let n = m * (hi - lo);
    if n < 2 {
        bail!(Validation, "fit range must cover at least two samples, got {n}");
    }

    let mut mean = vec![0.0; f];
    let mut std = vec![0.0; f];
    let mut constant = vec![false; f];
    for j in 0..f {
        let mut acc = 0.0;
        for a in 0..m {
            for t in lo..hi {
                acc += raw.values[[a, t, j]];
            }
        }
        let mu = acc / n as f64;
        let mut ss = 0.0;
        for a in 0..m {
            for t in lo..hi {
                let d = raw.values[[a, t, j]] - mu;
                ss += d * d;
            }
        }
        let sd = (ss / (n - 1) as f64).sqrt();
        mean[j] = mu;
        if sd < 1e-12 {
            constant[j] = true;
            std[j] = 0.0;
        } else {
            std[j] = sd;
        }
    }

    let mut values = Array3::zeros(raw.values.raw_dim());
    for a in 0..m {
        for t in raw.warmup..raw.len() {
            for j in 0..f {
                values[[a, t, j]] = if constant[j] {
                    0.0
                } else {
                    (raw.values[[a, t, j]] - mean[j]) / std[j]
                };
            }
        }
    }

    Ok(FeaturePanel {
        market: raw.market.clone(),
        tickers: raw.tickers.clone(),
        values,
        warmup: raw.warmup,
        norm: Some(NormStats { mean, std, constant, fit }),
    })
}

/// Array3 as shape + flat data; keeps the JSON artifact layout obvious and
/// stable (serde support in ndarray would tie the format to its internals).
mod array3_serde {
    use ndarray::Array3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Flat {
        shape: (usize, usize, usize),
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(v: &Array3<f64>, s: S) -> Result<S::Ok, S::Error> {
        let d = v.dim();
        Flat { shape: d, data: v.iter().copied().collect() }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array3<f64>, D::Error> {
        let flat = Flat::deserialize(d)?;
        Array3::from_shape_vec(flat.shape, flat.data)
            .map_err(|e| serde::de::Error::custom(format!("bad array shape: {e}")))
    }
}
