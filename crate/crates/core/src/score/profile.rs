//! Performance profiles: the empirical tail of a method's normalized
//! scores, with stratified-bootstrap confidence bands.
//!
//! `F(τ)` answers "what fraction of this method's runs scored strictly
//! above τ?" on the integer threshold grid 0..=100. A curve that stays
//! high further to the right is a method that is good *often*, not just
//! on average — the whole point of profiles over scalar summaries.
//!
//! The 95% band resamples runs with replacement **within** each
//! (market, phase) stratum, holding every stratum at its original size,
//! so a method's band width reflects seed-to-seed noise rather than the
//! composition of markets it was run on. Resample `b` draws from an rng
//! derived from `(seed, b)`, which makes the bands reproducible and lets
//! resamples be computed in any order.

use std::collections::BTreeMap;
use std::io::Write;

use super::round_half_up;
use crate::error::{bail, Result};
use crate::seed::component_rng;

/// Number of thresholds in the profile grid: integers 0..=100.
pub const GRID: usize = 101;

/// One method's profile: point curve plus a pointwise percentile band.
#[derive(Debug, Clone)]
pub struct ProfileCurve {
    /// thresholds 0, 1, …, 100
    pub taus: Vec<f64>,
    /// fraction of runs scoring strictly above each τ
    pub point: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resamples: usize,
}

impl ProfileCurve {
    /// Trapezoidal area under the point curve over τ ∈ [0, 100]; lands in
    /// [0, 100] since F ∈ [0, 1] and the grid spans 100 units. Up to
    /// quadrature error this is the mean clipped score.
    pub fn auc(&self) -> f64 {
        let mut area = 0.0;
        for j in 0..self.point.len() - 1 {
            area += (self.point[j] + self.point[j + 1]) / 2.0
                * (self.taus[j + 1] - self.taus[j]);
        }
        area
    }

    /// The curve and both band edges must be tail functions: values in
    /// [0, 1], nonincreasing in τ, and the band must bracket the point.
    pub fn validate(&self) -> Result<()> {
        let n = self.taus.len();
        if self.point.len() != n || self.lo.len() != n || self.hi.len() != n {
            bail!(Validation, "profile arrays disagree on grid length");
        }
        for series in [&self.point, &self.lo, &self.hi] {
            for w in series.windows(2) {
                if w[1] > w[0] + 1e-12 {
                    bail!(Validation, "profile curve increased along the grid");
                }
            }
            if series.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
                bail!(Validation, "profile values left [0, 1]");
            }
        }
        for j in 0..n {
            if self.lo[j] > self.point[j] || self.point[j] > self.hi[j] {
                bail!(Validation, "band fails to bracket the point curve at τ={j}");
            }
        }
        Ok(())
    }
}

/// Fraction of `sorted` strictly above `tau`, by binary search.
fn tail_fraction(sorted: &[f64], tau: f64) -> f64 {
    let at_most = sorted.partition_point(|&s| s <= tau);
    (sorted.len() - at_most) as f64 / sorted.len() as f64
}

/// Linear-interpolation percentile of a sorted slice, `q ∈ [0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Build one method's profile from `(stratum label, score)` pairs.
/// `b` bootstrap resamples (stratified, sizes preserved) give the
/// pointwise `level` band; `seed` pins the whole construction.
pub fn performance_profile(
    entries: &[(String, f64)],
    b: usize,
    level: f64,
    seed: u64,
) -> Result<ProfileCurve> {
    if entries.is_empty() {
        bail!(Validation, "performance profile needs at least one run");
    }
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        bail!(Validation, "confidence level must be in (0, 1), got {level}");
    }
    if entries.iter().any(|(_, s)| !s.is_finite()) {
        bail!(Validation, "profile scores must be finite");
    }

    let taus: Vec<f64> = (0..GRID).map(|t| t as f64).collect();

    let mut all: Vec<f64> = entries.iter().map(|(_, s)| *s).collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let point: Vec<f64> = taus.iter().map(|&t| tail_fraction(&all, t)).collect();

    // stratum label → that stratum's scores, in deterministic order
    let mut strata: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (label, score) in entries {
        strata.entry(label.as_str()).or_default().push(*score);
    }

    let n = entries.len();
    let q_lo = (1.0 - level) / 2.0;
    let mut curves = vec![0.0; b * GRID];
    let mut resample = Vec::with_capacity(n);
    for rep in 0..b {
        use rand::Rng;
        let mut rng = component_rng(seed, &format!("profile/resample/{rep}"));
        resample.clear();
        for scores in strata.values() {
            for _ in 0..scores.len() {
                resample.push(scores[rng.gen_range(0..scores.len())]);
            }
        }
        resample.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (j, &t) in taus.iter().enumerate() {
            curves[rep * GRID + j] = tail_fraction(&resample, t);
        }
    }

    let mut lo = Vec::with_capacity(GRID);
    let mut hi = Vec::with_capacity(GRID);
    let mut column = vec![0.0; b];
    for j in 0..GRID {
        for rep in 0..b {
            column[rep] = curves[rep * GRID + j];
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // percentile bands around a tail fraction can, in small samples,
        // sit entirely to one side of the point estimate; widen to keep
        // the documented bracket invariant
        lo.push(percentile(&column, q_lo).min(point[j]));
        hi.push(percentile(&column, 1.0 - q_lo).max(point[j]));
    }

    let curve = ProfileCurve { taus, point, lo, hi, resamples: b };
    curve.validate()?;
    Ok(curve)
}

/// Reliability is the area under the total-return score profile, rounded
/// half-up to the integer scale shared by all axes.
pub fn reliability_score(curve: &ProfileCurve) -> f64 {
    round_half_up(curve.auc())
}

/// Emit profiles as `method,tau,point,lo,hi` rows, methods in the given
/// order.
pub fn write_profile_csv(
    per_method: &[(&str, &ProfileCurve)],
    out: &mut impl Write,
) -> Result<()> {
    writeln!(out, "method,tau,point,lo,hi")?;
    for (method, curve) in per_method {
        for j in 0..curve.taus.len() {
            writeln!(
                out,
                "{method},{},{},{},{}",
                curve.taus[j], curve.point[j], curve.lo[j], curve.hi[j]
            )?;
        }
    }
    Ok(())
}
