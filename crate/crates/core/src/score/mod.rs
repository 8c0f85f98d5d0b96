//! Normalization of raw metric tables into 0–100 scores.
//!
//! Everything downstream of the metrics CSV speaks one language: an
//! integer score where 50 means "as good as holding the market average"
//! and the 0/100 endpoints sit at ±20% of the reference. The ramps here
//! do that translation; [`rank`] and [`profile`] turn collections of
//! scored runs into rank distributions and tail curves; [`axes`]
//! aggregates the lot into the six compass axes.
//!
//! The reference values (`m_ave`) come from the `market_average` method's
//! own rows in the same table — the uniform buy-and-rebalance book is a
//! method like any other, which keeps the reference honest: it pays the
//! same commissions and trades the same calendar as everything it is
//! compared against.

pub mod axes;
pub mod profile;
pub mod rank;

use std::collections::BTreeMap;

use crate::error::{bail, Result};
use crate::metrics::MetricsRow;

/// Ramp half-width as a percentage: scores hit 0/100 at ±20% of the
/// reference value.
pub const K_PCT: f64 = 20.0;

/// The four measures that feed profitability and universality.
pub const PROFIT_MEASURES: [&str; 4] = ["tr", "sr", "cr", "sor"];

/// The two measures that feed risk control.
pub const RISK_MEASURES: [&str; 2] = ["vol", "mdd"];

/// Round to the nearest integer, halves away from zero upward
/// (49.5 → 50). All scores are nonnegative, so `floor(x + ½)` is exact.
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

fn clip(x: f64) -> f64 {
    x.clamp(0.0, 100.0)
}

/// Score a higher-is-better metric against its market-average reference:
/// `(m_rl/m_ave − 0.8) · 250`, clipped to `[0, 100]`, rounded half-up.
/// Matching the reference scores 50; beating it by 20% scores 100.
///
/// A non-positive reference makes the ratio meaningless (a bear-market
/// total return flips its sign), so the same ramp is applied to the
/// signed relative difference `(m_rl − m_ave)/|m_ave|` instead and the
/// score is flagged. A reference of exactly zero degenerates further to
/// the sign of the difference alone.
pub fn profit_score(m_rl: f64, m_ave: f64, k_pct: f64) -> (f64, bool) {
    let slope = 5000.0 / k_pct; // 250 at k_pct = 20
    if m_ave > 0.0 {
        let ratio = m_rl / m_ave;
        (round_half_up(clip((ratio - (1.0 - k_pct / 100.0)) * slope)), false)
    } else if m_ave == 0.0 {
        let s = if m_rl > 0.0 {
            100.0
        } else if m_rl < 0.0 {
            0.0
        } else {
            50.0
        };
        (s, true)
    } else {
        let excess = (m_rl - m_ave) / m_ave.abs();
        (round_half_up(clip(50.0 + slope * excess)), true)
    }
}

/// Score a lower-is-better metric (volatility, drawdown) against its
/// reference: `(1.2 − m_rl/m_ave) · 250`, clipped, rounded half-up.
/// Matching the reference scores 50; 20% less risk scores 100. Risk
/// metrics are nonnegative by construction, so a non-positive reference
/// is a degenerate run (a flat equity curve) rather than a sign flip.
pub fn risk_score(m_rl: f64, m_ave: f64, k_pct: f64) -> Result<f64> {
    if m_ave <= 0.0 {
        bail!(Domain, "risk reference must be positive, got {m_ave}");
    }
    let slope = 5000.0 / k_pct;
    let ratio = m_rl / m_ave;
    Ok(round_half_up(clip(((1.0 + k_pct / 100.0) - ratio) * slope)))
}

/// Diversity blends the two concentration measures against the uniform
/// book's values: `mean(clip(ent ratio · 100), clip(enb ratio · 50))`.
/// The uniform policy itself lands at `mean(100, 50) = 75`; doubling its
/// effective bets maxes the ENB term. Unrounded — the axis layer rounds
/// after averaging across runs.
pub fn diversity_score(
    ent_rl: f64,
    ent_ref: f64,
    enb_rl: f64,
    enb_ref: f64,
) -> Result<f64> {
    if ent_ref <= 0.0 || enb_ref <= 0.0 {
        bail!(
            Domain,
            "diversity references must be positive, got ent {ent_ref}, enb {enb_ref}"
        );
    }
    let ent_term = clip(ent_rl / ent_ref * 100.0);
    let enb_term = clip(enb_rl / enb_ref * 50.0);
    Ok((ent_term + enb_term) / 2.0)
}

/// Pull one metric column out of a row by name.
pub fn metric_value(row: &MetricsRow, metric: &str) -> Option<f64> {
    match metric {
        "tr" => Some(row.tr),
        "vol" => row.vol,
        "mdd" => Some(row.mdd),
        "dd" => row.dd,
        "sr" => row.sr,
        "sor" => row.sor,
        "cr" => row.cr,
        "ent" => Some(row.ent),
        "enb" => row.enb,
        _ => None,
    }
}

/// Market-average reference values for one (market, phase) window,
/// averaged over that method's seeds (the uniform policy is
/// deterministic, so the seeds agree; averaging just pools them).
#[derive(Debug, Clone)]
pub struct Reference {
    pub tr: f64,
    pub vol: Option<f64>,
    pub mdd: f64,
    pub dd: Option<f64>,
    pub sr: Option<f64>,
    pub sor: Option<f64>,
    pub cr: Option<f64>,
    pub ent: f64,
    pub enb: Option<f64>,
}

impl Reference {
    pub fn value(&self, metric: &str) -> Option<f64> {
        match metric {
            "tr" => Some(self.tr),
            "vol" => self.vol,
            "mdd" => Some(self.mdd),
            "dd" => self.dd,
            "sr" => self.sr,
            "sor" => self.sor,
            "cr" => self.cr,
            "ent" => Some(self.ent),
            "enb" => self.enb,
            _ => None,
        }
    }
}

/// The reference method every score is measured against.
pub const REFERENCE_METHOD: &str = "market_average";

/// Extract the per-(market, phase) reference table from a metrics table.
/// Every window that any method was run on must carry `market_average`
/// rows, or scoring cannot proceed.
pub fn build_references(
    rows: &[MetricsRow],
) -> Result<BTreeMap<(String, usize), Reference>> {
    let mut groups: BTreeMap<(String, usize), Vec<&MetricsRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.method == REFERENCE_METHOD) {
        groups.entry((row.market.clone(), row.phase)).or_default().push(row);
    }

    // every (market, phase) that appears anywhere needs a reference
    let mut missing: Vec<String> = Vec::new();
    for row in rows {
        let key = (row.market.clone(), row.phase);
        if !groups.contains_key(&key) {
            let label = format!("{}/phase{}", row.market, row.phase);
            if !missing.contains(&label) {
                missing.push(label);
            }
        }
    }
    if !missing.is_empty() {
        missing.sort();
        bail!(
            Validation,
            "no {REFERENCE_METHOD} rows for: {}",
            missing.join(", ")
        );
    }

    let mean_opt = |vals: Vec<Option<f64>>| -> Option<f64> {
        let n = vals.len();
        let xs: Vec<f64> = vals.into_iter().flatten().collect();
        if xs.len() == n {
            Some(xs.iter().sum::<f64>() / n as f64)
        } else {
            None
        }
    };

    let mut refs = BTreeMap::new();
    for (key, group) in groups {
        let n = group.len() as f64;
        refs.insert(
            key,
            Reference {
                tr: group.iter().map(|r| r.tr).sum::<f64>() / n,
                vol: mean_opt(group.iter().map(|r| r.vol).collect()),
                mdd: group.iter().map(|r| r.mdd).sum::<f64>() / n,
                dd: mean_opt(group.iter().map(|r| r.dd).collect()),
                sr: mean_opt(group.iter().map(|r| r.sr).collect()),
                sor: mean_opt(group.iter().map(|r| r.sor).collect()),
                cr: mean_opt(group.iter().map(|r| r.cr).collect()),
                ent: group.iter().map(|r| r.ent).sum::<f64>() / n,
                enb: mean_opt(group.iter().map(|r| r.enb).collect()),
            },
        );
    }
    Ok(refs)
}

/// One run's normalized score on one measure.
#[derive(Debug, Clone)]
pub struct ScoredRun {
    pub method: String,
    pub market: String,
    pub phase: usize,
    pub seed: u64,
    pub score: f64,
    /// true when the reference was non-positive and the difference
    /// fallback ramp was used
    pub flagged: bool,
}

/// Score every row of the table on one higher-is-better measure against
/// the reference table. A missing metric value (a not-available cell) is
/// an error naming the offending run — scoring needs complete tables.
pub fn score_metric(
    rows: &[MetricsRow],
    refs: &BTreeMap<(String, usize), Reference>,
    metric: &str,
) -> Result<Vec<ScoredRun>> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let key = (row.market.clone(), row.phase);
        let reference = refs
            .get(&key)
            .ok_or_else(|| {
                crate::error::CoreError::Validation(format!(
                    "no reference for {}/phase{}",
                    row.market, row.phase
                ))
            })?;
        let m_rl = metric_value(row, metric).ok_or_else(|| {
            crate::error::CoreError::Validation(format!(
                "{} is not available for {} on {}/phase{}/seed{}",
                metric, row.method, row.market, row.phase, row.seed
            ))
        })?;
        let m_ave = reference.value(metric).ok_or_else(|| {
            crate::error::CoreError::Validation(format!(
                "{} reference is not available for {}/phase{}",
                metric, row.market, row.phase
            ))
        })?;
        let (score, flagged) = profit_score(m_rl, m_ave, K_PCT);
        out.push(ScoredRun {
            method: row.method.clone(),
            market: row.market.clone(),
            phase: row.phase,
            seed: row.seed,
            score,
            flagged,
        });
    }
    Ok(out)
}
