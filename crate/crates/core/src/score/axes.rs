//! The six compass axes, aggregated per method from a complete metrics
//! table.
//!
//! Profitability and risk control average the per-run ramp scores over
//! their measures; diversity averages the concentration blend; the
//! universality axis reads the rank distributions; reliability is the
//! area under the total-return score profile; explainability is pinned
//! at 50 for every learned method — the framework treats all of them as
//! equally (un)interpretable black boxes.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::profile::{performance_profile, reliability_score};
use super::rank::universality_scores;
use super::{
    build_references, diversity_score, risk_score, round_half_up, score_metric,
    metric_value, Reference, K_PCT, PROFIT_MEASURES, RISK_MEASURES,
};
use crate::error::{CoreError, Result};
use crate::metrics::MetricsRow;
use crate::seed::derive_seed;

/// Axis names in the fixed order of every emitted table.
pub const AXES: [&str; 6] = [
    "profitability",
    "risk_control",
    "universality",
    "diversity",
    "reliability",
    "explainability",
];

/// One method's compass: six integers in [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisScores {
    pub profitability: u8,
    pub risk_control: u8,
    pub universality: u8,
    pub diversity: u8,
    pub reliability: u8,
    pub explainability: u8,
}

impl AxisScores {
    pub fn get(&self, axis: &str) -> Option<u8> {
        match axis {
            "profitability" => Some(self.profitability),
            "risk_control" => Some(self.risk_control),
            "universality" => Some(self.universality),
            "diversity" => Some(self.diversity),
            "reliability" => Some(self.reliability),
            "explainability" => Some(self.explainability),
            _ => None,
        }
    }
}

/// Axis scores for every method, plus any degenerate-reference flags
/// raised while ramping (a non-positive reference falls back to the
/// difference ramp rather than failing, but the output says so).
#[derive(Debug, Clone)]
pub struct AxisReport {
    pub scores: BTreeMap<String, AxisScores>,
    pub flags: Vec<String>,
}

fn to_axis(x: f64) -> u8 {
    round_half_up(x).clamp(0.0, 100.0) as u8
}

/// Compute all six axes for every method in the table. `resamples` and
/// `seed` drive the reliability profiles' bootstrap (the only stochastic
/// ingredient, and a deterministic one under a fixed seed).
pub fn compute_axis_scores(
    rows: &[MetricsRow],
    resamples: usize,
    seed: u64,
) -> Result<AxisReport> {
    let refs = build_references(rows)?;
    let mut methods: Vec<String> = rows.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();

    let mut flags: Vec<String> = Vec::new();

    // profitability: pool ramp scores over the four measures × all runs;
    // also keep the per-run TR scores for reliability's profile
    let mut profit_pool: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut tr_entries: BTreeMap<&str, Vec<(String, f64)>> = BTreeMap::new();
    for measure in PROFIT_MEASURES {
        let scored = score_metric(rows, &refs, measure)?;
        for run in &scored {
            let method =
                methods.iter().find(|m| **m == run.method).unwrap().as_str();
            profit_pool.entry(method).or_default().push(run.score);
            if run.flagged {
                let flag = format!(
                    "{measure} reference non-positive for {}/phase{}: difference ramp used",
                    run.market, run.phase
                );
                if !flags.contains(&flag) {
                    flags.push(flag);
                }
            }
            if measure == "tr" {
                tr_entries
                    .entry(method)
                    .or_default()
                    .push((format!("{}/phase{}", run.market, run.phase), run.score));
            }
        }
    }

    // risk control: same pooling over the two risk measures
    let mut risk_pool: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for row in rows {
        let reference = &refs[&(row.market.clone(), row.phase)];
        for measure in RISK_MEASURES {
            let m_rl = metric_value(row, measure).ok_or_else(|| {
                CoreError::Validation(format!(
                    "{measure} is not available for {} on {}/phase{}/seed{}",
                    row.method, row.market, row.phase, row.seed
                ))
            })?;
            let m_ave = reference.value(measure).ok_or_else(|| {
                CoreError::Validation(format!(
                    "{measure} reference is not available for {}/phase{}",
                    row.market, row.phase
                ))
            })?;
            let s = risk_score(m_rl, m_ave, K_PCT).map_err(|e| {
                CoreError::Domain(format!("{measure} on {}/phase{}: {e}", row.market, row.phase))
            })?;
            let method =
                methods.iter().find(|m| **m == row.method).unwrap().as_str();
            risk_pool.entry(method).or_default().push(s);
        }
    }

    // diversity: per-run blend against the uniform book's concentration
    let mut div_pool: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for row in rows {
        let reference: &Reference = &refs[&(row.market.clone(), row.phase)];
        let enb_rl = row.enb.ok_or_else(|| {
            CoreError::Validation(format!(
                "enb is not available for {} on {}/phase{}/seed{}",
                row.method, row.market, row.phase, row.seed
            ))
        })?;
        let enb_ref = reference.enb.ok_or_else(|| {
            CoreError::Validation(format!(
                "enb reference is not available for {}/phase{}",
                row.market, row.phase
            ))
        })?;
        let s = diversity_score(row.ent, reference.ent, enb_rl, enb_ref)?;
        let method =
            methods.iter().find(|m| **m == row.method).unwrap().as_str();
        div_pool.entry(method).or_default().push(s);
    }

    let universality = universality_scores(rows)?;

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut scores = BTreeMap::new();
    for method in &methods {
        let profile = performance_profile(
            &tr_entries[method.as_str()],
            resamples,
            0.95,
            derive_seed(seed, &format!("reliability/{method}")),
        )?;
        scores.insert(
            method.clone(),
            AxisScores {
                profitability: to_axis(mean(&profit_pool[method.as_str()])),
                risk_control: to_axis(mean(&risk_pool[method.as_str()])),
                universality: to_axis(universality[method]),
                diversity: to_axis(mean(&div_pool[method.as_str()])),
                reliability: to_axis(reliability_score(&profile)),
                explainability: 50,
            },
        );
    }
    flags.sort();
    Ok(AxisReport { scores, flags })
}

/// Emit one `method,profitability,…` row per method, methods sorted.
pub fn write_axes_csv(report: &AxisReport, out: &mut impl Write) -> Result<()> {
    writeln!(out, "method,{}", AXES.join(","))?;
    for (method, s) in &report.scores {
        writeln!(
            out,
            "{method},{},{},{},{},{},{}",
            s.profitability,
            s.risk_control,
            s.universality,
            s.diversity,
            s.reliability,
            s.explainability
        )?;
    }
    Ok(())
}
