//! Plot-data emitters. Nothing here renders pixels: every artifact is a
//! small deterministic CSV (or the compass document, see [`compass`])
//! that any plotting tool can consume. Emitters are pure functions of
//! their inputs — calling one twice yields byte-identical output, which
//! is what makes `diff` a meaningful regression test on whole output
//! trees.

pub mod compass;

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;

use crate::env::RunRecord;
use crate::error::{bail, Result};
use crate::metrics::MetricsRow;
use crate::score::{
    build_references, metric_value, profit_score, round_half_up, K_PCT,
    REFERENCE_METHOD,
};

/// Star-plot metric order: the four profit measures, the two risk
/// measures, the two concentration measures.
pub const PRIDE_METRICS: [&str; 8] = ["tr", "sr", "cr", "sor", "mdd", "vol", "ent", "enb"];

/// Per-method scores for the eight star metrics. Every spoke uses the
/// relative ramp against the market-average reference, so the reference
/// ring sits at 50 on all eight — including the risk spokes, which here
/// read "relative magnitude", not "goodness". The reference method
/// itself is excluded: its star *is* the ring.
pub fn pride_star_scores(
    rows: &[MetricsRow],
) -> Result<BTreeMap<String, [f64; 8]>> {
    let refs = build_references(rows)?;
    let mut pools: BTreeMap<String, [Vec<f64>; 8]> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.method != REFERENCE_METHOD) {
        let reference = &refs[&(row.market.clone(), row.phase)];
        let pool = pools.entry(row.method.clone()).or_default();
        for (k, metric) in PRIDE_METRICS.iter().enumerate() {
            let m_rl = metric_value(row, metric).ok_or_else(|| {
                crate::error::CoreError::Validation(format!(
                    "{metric} is not available for {} on {}/phase{}/seed{}",
                    row.method, row.market, row.phase, row.seed
                ))
            })?;
            let m_ave = reference.value(metric).ok_or_else(|| {
                crate::error::CoreError::Validation(format!(
                    "{metric} reference is not available for {}/phase{}",
                    row.market, row.phase
                ))
            })?;
            pool[k].push(profit_score(m_rl, m_ave, K_PCT).0);
        }
    }
    let mut out = BTreeMap::new();
    for (method, pool) in pools {
        let mut scores = [0.0; 8];
        for (k, p) in pool.iter().enumerate() {
            scores[k] = round_half_up(p.iter().sum::<f64>() / p.len() as f64);
        }
        out.insert(method, scores);
    }
    Ok(out)
}

/// Emit `method,metric,score` rows — methods sorted, metrics in star
/// order — followed by the eight reference-ring rows pinned at 50.
pub fn write_pride_star_csv(
    scores: &BTreeMap<String, [f64; 8]>,
    out: &mut impl Write,
) -> Result<()> {
    writeln!(out, "method,metric,score")?;
    for (method, s) in scores {
        for (k, metric) in PRIDE_METRICS.iter().enumerate() {
            writeln!(out, "{method},{metric},{}", s[k])?;
        }
    }
    for metric in PRIDE_METRICS {
        writeln!(out, "{REFERENCE_METHOD},{metric},50")?;
    }
    Ok(())
}

/// Emit each method's average portfolio as one row, cash column first.
/// Rows must be simplex vectors over cash + the labeled assets.
pub fn write_heatmap_csv(
    portfolios: &[(String, Vec<f64>)],
    tickers: &[String],
    out: &mut impl Write,
) -> Result<()> {
    writeln!(out, "method,cash,{}", tickers.join(","))?;
    for (method, w) in portfolios {
        if w.len() != tickers.len() + 1 {
            bail!(
                Validation,
                "portfolio for {method} has {} entries, expected cash + {} assets",
                w.len(),
                tickers.len()
            );
        }
        let sum: f64 = w.iter().sum();
        if w.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-6 {
            bail!(Validation, "portfolio for {method} is not on the simplex (sum {sum})");
        }
        let cells: Vec<String> = w.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{method},{}", cells.join(","))?;
    }
    Ok(())
}

/// Aggregate equity curves across seeds: one `date,method,mean,std` row
/// per (method, date), methods sorted, dates chronological. All records
/// of a method must share one calendar — mixing phases or markets in a
/// single plot would silently average apples and oranges.
pub fn write_equity_csv(records: &[RunRecord], out: &mut impl Write) -> Result<()> {
    if records.is_empty() {
        bail!(Validation, "no run records to aggregate");
    }
    let mut by_method: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method.as_str()).or_default().push(r);
    }
    writeln!(out, "date,method,mean,std")?;
    for (method, group) in &by_method {
        let dates: &[NaiveDate] = &group[0].dates;
        for r in &group[1..] {
            if r.dates != dates {
                bail!(
                    Validation,
                    "misaligned calendars for {method}: seed {} disagrees with seed {}",
                    r.seed,
                    group[0].seed
                );
            }
        }
        let n = group.len();
        for (t, date) in dates.iter().enumerate() {
            let mean = group.iter().map(|r| r.equity[t]).sum::<f64>() / n as f64;
            let std = if n < 2 {
                0.0
            } else {
                let ss: f64 =
                    group.iter().map(|r| (r.equity[t] - mean).powi(2)).sum();
                (ss / (n - 1) as f64).sqrt()
            };
            writeln!(out, "{date},{method},{mean},{std}")?;
        }
    }
    Ok(())
}
