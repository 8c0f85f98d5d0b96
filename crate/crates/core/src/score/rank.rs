//! Rank distributions: how often does each method land at each rank when
//! all methods are compared run-by-run?
//!
//! Every (market, phase, seed) cell is one contest. Methods are ranked by
//! one metric within the cell; ties split their probability mass evenly
//! across the ranks they jointly occupy, so a two-way tie for first puts
//! ½ on rank 1 and ½ on rank 2 for both contenders. Aggregating over all
//! cells gives a methods × ranks probability matrix whose rows each sum
//! to one — the raw material for rank-comparison bars and the
//! universality axis.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array2;

use super::metric_value;
use crate::error::{bail, CoreError, Result};
use crate::metrics::MetricsRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// Probability of each method attaining each rank, over all cells.
#[derive(Debug, Clone)]
pub struct RankMatrix {
    /// row labels, sorted
    pub methods: Vec<String>,
    /// `[method, rank − 1]` probabilities; square, rows sum to 1
    pub probs: Array2<f64>,
    /// number of (market, phase, seed) contests aggregated
    pub cells: usize,
}

impl RankMatrix {
    /// Probability that `method` attains 1-based `rank`.
    pub fn prob(&self, method: &str, rank: usize) -> Option<f64> {
        let m = self.methods.iter().position(|s| s == method)?;
        if rank == 0 || rank > self.methods.len() {
            return None;
        }
        Some(self.probs[[m, rank - 1]])
    }

    /// Each method's mass must land somewhere: rows sum to 1.
    pub fn validate(&self) -> Result<()> {
        for (m, row) in self.probs.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                bail!(
                    Validation,
                    "rank row for {} sums to {sum}, not 1",
                    self.methods[m]
                );
            }
            if row.iter().any(|&p| p < 0.0) {
                bail!(Validation, "negative rank probability for {}", self.methods[m]);
            }
        }
        Ok(())
    }
}

/// Build the rank matrix for one metric. Every method must appear exactly
/// once in every (market, phase, seed) cell; gaps are reported by name
/// rather than silently skewing the distribution.
pub fn rank_distribution(
    rows: &[MetricsRow],
    metric: &str,
    direction: Direction,
) -> Result<RankMatrix> {
    if rows.is_empty() {
        bail!(Validation, "rank distribution needs at least one run");
    }
    let mut methods: Vec<String> = rows.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();
    let n = methods.len();
    let index: BTreeMap<&str, usize> =
        methods.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();

    // cell → per-method metric value
    let mut cells: BTreeMap<(String, usize, u64), Vec<Option<f64>>> = BTreeMap::new();
    for row in rows {
        let key = (row.market.clone(), row.phase, row.seed);
        let slot = cells.entry(key).or_insert_with(|| vec![None; n]);
        let m = index[row.method.as_str()];
        if slot[m].is_some() {
            bail!(
                Validation,
                "duplicate row for {} on {}/phase{}/seed{}",
                row.method,
                row.market,
                row.phase,
                row.seed
            );
        }
        let v = metric_value(row, metric).ok_or_else(|| {
            CoreError::Validation(format!(
                "{metric} is not available for {} on {}/phase{}/seed{}",
                row.method, row.market, row.phase, row.seed
            ))
        })?;
        if !v.is_finite() {
            bail!(
                Validation,
                "{metric} is not finite for {} on {}/phase{}/seed{}",
                row.method,
                row.market,
                row.phase,
                row.seed
            );
        }
        slot[m] = Some(v);
    }

    let mut missing = Vec::new();
    for ((market, phase, seed), slot) in &cells {
        for (m, v) in slot.iter().enumerate() {
            if v.is_none() {
                missing.push(format!("{}@{market}/phase{phase}/seed{seed}", methods[m]));
            }
        }
    }
    if !missing.is_empty() {
        bail!(Validation, "incomplete rank cells: {}", missing.join(", "));
    }

    let mut probs = Array2::zeros((n, n));
    for slot in cells.values() {
        // order method indices best-first under the given direction
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let (va, vb) = (slot[a].unwrap(), slot[b].unwrap());
            match direction {
                Direction::HigherBetter => vb.partial_cmp(&va).unwrap(),
                Direction::LowerBetter => va.partial_cmp(&vb).unwrap(),
            }
        });
        // ties share their span of ranks with equal mass
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && slot[order[j]] == slot[order[i]] {
                j += 1;
            }
            let share = 1.0 / (j - i) as f64;
            for &m in &order[i..j] {
                for r in i..j {
                    probs[[m, r]] += share;
                }
            }
            i = j;
        }
    }
    probs /= cells.len() as f64;

    let matrix = RankMatrix { methods, probs, cells: cells.len() };
    matrix.validate()?;
    Ok(matrix)
}

/// Expected rank score under a matrix's distribution: rank 1 is worth
/// 100, rank n is worth 0, linear in between.
pub fn expected_rank_score(matrix: &RankMatrix, method: &str) -> Option<f64> {
    let n = matrix.methods.len();
    if n < 2 {
        return None;
    }
    let m = matrix.methods.iter().position(|s| s == method)?;
    let mut score = 0.0;
    for r in 1..=n {
        score += matrix.probs[[m, r - 1]] * 100.0 * (n - r) as f64 / (n - 1) as f64;
    }
    Some(score)
}

/// Universality: the mean expected rank score over the four profit
/// measures (total return and the three risk-adjusted ratios), unrounded.
/// Needs at least two methods — a method cannot out- or under-rank an
/// empty field.
pub fn universality_scores(rows: &[MetricsRow]) -> Result<BTreeMap<String, f64>> {
    let matrices: Vec<RankMatrix> = super::PROFIT_MEASURES
        .iter()
        .map(|m| rank_distribution(rows, m, Direction::HigherBetter))
        .collect::<Result<_>>()?;
    if matrices[0].methods.len() < 2 {
        bail!(Domain, "universality needs at least two methods to rank");
    }
    let mut out = BTreeMap::new();
    for method in &matrices[0].methods {
        let mean = matrices
            .iter()
            .map(|m| expected_rank_score(m, method).unwrap())
            .sum::<f64>()
            / matrices.len() as f64;
        out.insert(method.clone(), mean);
    }
    Ok(out)
}

/// Emit rank matrices as `metric,method,rank,probability` rows, metrics
/// in the given order, methods sorted, ranks ascending.
pub fn write_rank_csv(
    per_metric: &[(&str, &RankMatrix)],
    out: &mut impl Write,
) -> Result<()> {
    writeln!(out, "metric,method,rank,probability")?;
    for (metric, matrix) in per_metric {
        for (m, method) in matrix.methods.iter().enumerate() {
            for r in 0..matrix.methods.len() {
                writeln!(out, "{metric},{method},{},{}", r + 1, matrix.probs[[m, r]])?;
            }
        }
    }
    Ok(())
}
