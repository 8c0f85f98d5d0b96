//! Per-run financial metrics: profitability, risk, risk-adjusted ratios,
//! and diversity of the traded book.
//!
//! Conventions that matter for comparability (and that the tests pin down):
//!
//! - **Returns** are the per-step simple returns of the equity curve.
//! - **Volatility** and **downside deviation** are (n−1)-divisor sample
//!   standard deviations; downside deviation is the dispersion of the
//!   *strictly negative* returns only and is undefined (`NA`) when fewer
//!   than two exist.
//! - Ratios (`SR`, `SoR`, `CR`) go `NA` when their denominator is zero or
//!   itself undefined — no sentinel zeros, the CSV cell is simply empty.
//! - **Entropy** (`ENT`) is Shannon entropy of the average traded book
//!   *including* the cash slot: sitting in cash is a concentration choice
//!   like any other. Natural log; an `exp` form is available for readers
//!   who want an effective-asset count.
//! - **Effective bets** (`ENB`) *excludes* cash and renormalizes, because
//!   it asks how risk capital spreads across return factors and cash
//!   carries no risk. Factor weights come from the eigendecomposition of
//!   the asset-return covariance; each factor's probability mass is
//!   `ω_{F,i}²·λ_i²` (squared-eigenvalue form by default, a linear form is
//!   available), and `ENB = exp(entropy)`.

mod eigen;

pub use eigen::jacobi_eigen;

use std::io::{BufRead, BufReader, Read, Write};

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::env::RunRecord;
use crate::error::{bail, Result};
use crate::market::AssetPanel;

/// Fraction gained (or lost) over the whole episode.
pub fn total_return(equity: &[f64]) -> f64 {
    (equity[equity.len() - 1] - equity[0]) / equity[0]
}

fn sample_std(xs: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    Some((ss / (n - 1) as f64).sqrt())
}

/// Sample standard deviation of the returns; `NA` below two observations.
pub fn volatility(returns: &[f64]) -> Option<f64> {
    sample_std(returns)
}

/// Largest peak-to-trough loss fraction of the equity curve.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in equity {
        peak = peak.max(v);
        worst = worst.max((peak - v) / peak);
    }
    worst
}

/// Dispersion of the strictly negative returns; `NA` below two of them.
pub fn downside_deviation(returns: &[f64]) -> Option<f64> {
    let neg: Vec<f64> = returns.iter().copied().filter(|&r| r < 0.0).collect();
    sample_std(&neg)
}

fn ratio(numerator: f64, denominator: Option<f64>) -> Option<f64> {
    match denominator {
        Some(d) if d > 0.0 => Some(numerator / d),
        _ => None,
    }
}

/// Mean return over volatility.
pub fn sharpe(returns: &[f64]) -> Option<f64> {
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    ratio(mean, volatility(returns))
}

/// Mean return over downside deviation.
pub fn sortino(returns: &[f64]) -> Option<f64> {
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    ratio(mean, downside_deviation(returns))
}

/// Total return over max drawdown.
pub fn calmar(equity: &[f64]) -> Option<f64> {
    let mdd = max_drawdown(equity);
    ratio(total_return(equity), Some(mdd).filter(|&m| m > 0.0))
}

/// Arithmetic mean of the traded weight rows, renormalized to the simplex.
pub fn average_portfolio(weights: &[Vec<f64>]) -> Vec<f64> {
    let n = weights[0].len();
    let mut avg = vec![0.0; n];
    for row in weights {
        for (a, w) in avg.iter_mut().zip(row) {
            *a += w;
        }
    }
    let sum: f64 = avg.iter().sum();
    avg.iter().map(|a| a / sum).collect()
}

/// Shannon entropy `−Σ ω ln ω` with the `0·ln 0 = 0` convention.
pub fn shannon_entropy(weights: &[f64]) -> f64 {
    -weights.iter().filter(|&&w| w > 0.0).map(|&w| w * w.ln()).sum::<f64>()
}

/// `exp` of the Shannon entropy: an effective count of holdings.
pub fn entropy_exp(weights: &[f64]) -> f64 {
    shannon_entropy(weights).exp()
}

/// How eigenvalues weight the factor-bet distribution in [`effective_bets`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LambdaPower {
    /// `ω_F²·λ²` — emphasizes where variance actually concentrates.
    #[default]
    Squared,
    /// `ω_F²·λ` — classic variance-contribution weighting.
    Linear,
}

/// Effective number of bets from a known covariance matrix. `omega` is the
/// asset-only weight vector (cash already stripped and renormalized).
pub fn enb_from_covariance(
    omega: &[f64],
    cov: &Array2<f64>,
    power: LambdaPower,
) -> Result<f64> {
    if omega.len() != cov.nrows() {
        bail!(Validation, "weight/covariance dimension mismatch");
    }
    let (eigenvalues, vectors) = jacobi_eigen(cov)?;
    let n = omega.len();
    let mut mass = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        // ω_F = Vᵀ ω, factor exposure along eigenvector i
        let wf: f64 = (0..n).map(|k| vectors[[k, i]] * omega[k]).sum();
        let lambda = eigenvalues[i].max(1e-12);
        let weight = match power {
            LambdaPower::Squared => lambda * lambda,
            LambdaPower::Linear => lambda,
        };
        mass[i] = wf * wf * weight;
        total += mass[i];
    }
    if !(total > 0.0) || !total.is_finite() {
        bail!(Domain, "factor-bet mass degenerate (total {total})");
    }
    let entropy: f64 = -mass
        .iter()
        .map(|&m| m / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>();
    Ok(entropy.exp())
}

/// Sample covariance (n−1 divisor) of the columns of `x` (`[T, M]`).
pub fn sample_covariance(x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (t, m) = x.dim();
    if t < 2 {
        bail!(Validation, "covariance needs at least two observations, got {t}");
    }
    let mut means = vec![0.0; m];
    for j in 0..m {
        means[j] = x.column(j).sum() / t as f64;
    }
    let mut cov = Array2::zeros((m, m));
    for i in 0..m {
        for j in i..m {
            let mut acc = 0.0;
            for k in 0..t {
                acc += (x[[k, i]] - means[i]) * (x[[k, j]] - means[j]);
            }
            let c = acc / (t - 1) as f64;
            cov[[i, j]] = c;
            cov[[j, i]] = c;
        }
    }
    Ok(cov)
}

/// Effective number of bets of a run: strip cash from the average book,
/// renormalize, and measure how the bet spreads over the eigenfactors of
/// the realized asset-return covariance. `NA` when the book held no risk
/// assets or the window is too short to estimate a covariance.
pub fn effective_bets(
    avg_weights: &[f64],
    asset_returns: ArrayView2<'_, f64>,
    power: LambdaPower,
) -> Option<f64> {
    let assets = &avg_weights[1..];
    let invested: f64 = assets.iter().sum();
    if !(invested > 0.0) {
        return None;
    }
    let omega: Vec<f64> = assets.iter().map(|w| w / invested).collect();
    let cov = sample_covariance(asset_returns).ok()?;
    enb_from_covariance(&omega, &cov, power).ok()
}

/// Relative outperformance transform used on extreme-market windows:
/// `sign(m_ave)·(m_rl/m_ave − 1)·k + 1`. A degenerate reference
/// (`m_ave = 0`) has no direction to compare against and is a domain error.
pub fn extreme_score(m_rl: f64, m_ave: f64, k: f64) -> Result<f64> {
    if m_ave == 0.0 {
        bail!(Domain, "extreme-market reference value is zero; ratio undefined");
    }
    Ok(m_ave.signum() * (m_rl / m_ave - 1.0) * k + 1.0)
}

/// Per-asset simple returns between the consecutive dates of a run,
/// reconstructed from the panel the run traded on: `[H, M]`, aligned with
/// `RunRecord::returns`. The dates must be a contiguous calendar slice.
pub fn asset_return_window(panel: &AssetPanel, dates: &[NaiveDate]) -> Result<Array2<f64>> {
    if dates.len() < 2 {
        bail!(Validation, "need at least two dates to form returns");
    }
    let calendar = panel.calendar();
    let start = calendar
        .binary_search(&dates[0])
        .map_err(|_| crate::error::CoreError::Validation(format!(
            "run date {} not in the {} calendar",
            dates[0],
            panel.market()
        )))?;
    for (k, d) in dates.iter().enumerate() {
        if calendar.get(start + k) != Some(d) {
            bail!(
                Validation,
                "run dates are not a contiguous calendar slice at {d} (position {k})"
            );
        }
    }
    let (h, m) = (dates.len() - 1, panel.n_assets());
    let mut out = Array2::zeros((h, m));
    for k in 0..h {
        for a in 0..m {
            let p0 = panel.bar(a, start + k).close;
            let p1 = panel.bar(a, start + k + 1).close;
            out[[k, a]] = p1 / p0 - 1.0;
        }
    }
    Ok(out)
}

/// Knobs on metric computation that are part of the run configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricOptions {
    /// Report `exp(ENT)` instead of raw Shannon entropy.
    pub ent_exp: bool,
    pub lambda_power: LambdaPower,
}

/// One row of the metrics table. `None` serializes as an empty CSV cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub market: String,
    pub phase: usize,
    pub seed: u64,
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

/// All metrics of one finished run. `asset_returns` (from
/// [`asset_return_window`]) feeds `ENB`; without it `ENB` is `NA`.
pub fn compute_metrics(
    record: &RunRecord,
    asset_returns: Option<ArrayView2<'_, f64>>,
    opts: MetricOptions,
) -> MetricsRow {
    let avg = average_portfolio(&record.weights);
    let ent = if opts.ent_exp { entropy_exp(&avg) } else { shannon_entropy(&avg) };
    let enb = asset_returns.and_then(|ar| effective_bets(&avg, ar, opts.lambda_power));
    MetricsRow {
        method: record.method.clone(),
        market: record.market.clone(),
        phase: record.phase,
        seed: record.seed,
        tr: total_return(&record.equity),
        vol: volatility(&record.returns),
        mdd: max_drawdown(&record.equity),
        dd: downside_deviation(&record.returns),
        sr: sharpe(&record.returns),
        sor: sortino(&record.returns),
        cr: calmar(&record.equity),
        ent,
        enb,
    }
}

pub const METRICS_HEADER: &str = "method,market,phase,seed,tr,vol,mdd,dd,sr,sor,cr,ent,enb";

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Write the metrics table sorted by (method, market, phase, seed). Floats
/// use shortest-roundtrip formatting, so rewriting the same rows is
/// byte-identical.
pub fn write_metrics_csv(rows: &[MetricsRow], out: &mut impl Write) -> Result<()> {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.method, &a.market, a.phase, a.seed).cmp(&(&b.method, &b.market, b.phase, b.seed))
    });
    writeln!(out, "{METRICS_HEADER}")?;
    for r in sorted {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.market,
            r.phase,
            r.seed,
            r.tr,
            fmt_opt(r.vol),
            r.mdd,
            fmt_opt(r.dd),
            fmt_opt(r.sr),
            fmt_opt(r.sor),
            fmt_opt(r.cr),
            r.ent,
            fmt_opt(r.enb),
        )?;
    }
    Ok(())
}

fn parse_cell(field: &str, line: usize, name: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field.parse::<f64>().map(Some).map_err(|_| {
        crate::error::CoreError::Schema(format!("line {line}: bad {name} value {field:?}"))
    })
}

fn parse_required(field: &str, line: usize, name: &str) -> Result<f64> {
    parse_cell(field, line, name)?
        .ok_or_else(|| crate::error::CoreError::Schema(format!("line {line}: {name} is empty")))
}

/// Read a metrics table written by [`write_metrics_csv`].
pub fn read_metrics_csv(input: impl Read) -> Result<Vec<MetricsRow>> {
    let reader = BufReader::new(input);
    let mut rows = Vec::new();
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim_end() == METRICS_HEADER => {}
        Some((_, Ok(h))) => bail!(Schema, "unexpected metrics header {h:?}"),
        Some((_, Err(e))) => return Err(e.into()),
        None => bail!(Schema, "metrics table is empty"),
    }
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            bail!(Schema, "line {lineno}: expected 13 fields, got {}", f.len());
        }
        rows.push(MetricsRow {
            method: f[0].to_string(),
            market: f[1].to_string(),
            phase: f[2]
                .parse()
                .map_err(|_| crate::error::CoreError::Schema(format!(
                    "line {lineno}: bad phase {:?}",
                    f[2]
                )))?,
            seed: f[3]
                .parse()
                .map_err(|_| crate::error::CoreError::Schema(format!(
                    "line {lineno}: bad seed {:?}",
                    f[3]
                )))?,
            tr: parse_required(f[4], lineno, "tr")?,
            vol: parse_cell(f[5], lineno, "vol")?,
            mdd: parse_required(f[6], lineno, "mdd")?,
            dd: parse_cell(f[7], lineno, "dd")?,
            sr: parse_cell(f[8], lineno, "sr")?,
            sor: parse_cell(f[9], lineno, "sor")?,
            cr: parse_cell(f[10], lineno, "cr")?,
            ent: parse_required(f[11], lineno, "ent")?,
            enb: parse_cell(f[12], lineno, "enb")?,
        });
    }
    Ok(rows)
}
