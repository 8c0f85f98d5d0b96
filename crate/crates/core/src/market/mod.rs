//! Market data: OHLCV ingestion into rectangular panels, temporal features,
//! rolling train/valid/test splits, embedding exports, and a cached fetch
//! helper.
//!
//! The contract of this module is *rectangularity*: downstream stages index
//! `(asset, calendar position)` without ever re-checking alignment. Ingestion
//! therefore unions all dates into one calendar and drops any ticker that
//! does not cover it completely (dropped names are reported on the panel, not
//! silently discarded). Feed pre-aligned data if you want to keep every
//! column.

mod embed;
mod features;
mod fetch;
mod split;

pub use embed::export_embedding_samples;
pub use features::{compute_features, normalize_features, FeaturePanel, NormStats, FEATURE_NAMES, WARMUP};
pub use fetch::{fetch_remote_csv, Endpoint};
pub use split::{make_rolling_splits, Phase, Segment, SplitPlan};

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// One bar of daily (or any fixed-step) OHLCV data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    /// Present only when the source provides a complete adjusted series for
    /// the ticker; features fall back to `close` otherwise.
    pub adj_close: Option<f64>,
    pub volume: f64,
}

impl OhlcvBar {
    fn validate(&self, ticker: &str) -> Result<()> {
        let ps = [self.open, self.high, self.low, self.close];
        if ps.iter().any(|p| !p.is_finite() || *p <= 0.0)
            || self.adj_close.is_some_and(|p| !p.is_finite() || p <= 0.0)
        {
            bail!(Validation, "non-positive price for {ticker} on {}", self.date);
        }
        if self.low > self.open.min(self.close) || self.high < self.open.max(self.close) {
            bail!(Validation, "inconsistent OHLC range for {ticker} on {}", self.date);
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            bail!(Validation, "negative volume for {ticker} on {}", self.date);
        }
        Ok(())
    }
}

/// Column-name mapping from a source CSV onto the canonical bar fields.
/// Defaults match the canonical header; override entries for exotic exports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub date: String,
    pub ticker: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
    /// `None` disables adjusted-close entirely; `Some(name)` reads it where
    /// the column exists and the cell is nonempty.
    pub adj_close: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            date: "date".into(),
            ticker: "ticker".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
            adj_close: Some("adj_close".into()),
        }
    }
}

/// Rectangular panel: every surviving ticker has exactly one bar per
/// calendar date. Tickers are kept in sorted order so column numbering is
/// independent of source row order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssetPanel {
    market: String,
    tickers: Vec<String>,
    calendar: Vec<NaiveDate>,
    /// `bars[asset][t]` aligned with `tickers`/`calendar`.
    bars: Vec<Vec<OhlcvBar>>,
    /// Tickers discarded for incomplete calendar coverage, with the first
    /// missing date for each — the ingest report.
    dropped: Vec<(String, NaiveDate)>,
}

impl AssetPanel {
    pub fn market(&self) -> &str {
        &self.market
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    /// Number of risky assets M (cash is not a column here).
    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn len(&self) -> usize {
        self.calendar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calendar.is_empty()
    }

    pub fn bar(&self, asset: usize, t: usize) -> &OhlcvBar {
        &self.bars[asset][t]
    }

    pub fn dropped(&self) -> &[(String, NaiveDate)] {
        &self.dropped
    }

    /// Close prices as a `[time, asset]` matrix.
    pub fn closes(&self) -> Array2<f64> {
        let (l, m) = (self.len(), self.n_assets());
        Array2::from_shape_fn((l, m), |(t, a)| self.bars[a][t].close)
    }

    /// Consistency check for panels loaded from disk rather than built by
    /// [`parse_ohlcv_csv`].
    pub fn validate(&self) -> Result<()> {
        if self.tickers.len() != self.bars.len() {
            bail!(Schema, "panel has {} tickers but {} bar rows", self.tickers.len(), self.bars.len());
        }
        if self.calendar.windows(2).any(|w| w[0] >= w[1]) {
            bail!(Validation, "panel calendar is not strictly increasing");
        }
        for (ticker, row) in self.tickers.iter().zip(&self.bars) {
            if row.len() != self.calendar.len() {
                bail!(Validation, "ticker {ticker} has {} bars for {} dates", row.len(), self.calendar.len());
            }
            for (bar, date) in row.iter().zip(&self.calendar) {
                if bar.date != *date {
                    bail!(Validation, "ticker {ticker} bar dated {} where calendar says {date}", bar.date);
                }
                bar.validate(ticker)?;
            }
        }
        Ok(())
    }
}

/// Parse long-format OHLCV CSV into a rectangular panel.
///
/// The calendar is the union of all dates seen; a ticker missing any of them
/// is dropped and reported (first missing date attached). Duplicate
/// `(ticker, date)` rows, unparseable cells, and inadmissible values are
/// hard errors — ingestion is the one place bad data is allowed to stop the
/// pipeline.
pub fn parse_ohlcv_csv(reader: impl Read, schema: &CsvSchema, market: &str) -> Result<AssetPanel> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| crate::CoreError::Schema(format!("csv header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| crate::CoreError::Schema(format!("missing column '{name}' in header {headers:?}")))
    };
    let c_date = col(&schema.date)?;
    let c_ticker = col(&schema.ticker)?;
    let c_open = col(&schema.open)?;
    let c_high = col(&schema.high)?;
    let c_low = col(&schema.low)?;
    let c_close = col(&schema.close)?;
    let c_volume = col(&schema.volume)?;
    let c_adj = schema
        .adj_close
        .as_ref()
        .and_then(|name| headers.iter().position(|h| h == name.as_str()));

    let mut by_ticker: BTreeMap<String, BTreeMap<NaiveDate, OhlcvBar>> = BTreeMap::new();
    let mut dates: BTreeSet<NaiveDate> = BTreeSet::new();

    for record in rdr.records() {
        let record = record.map_err(|e| crate::CoreError::Schema(format!("csv: {e}")))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| record.get(i).unwrap_or("");
        let date = NaiveDate::parse_from_str(get(c_date), "%Y-%m-%d")
            .map_err(|_| crate::CoreError::Schema(format!("line {line}: bad date '{}'", get(c_date))))?;
        let num = |i: usize, what: &str| -> Result<f64> {
            get(i)
                .trim()
                .parse::<f64>()
                .map_err(|_| crate::CoreError::Schema(format!("line {line}: bad {what} '{}'", get(i))))
        };
        let ticker = get(c_ticker).trim().to_string();
        if ticker.is_empty() {
            bail!(Schema, "line {line}: empty ticker");
        }
        let adj_close = match c_adj {
            Some(i) if !get(i).trim().is_empty() => Some(num(i, "adj_close")?),
            _ => None,
        };
        let bar = OhlcvBar {
            date,
            open: num(c_open, "open")?,
            high: num(c_high, "high")?,
            low: num(c_low, "low")?,
            close: num(c_close, "close")?,
            adj_close,
            volume: num(c_volume, "volume")?,
        };
        bar.validate(&ticker)?;
        dates.insert(date);
        if by_ticker.entry(ticker.clone()).or_default().insert(date, bar).is_some() {
            bail!(Validation, "duplicate bar for {ticker} on {date} (line {line})");
        }
    }

    let calendar: Vec<NaiveDate> = dates.into_iter().collect();
    if calendar.is_empty() {
        bail!(Validation, "no rows parsed for market {market}");
    }

    let mut tickers = Vec::new();
    let mut bars = Vec::new();
    let mut dropped = Vec::new();
    for (ticker, series) in by_ticker {
        match calendar.iter().find(|d| !series.contains_key(d)) {
            Some(missing) => dropped.push((ticker, *missing)),
            None => {
                // Adjusted close is all-or-nothing per ticker: a gap anywhere
                // silently mixing adjusted and raw levels would corrupt the
                // z_adj_close ratio, so fall back to close for the whole name.
                let complete_adj = calendar.iter().all(|d| series[d].adj_close.is_some());
                let row: Vec<OhlcvBar> = calendar
                    .iter()
                    .map(|d| {
                        let mut b = series[d].clone();
                        if !complete_adj {
                            b.adj_close = None;
                        }
                        b
                    })
                    .collect();
                tickers.push(ticker);
                bars.push(row);
            }
        }
    }

    if tickers.is_empty() {
        bail!(
            Validation,
            "market {market}: no ticker covers the full {}-date calendar (empty intersection); dropped {:?}",
            calendar.len(),
            dropped.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>()
        );
    }

    Ok(AssetPanel { market: market.to_string(), tickers, calendar, bars, dropped })
}


#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn csv_of(rows: &[&str]) -> String {
        let mut s = String::from("date,ticker,open,high,low,close,adj_close,volume\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn parses_rectangular_panel() {
        let data = csv_of(&[
            "2021-01-04,AAA,10,11,9,10.5,10.4,100",
            "2021-01-05,AAA,10.5,11.5,10,11,10.9,110",
            "2021-01-04,BBB,20,21,19,20.5,,200",
            "2021-01-05,BBB,20.5,21.5,20,21,,210",
        ]);
        let p = parse_ohlcv_csv(Cursor::new(data), &CsvSchema::default(), "us").unwrap();
        assert_eq!(p.n_assets(), 2);
        assert_eq!(p.len(), 2);
        assert_eq!(p.tickers(), ["AAA", "BBB"]);
        assert_eq!(p.bar(0, 1).close, 11.0);
        assert_eq!(p.bar(0, 0).adj_close, Some(10.4));
        assert_eq!(p.bar(1, 0).adj_close, None);
        assert!(p.dropped().is_empty());
        p.validate().unwrap();
    }

    #[test]
    fn incomplete_ticker_dropped_and_reported() {
        let data = csv_of(&[
            "2021-01-04,AAA,10,11,9,10.5,,100",
            "2021-01-05,AAA,10.5,11.5,10,11,,110",
            "2021-01-06,AAA,11,12,10.5,11.5,,120",
            "2021-01-04,BBB,20,21,19,20.5,,200",
            "2021-01-06,BBB,20.5,21.5,20,21,,210", // lacks 01-05
        ]);
        let p = parse_ohlcv_csv(Cursor::new(data), &CsvSchema::default(), "us").unwrap();
        assert_eq!(p.n_assets(), 1);
        assert_eq!(p.tickers(), ["AAA"]);
        assert_eq!(p.dropped().len(), 1);
        assert_eq!(p.dropped()[0].0, "BBB");
        assert_eq!(p.dropped()[0].1, NaiveDate::from_ymd_opt(2021, 1, 5).unwrap());
    }

    #[test]
    fn disjoint_calendars_is_empty_panel_error() {
        let data = csv_of(&[
            "2021-01-04,AAA,10,11,9,10.5,,100",
            "2021-01-05,BBB,20,21,19,20.5,,200",
        ]);
        let err = parse_ohlcv_csv(Cursor::new(data), &CsvSchema::default(), "us").unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("empty intersection"), "{err}");
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let data = csv_of(&[
            "2021-01-04,AAA,10,11,9,10.5,,100",
            "2021-01-05,AAA,oops,11.5,10,11,,110",
        ]);
        let err = parse_ohlcv_csv(Cursor::new(data), &CsvSchema::default(), "us").unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn non_positive_price_names_ticker_and_date() {
        let data = csv_of(&["2021-01-04,AAA,10,11,9,-2,,100"]);
        let err = parse_ohlcv_csv(Cursor::new(data), &CsvSchema::default(), "us").unwrap_err();
        assert_eq!(err.exit_code(), 4);
        let msg = err.to_string();
        assert!(msg.contains("AAA") && msg.contains("2021-01-04"), "{msg}");
    }

    #[test]
    fn inconsistent_ohlc_rejected() {
        // low above the open violates the bar invariant
        let data = csv_of(&["2021-01-04,AAA,10,11,10.6,10.5,,100"]);
        assert!(parse_ohlcv_csv(Cursor::new(data), &CsvSchema::default(), "us").is_err());
    }

    #[test]
    fn duplicate_bar_rejected() {
        let data = csv_of(&[
            "2021-01-04,AAA,10,11,9,10.5,,100",
            "2021-01-04,AAA,10,11,9,10.5,,100",
        ]);
        let err = parse_ohlcv_csv(Cursor::new(data), &CsvSchema::default(), "us").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn schema_remaps_column_names() {
        let data = "Date,Symbol,O,H,L,C,V\n2021-01-04,AAA,10,11,9,10.5,100\n";
        let schema = CsvSchema {
            date: "Date".into(),
            ticker: "Symbol".into(),
            open: "O".into(),
            high: "H".into(),
            low: "L".into(),
            close: "C".into(),
            volume: "V".into(),
            adj_close: None,
        };
        let p = parse_ohlcv_csv(Cursor::new(data), &schema, "us").unwrap();
        assert_eq!(p.n_assets(), 1);
        assert_eq!(p.bar(0, 0).adj_close, None);
    }

    #[test]
    fn partial_adj_close_falls_back_whole_ticker() {
        let data = csv_of(&[
            "2021-01-04,AAA,10,11,9,10.5,10.4,100",
            "2021-01-05,AAA,10.5,11.5,10,11,,110", // gap
        ]);
        let p = parse_ohlcv_csv(Cursor::new(data), &CsvSchema::default(), "us").unwrap();
        assert_eq!(p.bar(0, 0).adj_close, None);
        assert_eq!(p.bar(0, 1).adj_close, None);
    }

    #[test]
    fn panel_json_roundtrip() {
        let p = testutil::synthetic_panel("demo", &[0.001, 0.0], 0.01, 40, 1);
        let s = serde_json::to_string(&p).unwrap();
        let back: AssetPanel = serde_json::from_str(&s).unwrap();
        back.validate().unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }
}
