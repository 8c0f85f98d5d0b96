//! Shared fixtures for the integration suites: a small synthetic market,
//! a pipeline config pointed at it, and an in-process CLI runner. Each
//! test binary uses its own subset, hence the blanket dead-code allow.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use clap::Parser;
use compass_core::cli::{run, Cli};

/// Every pipeline stage that the synthetic fixture can drive, in
/// dependency order (`fetch` needs a network endpoint and stays out).
pub const STAGES: [&str; 10] = [
    "ingest", "split", "features", "train", "backtest", "evaluate", "profile", "rank",
    "heatmap", "compass",
];

/// Run one CLI invocation in-process, as `compass <args…>` would.
pub fn compass(args: &[&str]) -> compass_core::Result<()> {
    let argv: Vec<&str> = std::iter::once("compass").chain(args.iter().copied()).collect();
    run(Cli::try_parse_from(argv).expect("argv must parse"))
}

/// Three tickers, 160 consecutive days, smooth drifting paths with
/// asset-specific oscillation so vol, drawdowns, and covariance are all
/// comfortably non-degenerate.
pub fn write_market_csv(path: &Path) {
    let d0 = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
    let mut rows = String::from("date,ticker,open,high,low,close,volume\n");
    let close = |asset: usize, t: i64| -> f64 {
        let (drift, amp, phase) =
            [(0.0018, 0.03, 0.0), (0.0010, 0.05, 1.3), (0.0004, 0.04, 2.9)][asset];
        100.0 * (drift * t as f64 + amp * (0.7 * t as f64 + phase).sin()).exp()
    };
    for t in 0..160i64 {
        let date = d0 + Duration::days(t);
        for (a, ticker) in ["aaa", "bbb", "ccc"].iter().enumerate() {
            let c = close(a, t);
            let o = if t == 0 { c * 0.999 } else { close(a, t - 1) };
            let (hi, lo) = (o.max(c) * 1.002, o.min(c) * 0.998);
            rows.push_str(&format!("{date},{ticker},{o},{hi},{lo},{c},{}\n", 1000 + t));
        }
    }
    fs::write(path, rows).unwrap();
}

/// Write the fixture market plus a config whose artifacts land under
/// `dir/out`. Returns `(config path, out dir)`.
pub fn write_config(dir: &Path) -> (PathBuf, PathBuf) {
    write_config_at(dir, "out")
}

/// Same fixture, but artifacts land under `dir/<out_name>` — two configs
/// in one directory share the market CSV and differ only in that line.
pub fn write_config_at(dir: &Path, out_name: &str) -> (PathBuf, PathBuf) {
    let csv = dir.join("demo.csv");
    if !csv.exists() {
        write_market_csv(&csv);
    }
    let out = dir.join(out_name);
    let cfg = dir.join(format!("pipeline-{out_name}.conf"));
    fs::write(
        &cfg,
        format!(
            "out = {}\n\
             master_seed = 11\n\
             seeds = 0,1\n\
             phases = 2\n\
             span_days = 30\n\
             commission = 0.001\n\
             resamples = 50\n\
             embed_stride = 25\n\
             agent.hidden = 16\n\
             agent.batch = 16\n\
             agent.buffer = 400\n\
             agent.warmup = 30\n\
             agent.epochs = 2\n\
             agent.experts = 2\n\
             market.demo.data = {}\n\
             extreme.demo = 2021-01-01..2021-12-31\n",
            out.display(),
            csv.display()
        ),
    )
    .unwrap();
    (cfg, out)
}

/// Relative path → file bytes for the whole artifact tree.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, into: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, into);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                into.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut map = BTreeMap::new();
    walk(dir, dir, &mut map);
    map
}
