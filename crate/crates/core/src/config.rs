//! Pipeline configuration: one flat `key = value` file with dotted keys.
//!
//! ```text
//! # demo pipeline
//! out = runs/demo
//! master_seed = 7
//! seeds = 0,1,2,3,4
//! phases = 2
//! span_days = 365
//! commission = 0.0025
//!
//! market.us.data = data/us.csv
//! market.cn.data = data/cn.csv
//!
//! agent.epochs = 10
//! agent.experts = 3
//! agent.hidden = 128,128
//!
//! extreme.us = 2020-03-01..2020-04-30
//! ```
//!
//! Unknown keys and duplicate keys are errors — a typo that silently
//! falls back to a default is the most expensive kind of config bug.
//! Every value not mentioned keeps the documented default, so an empty
//! file is a valid config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::agent::{AgentConfig, Method};
use crate::error::{bail, CoreError, Result};
use crate::metrics::{LambdaPower, MetricOptions};

/// A dated stress window for extreme-market evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtremeWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

/// Everything a pipeline run needs, assembled from defaults plus one
/// config file plus command-line overrides.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// market name → OHLCV CSV path
    pub markets: BTreeMap<String, PathBuf>,
    pub out: PathBuf,
    /// run seeds the train/backtest fan-out iterates over
    pub seeds: Vec<u64>,
    /// the single root of every rng stream in the pipeline
    pub master_seed: u64,
    pub phases: usize,
    pub span_days: i64,
    pub commission: f64,
    pub initial_value: f64,
    pub stack: usize,
    /// bootstrap resamples behind profile bands and reliability
    pub resamples: usize,
    /// every `stride`-th feature row lands in the embedding export
    pub embed_stride: usize,
    pub methods: Vec<Method>,
    pub agent: AgentConfig,
    pub extreme: BTreeMap<String, ExtremeWindow>,
    pub extreme_k: f64,
    pub ent_exp: bool,
    pub lambda_power: LambdaPower,
    /// compass template path; `None` renders the generated default
    pub template: Option<PathBuf>,
    pub fetch_url: Option<String>,
    pub fetch_symbols: Vec<String>,
    pub fetch_range: Option<(NaiveDate, NaiveDate)>,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut extreme = BTreeMap::new();
        extreme.insert(
            "china".to_string(),
            ExtremeWindow { start: ymd(2021, 2, 1), end: ymd(2021, 3, 31) },
        );
        extreme.insert(
            "us".to_string(),
            ExtremeWindow { start: ymd(2020, 3, 1), end: ymd(2020, 4, 30) },
        );
        extreme.insert(
            "crypto".to_string(),
            ExtremeWindow { start: ymd(2021, 4, 1), end: ymd(2021, 5, 31) },
        );
        PipelineConfig {
            markets: BTreeMap::new(),
            out: PathBuf::from("out"),
            seeds: vec![0, 1, 2, 3, 4],
            master_seed: 0,
            phases: 2,
            span_days: 365,
            commission: 0.0,
            initial_value: 100.0,
            stack: 3,
            resamples: 2000,
            embed_stride: 10,
            methods: Method::ALL.to_vec(),
            agent: AgentConfig::default(),
            extreme,
            extreme_k: 1.0,
            ent_exp: false,
            lambda_power: LambdaPower::Squared,
            template: None,
            fetch_url: None,
            fetch_symbols: Vec::new(),
            fetch_range: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            CoreError::Missing(format!("config {}: {e}", path.display()))
        })?;
        parse_config(&text)
    }

    pub fn metric_options(&self) -> MetricOptions {
        MetricOptions { ent_exp: self.ent_exp, lambda_power: self.lambda_power }
    }

    /// Cheap structural checks. Declared market data files must exist;
    /// whether a command *needs* any markets at all is its own business.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!(Validation, "seed list is empty");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            bail!(Validation, "seed list has duplicates");
        }
        if self.methods.is_empty() {
            bail!(Validation, "method list is empty");
        }
        let mut methods = self.methods.clone();
        methods.sort_by_key(|m| m.name());
        methods.dedup();
        if methods.len() != self.methods.len() {
            bail!(Validation, "method list has duplicates");
        }
        if self.phases == 0 {
            bail!(Validation, "phase count must be at least 1");
        }
        if self.span_days <= 0 {
            bail!(Validation, "span_days must be positive");
        }
        if self.stack == 0 {
            bail!(Validation, "stack must be at least 1");
        }
        if self.resamples == 0 {
            bail!(Validation, "resamples must be at least 1");
        }
        if self.embed_stride == 0 {
            bail!(Validation, "embed_stride must be at least 1");
        }
        if !(0.0..0.5).contains(&self.commission) {
            bail!(Validation, "commission {} outside [0, 0.5)", self.commission);
        }
        if !(self.initial_value.is_finite() && self.initial_value > 0.0) {
            bail!(Validation, "initial_value must be positive");
        }
        if !(self.extreme_k.is_finite() && self.extreme_k > 0.0) {
            bail!(Validation, "extreme_k must be positive");
        }
        for (market, w) in &self.extreme {
            if w.start > w.end {
                bail!(Validation, "extreme window for {market} starts after it ends");
            }
        }
        for (market, path) in &self.markets {
            if !path.exists() {
                return Err(CoreError::Missing(format!(
                    "data file for market {market}: {}",
                    path.display()
                )));
            }
        }
        if let Some((start, end)) = self.fetch_range {
            if start > end {
                bail!(Validation, "fetch range starts after it ends");
            }
        }
        self.agent.validate()?;
        Ok(())
    }
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| CoreError::Schema(format!("bad date {s:?}: {e}")))
}

fn parse_window(s: &str) -> Result<ExtremeWindow> {
    let Some((a, b)) = s.split_once("..") else {
        bail!(Schema, "expected START..END, got {s:?}");
    };
    Ok(ExtremeWindow { start: parse_date(a.trim())?, end: parse_date(b.trim())? })
}

/// Parse config text. Lines are `key = value`; `#` starts a comment;
/// blank lines are ignored.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    let mut seen: Vec<String> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let Some((key, value)) = line.split_once('=') else {
            bail!(Schema, "line {lineno}: expected key = value, got {line:?}");
        };
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|k| k == key) {
            bail!(Schema, "line {lineno}: duplicate key {key}");
        }
        seen.push(key.to_string());

        let ctx = |what: &str| {
            CoreError::Schema(format!("line {lineno}: {key}: invalid {what} {value:?}"))
        };
        macro_rules! num {
            ($ty:ty, $what:expr) => {
                value.parse::<$ty>().map_err(|_| ctx($what))?
            };
        }

        match key {
            "out" => cfg.out = PathBuf::from(value),
            "master_seed" => cfg.master_seed = num!(u64, "integer"),
            "seeds" => {
                cfg.seeds = value
                    .split(',')
                    .map(|s| s.trim().parse::<u64>().map_err(|_| ctx("seed list")))
                    .collect::<Result<_>>()?;
            }
            "phases" => cfg.phases = num!(usize, "integer"),
            "span_days" => cfg.span_days = num!(i64, "integer"),
            "commission" => cfg.commission = num!(f64, "number"),
            "initial_value" => cfg.initial_value = num!(f64, "number"),
            "stack" => cfg.stack = num!(usize, "integer"),
            "resamples" => cfg.resamples = num!(usize, "integer"),
            "embed_stride" => cfg.embed_stride = num!(usize, "integer"),
            "extreme_k" => cfg.extreme_k = num!(f64, "number"),
            "ent_exp" => cfg.ent_exp = num!(bool, "boolean"),
            "lambda_power" => {
                cfg.lambda_power = match value {
                    "squared" => LambdaPower::Squared,
                    "linear" => LambdaPower::Linear,
                    _ => return Err(ctx("lambda power (squared|linear)")),
                }
            }
            "template" => cfg.template = Some(PathBuf::from(value)),
            "methods" => {
                cfg.methods = value
                    .split(',')
                    .map(|s| s.trim().parse::<Method>())
                    .collect::<Result<_>>()?;
            }
            "agent.hidden" => {
                cfg.agent.hidden = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>().map_err(|_| ctx("width list")))
                    .collect::<Result<_>>()?;
            }
            "agent.lr" => cfg.agent.lr = num!(f64, "number"),
            "agent.gamma" => cfg.agent.gamma = num!(f64, "number"),
            "agent.alpha" => cfg.agent.alpha = num!(f64, "number"),
            "agent.rho" => cfg.agent.rho = num!(f64, "number"),
            "agent.batch" => cfg.agent.batch_size = num!(usize, "integer"),
            "agent.buffer" => cfg.agent.buffer_capacity = num!(usize, "integer"),
            "agent.warmup" => cfg.agent.warmup = num!(usize, "integer"),
            "agent.epochs" => cfg.agent.epochs = num!(usize, "integer"),
            "agent.experts" => cfg.agent.experts = num!(usize, "integer"),
            "agent.beta" => cfg.agent.beta = num!(f64, "number"),
            "agent.temperature" => cfg.agent.temperature = num!(f64, "number"),
            "agent.floor" => cfg.agent.floor = num!(f64, "number"),
            "fetch.url" => cfg.fetch_url = Some(value.to_string()),
            "fetch.symbols" => {
                cfg.fetch_symbols =
                    value.split(',').map(|s| s.trim().to_string()).collect();
            }
            "fetch.start" => {
                let start = parse_date(value)?;
                let end = cfg.fetch_range.map(|(_, e)| e).unwrap_or(start);
                cfg.fetch_range = Some((start, end));
            }
            "fetch.end" => {
                let end = parse_date(value)?;
                let start = cfg.fetch_range.map(|(s, _)| s).unwrap_or(end);
                cfg.fetch_range = Some((start, end));
            }
            _ => {
                if let Some(rest) = key.strip_prefix("market.") {
                    let Some(name) = rest.strip_suffix(".data") else {
                        bail!(Schema, "line {lineno}: unknown market key {key}");
                    };
                    if name.is_empty() || !is_slug(name) {
                        bail!(
                            Schema,
                            "line {lineno}: market name must be a lowercase slug, got {name:?}"
                        );
                    }
                    cfg.markets.insert(name.to_string(), PathBuf::from(value));
                } else if let Some(market) = key.strip_prefix("extreme.") {
                    if !is_slug(market) {
                        bail!(
                            Schema,
                            "line {lineno}: market name must be a lowercase slug, got {market:?}"
                        );
                    }
                    let window = parse_window(value)
                        .map_err(|e| CoreError::Schema(format!("line {lineno}: {e}")))?;
                    cfg.extreme.insert(market.to_string(), window);
                } else {
                    bail!(Schema, "line {lineno}: unknown key {key}");
                }
            }
        }
    }
    Ok(cfg)
}

/// Market names end up in file names and rng tags; keep them boring.
fn is_slug(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}
