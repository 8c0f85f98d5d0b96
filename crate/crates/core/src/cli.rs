//! The `compass` command-line pipeline.
//!
//! Every subcommand reads the artifacts of the stages before it and writes
//! one layer of the output tree, so a full evaluation is
//!
//! ```text
//! ingest → split → features → train → backtest → evaluate
//!        → profile → rank → heatmap → compass
//! ```
//!
//! and any stage can be re-run in isolation. Stages are deterministic
//! functions of the config file and their input artifacts: re-running one
//! rewrites byte-identical files, and `--jobs` only changes how fast the
//! fan-out finishes, never what it produces.
//!
//! Artifact tree under the configured `out` directory:
//!
//! ```text
//! panels/<market>.json                                   ingest
//! splits/<market>.json                                   split
//! features/<market>.json                                 features
//! embed/<market>_phase<P>.csv                            features
//! checkpoints/<market>_phase<P>_<method>_seed<S>.json    train
//! train_reports/<market>_phase<P>_<method>_seed<S>.json  train
//! records/<market>_phase<P>_<method>_seed<S>.json        backtest
//! metrics.csv  stars.csv  extreme.csv  equity/*.csv      evaluate
//! profiles.csv                                           profile
//! ranks.csv                                              rank
//! heatmaps/<market>.csv                                  heatmap
//! axes.csv  compass.md  compass.json                     compass
//! ```
//!
//! Randomness: the single `master_seed` from the config roots every rng
//! stream in every stage. Run coordinates enter only through stream tags
//! (`train/us/phase2/alphamix/seed3`, `backtest/…`, `axes`), so no two
//! runs share draws and neither scheduling nor re-runs can shift a result.
//!
//! `--market`, `--phase`, and `--seed` narrow a stage's fan-out. Stages
//! that pool the whole grid (evaluate onward) reject them instead of
//! silently producing a table that looks complete but is not.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::agent::{backtest, train_agent, Method, TrainedPolicy};
use crate::config::{ExtremeWindow, PipelineConfig};
use crate::env::{EnvConfig, PortfolioEnv, RunRecord};
use crate::error::{bail, CoreError, Result};
use crate::market::{
    compute_features, export_embedding_samples, fetch_remote_csv, make_rolling_splits,
    normalize_features, parse_ohlcv_csv, AssetPanel, CsvSchema, Endpoint, FeaturePanel,
    SplitPlan, WARMUP,
};
use crate::metrics::{
    asset_return_window, average_portfolio, compute_metrics, extreme_score,
    read_metrics_csv, write_metrics_csv, MetricsRow,
};
use crate::report::compass::{
    default_marks, default_template, fill_template, CompassSpec, MethodCompass,
};
use crate::report::{pride_star_scores, write_equity_csv, write_heatmap_csv, write_pride_star_csv};
use crate::score::axes::compute_axis_scores;
use crate::score::profile::{performance_profile, write_profile_csv, ProfileCurve};
use crate::score::rank::{rank_distribution, write_rank_csv, Direction};
use crate::score::{build_references, profit_score, K_PCT, REFERENCE_METHOD};
use crate::seed::{component_rng, derive_seed};

/// Name of the environment variable that overrides the fetch cache
/// directory (default: `<out>/cache`).
pub const CACHE_DIR_VAR: &str = "COMPASS_CACHE_DIR";

const EXIT_HELP: &str = "exit codes:
  0  success
  1  i/o failure
  2  missing input (config, data file, upstream artifact)
  3  malformed input (CSV schema, JSON, config keys, template)
  4  inadmissible values (validation or domain)
  5  training aborted
  6  network failure";

#[derive(Debug, Parser)]
#[command(
    name = "compass",
    version,
    about = "Train portfolio agents and score them on a six-axis evaluation compass",
    after_help = EXIT_HELP
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline config file (`key = value` lines); defaults apply without one
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Restrict the fan-out to one market
    #[arg(long, global = true)]
    pub market: Option<String>,
    /// Restrict the fan-out to one phase (1-based)
    #[arg(long, global = true)]
    pub phase: Option<usize>,
    /// Restrict the fan-out to one run seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the train/backtest fan-out
    #[arg(long, global = true, default_value_t = default_jobs())]
    pub jobs: usize,
    /// Artifact directory, overriding the config's `out`
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print what would be written, write nothing
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse market OHLCV CSVs into rectangular panels
    Ingest,
    /// Cut each market's calendar into rolling train/valid/test phases
    Split,
    /// Compute indicator features and export embedding samples per phase
    Features,
    /// Train each trainable method per market, phase, and run seed
    Train,
    /// Replay trained and baseline policies over held-out test windows
    Backtest,
    /// Turn run records into the metrics table, star scores, stress table,
    /// and equity curves
    Evaluate,
    /// Bootstrap performance profiles of total-return scores
    Profile,
    /// Rank-probability distributions per metric
    Rank,
    /// Pooled portfolio-weight heatmaps per market
    Heatmap,
    /// Fill the compass document from the metrics table
    Compass,
    /// Download OHLCV CSVs into the local cache
    Fetch,
}

/// Parse-then-run entry point used by `main` and the integration tests.
pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(cli.common)?;
    match cli.command {
        Command::Ingest => ctx.ingest(),
        Command::Split => ctx.split(),
        Command::Features => ctx.features(),
        Command::Train => ctx.train(),
        Command::Backtest => ctx.backtest(),
        Command::Evaluate => ctx.evaluate(),
        Command::Profile => ctx.profile(),
        Command::Rank => ctx.rank(),
        Command::Heatmap => ctx.heatmap(),
        Command::Compass => ctx.compass(),
        Command::Fetch => ctx.fetch(),
    }
}

#[derive(Debug)]
struct Ctx {
    cfg: PipelineConfig,
    market: Option<String>,
    phase: Option<usize>,
    seed: Option<u64>,
    jobs: usize,
    dry_run: bool,
}

impl Ctx {
    fn new(common: Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(out) = common.out {
            cfg.out = out;
        }
        cfg.validate()?;

        if common.jobs == 0 {
            bail!(Validation, "--jobs must be at least 1");
        }
        if let Some(m) = &common.market {
            if !cfg.markets.contains_key(m) {
                bail!(
                    Validation,
                    "unknown market {m}; configured: {}",
                    cfg.markets.keys().cloned().collect::<Vec<_>>().join(", ")
                );
            }
        }
        if let Some(p) = common.phase {
            if p == 0 || p > cfg.phases {
                bail!(Validation, "--phase {p} out of range 1..={}", cfg.phases);
            }
        }
        if let Some(s) = common.seed {
            if !cfg.seeds.contains(&s) {
                bail!(
                    Validation,
                    "--seed {s} is not in the configured seed list {:?}",
                    cfg.seeds
                );
            }
        }
        Ok(Ctx {
            cfg,
            market: common.market,
            phase: common.phase,
            seed: common.seed,
            jobs: common.jobs,
            dry_run: common.dry_run,
        })
    }

    // ---- fan-out dimensions -------------------------------------------

    fn markets(&self) -> Result<Vec<(&str, &Path)>> {
        if self.cfg.markets.is_empty() {
            bail!(Validation, "no markets configured (add market.<name>.data lines)");
        }
        Ok(self
            .cfg
            .markets
            .iter()
            .filter(|(name, _)| self.market.as_deref().is_none_or(|m| m == name.as_str()))
            .map(|(name, path)| (name.as_str(), path.as_path()))
            .collect())
    }

    fn phase_numbers(&self) -> Vec<usize> {
        match self.phase {
            Some(p) => vec![p],
            None => (1..=self.cfg.phases).collect(),
        }
    }

    fn run_seeds(&self) -> Vec<u64> {
        match self.seed {
            Some(s) => vec![s],
            None => self.cfg.seeds.clone(),
        }
    }

    /// Pooling stages reject fan-out filters: a metrics table or compass
    /// built from a slice of the grid would be silently wrong downstream.
    fn reject_filters(&self, stage: &str, dims: &[(&str, bool)]) -> Result<()> {
        for (flag, set) in dims {
            if *set {
                bail!(Validation, "--{flag} does not apply to `compass {stage}`");
            }
        }
        Ok(())
    }

    fn no_market_filter(&self, stage: &str) -> Result<()> {
        self.reject_filters(stage, &[("market", self.market.is_some())])
    }

    fn no_phase_seed_filters(&self, stage: &str) -> Result<()> {
        self.reject_filters(
            stage,
            &[("phase", self.phase.is_some()), ("seed", self.seed.is_some())],
        )
    }

    // ---- artifact paths ------------------------------------------------

    fn sub(&self, dir: &str, file: String) -> PathBuf {
        self.cfg.out.join(dir).join(file)
    }

    fn panel_path(&self, market: &str) -> PathBuf {
        self.sub("panels", format!("{market}.json"))
    }

    fn split_path(&self, market: &str) -> PathBuf {
        self.sub("splits", format!("{market}.json"))
    }

    fn features_path(&self, market: &str) -> PathBuf {
        self.sub("features", format!("{market}.json"))
    }

    fn embed_path(&self, market: &str, phase: usize) -> PathBuf {
        self.sub("embed", format!("{market}_phase{phase}.csv"))
    }

    fn run_file(&self, dir: &str, market: &str, phase: usize, method: Method, seed: u64) -> PathBuf {
        self.sub(dir, format!("{market}_phase{phase}_{}_seed{seed}.json", method.name()))
    }

    fn checkpoint_path(&self, market: &str, phase: usize, method: Method, seed: u64) -> PathBuf {
        self.run_file("checkpoints", market, phase, method, seed)
    }

    fn train_report_path(&self, market: &str, phase: usize, method: Method, seed: u64) -> PathBuf {
        self.run_file("train_reports", market, phase, method, seed)
    }

    fn record_path(&self, market: &str, phase: usize, method: Method, seed: u64) -> PathBuf {
        self.run_file("records", market, phase, method, seed)
    }

    fn equity_path(&self, market: &str, phase: usize) -> PathBuf {
        self.sub("equity", format!("{market}_phase{phase}.csv"))
    }

    fn heatmap_path(&self, market: &str) -> PathBuf {
        self.sub("heatmaps", format!("{market}.csv"))
    }

    fn top(&self, file: &str) -> PathBuf {
        self.cfg.out.join(file)
    }

    fn cache_dir(&self) -> PathBuf {
        std::env::var_os(CACHE_DIR_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.cfg.out.join("cache"))
    }

    fn env_config(&self) -> EnvConfig {
        EnvConfig {
            commission: self.cfg.commission,
            initial_value: self.cfg.initial_value,
            stack: self.cfg.stack,
        }
    }

    /// Dry-run gate: print the plan and report whether to stop.
    fn plan_only(&self, targets: &[PathBuf]) -> bool {
        if self.dry_run {
            for t in targets {
                println!("would write {}", t.display());
            }
        }
        self.dry_run
    }

    fn announce(&self, targets: &[PathBuf]) {
        for t in targets {
            println!("wrote {}", t.display());
        }
    }

    // ---- stage inputs ----------------------------------------------------

    fn load_panel(&self, market: &str) -> Result<AssetPanel> {
        load_json(&self.panel_path(market), "ingest")
    }

    fn load_plan(&self, market: &str) -> Result<SplitPlan> {
        load_json(&self.split_path(market), "split")
    }

    fn load_raw_features(&self, market: &str) -> Result<FeaturePanel> {
        load_json(&self.features_path(market), "features")
    }

    fn load_metrics(&self) -> Result<Vec<MetricsRow>> {
        let path = self.top("metrics.csv");
        let file = File::open(&path).map_err(|e| {
            CoreError::Missing(format!(
                "{}: {e} (run `compass evaluate` first)",
                path.display()
            ))
        })?;
        read_metrics_csv(BufReader::new(file))
    }

    fn load_record(&self, market: &str, phase: usize, method: Method, seed: u64) -> Result<RunRecord> {
        load_json(&self.record_path(market, phase, method, seed), "backtest")
    }

    /// Normalization stats are fit on the phase's training window only —
    /// clamped past the indicator warmup — and then applied to the whole
    /// panel, so later segments never leak statistics backwards.
    fn normalized_for_phase(
        &self,
        raw: &FeaturePanel,
        plan: &SplitPlan,
        phase: usize,
    ) -> Result<FeaturePanel> {
        let train = plan.phase(phase)?.train;
        normalize_features(raw, (train.0.max(raw.warmup()), train.1))
    }

    // ---- stages ---------------------------------------------------------

    fn ingest(&self) -> Result<()> {
        self.no_phase_seed_filters("ingest")?;
        let markets = self.markets()?;
        let targets: Vec<PathBuf> =
            markets.iter().map(|(m, _)| self.panel_path(m)).collect();
        if self.plan_only(&targets) {
            return Ok(());
        }
        for (market, data) in &markets {
            let file = File::open(data).map_err(|e| {
                CoreError::Missing(format!("data file {}: {e}", data.display()))
            })?;
            let panel =
                parse_ohlcv_csv(BufReader::new(file), &CsvSchema::default(), market)?;
            if !panel.dropped().is_empty() {
                eprintln!(
                    "note: {market}: dropped {} tickers with incomplete calendars",
                    panel.dropped().len()
                );
            }
            save_json(&self.panel_path(market), &panel)?;
        }
        self.announce(&targets);
        Ok(())
    }

    fn split(&self) -> Result<()> {
        self.no_phase_seed_filters("split")?;
        let markets = self.markets()?;
        let targets: Vec<PathBuf> =
            markets.iter().map(|(m, _)| self.split_path(m)).collect();
        if self.plan_only(&targets) {
            return Ok(());
        }
        for (market, _) in &markets {
            let panel = self.load_panel(market)?;
            let plan = make_rolling_splits(
                panel.calendar(),
                self.cfg.phases,
                self.cfg.span_days,
                WARMUP,
            )?;
            save_json(&self.split_path(market), &plan)?;
        }
        self.announce(&targets);
        Ok(())
    }

    fn features(&self) -> Result<()> {
        self.reject_filters("features", &[("seed", self.seed.is_some())])?;
        let markets = self.markets()?;
        let mut targets = Vec::new();
        for (market, _) in &markets {
            targets.push(self.features_path(market));
            for phase in self.phase_numbers() {
                targets.push(self.embed_path(market, phase));
            }
        }
        if self.plan_only(&targets) {
            return Ok(());
        }
        for (market, _) in &markets {
            let panel = self.load_panel(market)?;
            let raw = compute_features(&panel)?;
            save_json(&self.features_path(market), &raw)?;
            let plan = self.load_plan(market)?;
            for phase in self.phase_numbers() {
                let normalized = self.normalized_for_phase(&raw, &plan, phase)?;
                write_file(&self.embed_path(market, phase), |out| {
                    export_embedding_samples(&normalized, self.cfg.embed_stride, out)
                        .map(|_| ())
                })?;
            }
        }
        self.announce(&targets);
        Ok(())
    }

    fn train(&self) -> Result<()> {
        let methods: Vec<Method> =
            self.cfg.methods.iter().copied().filter(|m| m.is_trainable()).collect();
        let markets = self.markets()?;
        let mut targets = Vec::new();
        for (market, _) in &markets {
            for phase in self.phase_numbers() {
                for &method in &methods {
                    for seed in self.run_seeds() {
                        targets.push(self.checkpoint_path(market, phase, method, seed));
                        targets.push(self.train_report_path(market, phase, method, seed));
                    }
                }
            }
        }
        if self.plan_only(&targets) {
            return Ok(());
        }
        if methods.is_empty() {
            eprintln!("note: no trainable methods configured; nothing to do");
            return Ok(());
        }
        fs::create_dir_all(self.cfg.out.join("checkpoints"))?;
        fs::create_dir_all(self.cfg.out.join("train_reports"))?;
        for (market, _) in &markets {
            let panel = self.load_panel(market)?;
            let raw = self.load_raw_features(market)?;
            let plan = self.load_plan(market)?;
            for phase in self.phase_numbers() {
                let normalized = self.normalized_for_phase(&raw, &plan, phase)?;
                let segment = plan.phase(phase)?.train;
                let units: Vec<(Method, u64)> = methods
                    .iter()
                    .flat_map(|&m| self.run_seeds().into_iter().map(move |s| (m, s)))
                    .collect();
                run_units(self.jobs, &units, |&(method, seed)| {
                    let mut env =
                        PortfolioEnv::new(&normalized, &panel, segment, self.env_config())?;
                    let tag =
                        format!("train/{market}/phase{phase}/{}/seed{seed}", method.name());
                    let (policy, report) = train_agent(
                        &mut env,
                        method,
                        &self.cfg.agent,
                        self.cfg.master_seed,
                        &tag,
                    )?;
                    policy.save(&self.checkpoint_path(market, phase, method, seed))?;
                    save_json(
                        &self.train_report_path(market, phase, method, seed),
                        &report,
                    )?;
                    Ok(())
                })?;
            }
        }
        self.announce(&targets);
        Ok(())
    }

    fn backtest(&self) -> Result<()> {
        let markets = self.markets()?;
        let mut targets = Vec::new();
        for (market, _) in &markets {
            for phase in self.phase_numbers() {
                for &method in &self.cfg.methods {
                    for seed in self.run_seeds() {
                        targets.push(self.record_path(market, phase, method, seed));
                    }
                }
            }
        }
        if self.plan_only(&targets) {
            return Ok(());
        }
        fs::create_dir_all(self.cfg.out.join("records"))?;
        for (market, _) in &markets {
            let panel = self.load_panel(market)?;
            let raw = self.load_raw_features(market)?;
            let plan = self.load_plan(market)?;
            for phase in self.phase_numbers() {
                let normalized = self.normalized_for_phase(&raw, &plan, phase)?;
                let segment = plan.phase(phase)?.test;
                let units: Vec<(Method, u64)> = self
                    .cfg
                    .methods
                    .iter()
                    .flat_map(|&m| self.run_seeds().into_iter().map(move |s| (m, s)))
                    .collect();
                run_units(self.jobs, &units, |&(method, seed)| {
                    let policy = match method {
                        Method::Random => TrainedPolicy::Random,
                        Method::MarketAverage => TrainedPolicy::MarketAverage,
                        _ => {
                            let path = self.checkpoint_path(market, phase, method, seed);
                            let policy = TrainedPolicy::load(&path)?;
                            if policy.method_name() != method.name() {
                                bail!(
                                    Schema,
                                    "checkpoint {} holds a {} policy, expected {}",
                                    path.display(),
                                    policy.method_name(),
                                    method.name()
                                );
                            }
                            policy
                        }
                    };
                    let mut env =
                        PortfolioEnv::new(&normalized, &panel, segment, self.env_config())?;
                    let mut rng = component_rng(
                        self.cfg.master_seed,
                        &format!("backtest/{market}/phase{phase}/{}/seed{seed}", method.name()),
                    );
                    let record = backtest(&policy, &mut env, phase, seed, &mut rng)?;
                    record.validate()?;
                    save_json(&self.record_path(market, phase, method, seed), &record)?;
                    Ok(())
                })?;
            }
        }
        self.announce(&targets);
        Ok(())
    }

    fn evaluate(&self) -> Result<()> {
        self.no_market_filter("evaluate")?;
        self.no_phase_seed_filters("evaluate")?;
        let markets = self.markets()?;
        let mut targets =
            vec![self.top("metrics.csv"), self.top("stars.csv"), self.top("extreme.csv")];
        for (market, _) in &markets {
            for phase in self.phase_numbers() {
                targets.push(self.equity_path(market, phase));
            }
        }
        if self.plan_only(&targets) {
            return Ok(());
        }

        let opts = self.cfg.metric_options();
        let mut rows: Vec<MetricsRow> = Vec::new();
        // records per (market, phase), in method-then-seed order
        let mut groups: BTreeMap<(String, usize), Vec<RunRecord>> = BTreeMap::new();
        for (market, _) in &markets {
            let panel = self.load_panel(market)?;
            for phase in self.phase_numbers() {
                let group = groups.entry((market.to_string(), phase)).or_default();
                for &method in &self.cfg.methods {
                    for seed in self.run_seeds() {
                        let record = self.load_record(market, phase, method, seed)?;
                        let window = asset_return_window(&panel, &record.dates)?;
                        rows.push(compute_metrics(&record, Some(window.view()), opts));
                        group.push(record);
                    }
                }
            }
        }
        rows.sort_by(|a, b| {
            (&a.method, &a.market, a.phase, a.seed).cmp(&(
                &b.method,
                &b.market,
                b.phase,
                b.seed,
            ))
        });
        write_file(&self.top("metrics.csv"), |out| write_metrics_csv(&rows, out))?;

        let stars = pride_star_scores(&rows)?;
        write_file(&self.top("stars.csv"), |out| write_pride_star_csv(&stars, out))?;

        write_file(&self.top("extreme.csv"), |out| self.extreme_table(&groups, out))?;

        for ((market, phase), records) in &groups {
            write_file(&self.equity_path(market, *phase), |out| {
                write_equity_csv(records, out)
            })?;
        }
        self.announce(&targets);
        Ok(())
    }

    /// Stress table: total return over each market's extreme window, the
    /// market-average return over the same dates, and the relative
    /// outperformance transform of the pair. Phases whose test span misses
    /// the window are skipped with a note.
    fn extreme_table(
        &self,
        groups: &BTreeMap<(String, usize), Vec<RunRecord>>,
        out: &mut impl Write,
    ) -> Result<()> {
        writeln!(out, "market,phase,method,seed,tr,tr_ref,score")?;
        for ((market, phase), records) in groups {
            let Some(window) = self.cfg.extreme.get(market) else {
                continue;
            };
            let mut reference: BTreeMap<u64, f64> = BTreeMap::new();
            for r in records.iter().filter(|r| r.method == Method::MarketAverage.name()) {
                if let Some(tr) = window_return(r, window) {
                    reference.insert(r.seed, tr);
                }
            }
            if reference.is_empty() {
                eprintln!(
                    "note: extreme window for {market} misses the phase {phase} test span"
                );
                continue;
            }
            let mut sorted: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.method != Method::MarketAverage.name())
                .collect();
            sorted.sort_by(|a, b| (&a.method, a.seed).cmp(&(&b.method, b.seed)));
            for r in sorted {
                let (Some(tr), Some(&tr_ref)) =
                    (window_return(r, window), reference.get(&r.seed))
                else {
                    continue;
                };
                let score = extreme_score(tr, tr_ref, self.cfg.extreme_k).map_err(|e| {
                    CoreError::Domain(format!(
                        "extreme window {market}/phase{phase}/{}/seed{}: {e}",
                        r.method, r.seed
                    ))
                })?;
                writeln!(
                    out,
                    "{market},{phase},{},{},{tr},{tr_ref},{score}",
                    r.method, r.seed
                )?;
            }
        }
        Ok(())
    }

    /// Performance profiles of per-run total-return scores, one curve per
    /// method. Seeds are derived exactly as the reliability axis derives
    /// them, so these are the same curves the compass stage integrates.
    fn profile(&self) -> Result<()> {
        self.no_market_filter("profile")?;
        self.no_phase_seed_filters("profile")?;
        let targets = vec![self.top("profiles.csv")];
        if self.plan_only(&targets) {
            return Ok(());
        }
        let rows = self.load_metrics()?;
        let refs = build_references(&rows)?;
        let mut methods: Vec<String> = rows.iter().map(|r| r.method.clone()).collect();
        methods.sort();
        methods.dedup();

        let axes_seed = derive_seed(self.cfg.master_seed, "axes");
        let mut curves: Vec<(String, ProfileCurve)> = Vec::new();
        for method in &methods {
            let entries: Vec<(String, f64)> = rows
                .iter()
                .filter(|r| &r.method == method)
                .map(|r| {
                    let key = (r.market.clone(), r.phase);
                    let tr_ref = refs[&key].value("tr").ok_or_else(|| {
                        CoreError::Validation(format!(
                            "no reference total return for {}/phase{}",
                            r.market, r.phase
                        ))
                    })?;
                    let stratum = format!("{}/phase{}", r.market, r.phase);
                    Ok((stratum, profit_score(r.tr, tr_ref, K_PCT).0))
                })
                .collect::<Result<_>>()?;
            let curve = performance_profile(
                &entries,
                self.cfg.resamples,
                0.95,
                derive_seed(axes_seed, &format!("reliability/{method}")),
            )?;
            curves.push((method.clone(), curve));
        }
        let borrowed: Vec<(&str, &ProfileCurve)> =
            curves.iter().map(|(m, c)| (m.as_str(), c)).collect();
        write_file(&self.top("profiles.csv"), |out| write_profile_csv(&borrowed, out))?;
        self.announce(&targets);
        Ok(())
    }

    fn rank(&self) -> Result<()> {
        self.no_market_filter("rank")?;
        self.no_phase_seed_filters("rank")?;
        let targets = vec![self.top("ranks.csv")];
        if self.plan_only(&targets) {
            return Ok(());
        }
        let rows = self.load_metrics()?;
        let spec = [
            ("tr", Direction::HigherBetter),
            ("sr", Direction::HigherBetter),
            ("cr", Direction::HigherBetter),
            ("sor", Direction::HigherBetter),
            ("vol", Direction::LowerBetter),
            ("mdd", Direction::LowerBetter),
        ];
        let mut matrices = Vec::new();
        for (metric, direction) in spec {
            let matrix = rank_distribution(&rows, metric, direction)?;
            matrix.validate()?;
            matrices.push((metric, matrix));
        }
        let borrowed: Vec<_> = matrices.iter().map(|(m, x)| (*m, x)).collect();
        write_file(&self.top("ranks.csv"), |out| write_rank_csv(&borrowed, out))?;
        self.announce(&targets);
        Ok(())
    }

    fn heatmap(&self) -> Result<()> {
        self.no_phase_seed_filters("heatmap")?;
        let markets = self.markets()?;
        let targets: Vec<PathBuf> =
            markets.iter().map(|(m, _)| self.heatmap_path(m)).collect();
        if self.plan_only(&targets) {
            return Ok(());
        }
        for (market, _) in &markets {
            let panel = self.load_panel(market)?;
            // mean traded allocation per method, pooled over phases and seeds
            let mut pooled: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
            for phase in self.phase_numbers() {
                for &method in &self.cfg.methods {
                    for seed in self.run_seeds() {
                        let record = self.load_record(market, phase, method, seed)?;
                        let avg = average_portfolio(&record.weights);
                        let entry = pooled
                            .entry(method.name().to_string())
                            .or_insert_with(|| (vec![0.0; avg.len()], 0));
                        for (acc, w) in entry.0.iter_mut().zip(&avg) {
                            *acc += w;
                        }
                        entry.1 += 1;
                    }
                }
            }
            let portfolios: Vec<(String, Vec<f64>)> = pooled
                .into_iter()
                .map(|(m, (sum, n))| {
                    (m, sum.into_iter().map(|w| w / n as f64).collect())
                })
                .collect();
            write_file(&self.heatmap_path(market), |out| {
                write_heatmap_csv(&portfolios, panel.tickers(), out)
            })?;
        }
        self.announce(&targets);
        Ok(())
    }

    fn compass(&self) -> Result<()> {
        self.no_market_filter("compass")?;
        self.no_phase_seed_filters("compass")?;
        let targets =
            vec![self.top("axes.csv"), self.top("compass.md"), self.top("compass.json")];
        if self.plan_only(&targets) {
            return Ok(());
        }
        let rows = self.load_metrics()?;
        let report = compute_axis_scores(
            &rows,
            self.cfg.resamples,
            derive_seed(self.cfg.master_seed, "axes"),
        )?;
        for flag in &report.flags {
            eprintln!("note: {flag}");
        }
        write_file(&self.top("axes.csv"), |out| {
            crate::score::axes::write_axes_csv(&report, out)
        })?;

        // the reference method is the compass's inner ring (everything is
        // scored against it), not one of the compared slots
        let spec = CompassSpec {
            methods: report
                .scores
                .iter()
                .filter(|(method, _)| method.as_str() != REFERENCE_METHOD)
                .map(|(method, axes)| MethodCompass {
                    method: method.clone(),
                    axes: axes.clone(),
                    measures: default_marks(),
                })
                .collect(),
        };
        spec.validate()?;
        let template = match &self.cfg.template {
            Some(path) => fs::read_to_string(path).map_err(|e| {
                CoreError::Missing(format!("template {}: {e}", path.display()))
            })?,
            None => {
                let names: Vec<&str> =
                    spec.methods.iter().map(|m| m.method.as_str()).collect();
                default_template(&names)
            }
        };
        let filled = fill_template(&spec, &template)?;
        write_file(&self.top("compass.md"), |out| Ok(out.write_all(filled.as_bytes())?))?;
        let json = crate::report::compass::companion_json(&spec)?;
        write_file(&self.top("compass.json"), |out| {
            out.write_all(json.as_bytes())?;
            Ok(out.write_all(b"\n")?)
        })?;
        self.announce(&targets);
        Ok(())
    }

    fn fetch(&self) -> Result<()> {
        self.no_market_filter("fetch")?;
        self.no_phase_seed_filters("fetch")?;
        let Some(url) = &self.cfg.fetch_url else {
            bail!(Validation, "fetch.url is not configured");
        };
        if self.cfg.fetch_symbols.is_empty() {
            bail!(Validation, "fetch.symbols is not configured");
        }
        let Some(range) = self.cfg.fetch_range else {
            bail!(Validation, "fetch.start/fetch.end are not configured");
        };
        let cache = self.cache_dir();
        if self.dry_run {
            for symbol in &self.cfg.fetch_symbols {
                println!(
                    "would fetch {symbol} {}..{} into {}",
                    range.0,
                    range.1,
                    cache.display()
                );
            }
            return Ok(());
        }
        let paths =
            fetch_remote_csv(&Endpoint::new(url), &self.cfg.fetch_symbols, range, &cache)?;
        self.announce(&paths);
        Ok(())
    }
}

/// Total return of the slice of `record` whose dates fall inside `window`,
/// or `None` when fewer than two equity points land there.
fn window_return(record: &RunRecord, window: &ExtremeWindow) -> Option<f64> {
    let lo = record.dates.partition_point(|d| *d < window.start);
    let hi = record.dates.partition_point(|d| *d <= window.end);
    (hi >= lo + 2).then(|| record.equity[hi - 1] / record.equity[lo] - 1.0)
}

/// Default for `--jobs`: whatever parallelism the machine reports.
fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Run the per-unit closure over the fan-out, sequentially for one job,
/// on a bounded rayon pool otherwise. Units write disjoint files, so
/// scheduling cannot affect the artifacts.
fn run_units<T: Sync>(
    jobs: usize,
    units: &[T],
    f: impl Fn(&T) -> Result<()> + Sync,
) -> Result<()> {
    if jobs <= 1 || units.len() <= 1 {
        return units.iter().try_for_each(f);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.min(units.len()))
        .build()
        .map_err(|e| CoreError::Io(std::io::Error::other(e)))?;
    pool.install(|| units.par_iter().try_for_each(|u| f(u)))
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string(value)
        .map_err(|e| CoreError::Schema(format!("encode {}: {e}", path.display())))?;
    text.push('\n');
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn load_json<T: DeserializeOwned>(path: &Path, stage: &str) -> Result<T> {
    let raw = fs::read_to_string(path).map_err(|e| {
        CoreError::Missing(format!(
            "{}: {e} (run `compass {stage}` first)",
            path.display()
        ))
    })?;
    serde_json::from_str(&raw)
        .map_err(|e| CoreError::Schema(format!("decode {}: {e}", path.display())))
}

/// Build a text artifact in memory, then write it in one shot.
fn write_file(path: &Path, build: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    build(&mut buf)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, buf)?;
    Ok(())
}
