//! The evaluation compass document: axis scores plus measure-coverage
//! marks for every method, rendered through a user-swappable text
//! template.
//!
//! The template is opaque text with two placeholder forms:
//!
//! - `{{method.axis}}` — one of the six axis names, rendered as an
//!   integer (`{{sac.profitability}}` → `73`),
//! - `{{method.measure.N}}` — the 1-based index into the fixed
//!   seventeen-measure list, rendered `yes`/`no`.
//!
//! Filling is strict in both directions: a placeholder that names an
//! unknown method, axis, or measure index is an error, and so is a
//! template that fails to reference every (method, axis) and
//! (method, measure) slot of the spec. Both lists are enumerated in the
//! error message, so a mismatched template is fixable in one pass.
//!
//! Alongside the text document, the spec serializes to a JSON companion
//! that parses back to the identical spec — the machine-readable mirror
//! of the filled page.

use serde::{Deserialize, Serialize};

use crate::error::{bail, CoreError, Result};
use crate::score::axes::{AxisScores, AXES};

/// Internal measure keys, in the fixed display order.
pub const MEASURES: [&str; 17] = [
    "profit",
    "alpha_decay",
    "equity_curve",
    "risk",
    "risk_adjusted_profit",
    "extreme_market",
    "country",
    "asset_type",
    "time_scale",
    "tsne",
    "entropy",
    "correlation",
    "diversity_heatmap",
    "performance_profile",
    "variability",
    "rolling_window",
    "rank_comparison",
];

/// Human labels matching [`MEASURES`] position for position.
pub const MEASURE_LABELS: [&str; 17] = [
    "Profit",
    "Alpha Decay",
    "Equity Curve",
    "Risk",
    "Risk-adjusted Profit",
    "Extreme Market",
    "Country",
    "Asset Type",
    "Time-Scale",
    "t-SNE",
    "Entropy",
    "Correlation",
    "Diversity Heatmap",
    "Performance Profile",
    "Variability",
    "Rolling Window",
    "Rank Comparison",
];

/// The eight methods the shipped example template is laid out for.
pub const CANONICAL_METHODS: [&str; 8] =
    ["a2c", "ppo", "sac", "sarl", "eiie", "imit", "deeptrader", "alphamix"];

/// One method's full compass entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodCompass {
    pub method: String,
    pub axes: AxisScores,
    /// coverage marks in [`MEASURES`] order
    pub measures: [bool; 17],
}

/// Everything the compass document renders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompassSpec {
    pub methods: Vec<MethodCompass>,
}

impl CompassSpec {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            bail!(Validation, "compass spec has no methods");
        }
        for pair in self.methods.windows(2) {
            if pair[0].method == pair[1].method {
                bail!(Validation, "duplicate compass entry for {}", pair[0].method);
            }
        }
        let mut names: Vec<&str> =
            self.methods.iter().map(|m| m.method.as_str()).collect();
        names.sort();
        names.dedup();
        if names.len() != self.methods.len() {
            bail!(Validation, "duplicate compass entries");
        }
        Ok(())
    }
}

/// The marks used when nothing more specific is known: this pipeline
/// evaluates every measure except alpha decay (which needs a
/// train-then-hold deployment gap the rolling splits don't produce).
pub fn default_marks() -> [bool; 17] {
    let mut marks = [true; 17];
    marks[1] = false; // alpha_decay
    marks
}

/// Render the JSON companion. Deterministic: field order is declaration
/// order, methods stay in spec order.
pub fn companion_json(spec: &CompassSpec) -> Result<String> {
    spec.validate()?;
    serde_json::to_string_pretty(spec)
        .map_err(|e| CoreError::Schema(format!("encode compass companion: {e}")))
}

/// Parse a companion document back into a spec.
pub fn parse_companion(json: &str) -> Result<CompassSpec> {
    let spec: CompassSpec = serde_json::from_str(json)
        .map_err(|e| CoreError::Schema(format!("decode compass companion: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

/// Fill `template` from `spec`. Every `{{…}}` token must resolve, and
/// every slot of the spec must be referenced at least once; violations
/// of either direction are collected and reported together.
pub fn fill_template(spec: &CompassSpec, template: &str) -> Result<String> {
    spec.validate()?;

    let mut unknown: Vec<String> = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            bail!(Schema, "unterminated placeholder near …{}", &rest[start..]);
        };
        let token = &after[..end];
        match resolve(spec, token) {
            Some(value) => {
                out.push_str(&value);
                seen.push(token.to_string());
            }
            None => unknown.push(token.to_string()),
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);

    let mut missing: Vec<String> = Vec::new();
    for m in &spec.methods {
        for axis in AXES {
            let slot = format!("{}.{axis}", m.method);
            if !seen.contains(&slot) {
                missing.push(slot);
            }
        }
        for n in 1..=MEASURES.len() {
            let slot = format!("{}.measure.{n}", m.method);
            if !seen.contains(&slot) {
                missing.push(slot);
            }
        }
    }

    if !unknown.is_empty() || !missing.is_empty() {
        unknown.sort();
        unknown.dedup();
        missing.sort();
        let mut parts = Vec::new();
        if !unknown.is_empty() {
            parts.push(format!("unknown placeholders: {}", unknown.join(", ")));
        }
        if !missing.is_empty() {
            parts.push(format!("template never fills: {}", missing.join(", ")));
        }
        bail!(Schema, "{}", parts.join("; "));
    }
    Ok(out)
}

/// Resolve one placeholder token against the spec.
fn resolve(spec: &CompassSpec, token: &str) -> Option<String> {
    let (method, slot) = token.split_once('.')?;
    let entry = spec.methods.iter().find(|m| m.method == method)?;
    if let Some(n) = slot.strip_prefix("measure.") {
        let n: usize = n.parse().ok()?;
        if n == 0 || n > MEASURES.len() {
            return None;
        }
        return Some(if entry.measures[n - 1] { "yes" } else { "no" }.to_string());
    }
    entry.axes.get(slot).map(|v| v.to_string())
}

/// Generate a complete markdown template for the given methods: one
/// axis table and one measure-coverage table, every slot referenced
/// exactly once. This is what the pipeline renders when the user
/// supplies no template of their own.
pub fn default_template(methods: &[&str]) -> String {
    let mut t = String::new();
    t.push_str("# Evaluation Compass\n\n");
    t.push_str("Integer axis scores on a 0-100 scale; 50 marks parity with the\n");
    t.push_str("market-average reference on every ramped axis.\n\n");
    t.push_str("## Axes\n\n");
    t.push_str("| method |");
    for axis in AXES {
        t.push_str(&format!(" {axis} |"));
    }
    t.push('\n');
    t.push_str("|---|");
    t.push_str(&"---|".repeat(AXES.len()));
    t.push('\n');
    for m in methods {
        t.push_str(&format!("| {m} |"));
        for axis in AXES {
            t.push_str(&format!(" {{{{{m}.{axis}}}}} |"));
        }
        t.push('\n');
    }
    t.push_str("\n## Measure coverage\n\n");
    t.push_str("| method |");
    for label in MEASURE_LABELS {
        t.push_str(&format!(" {label} |"));
    }
    t.push('\n');
    t.push_str("|---|");
    t.push_str(&"---|".repeat(MEASURE_LABELS.len()));
    t.push('\n');
    for m in methods {
        t.push_str(&format!("| {m} |"));
        for n in 1..=MEASURES.len() {
            t.push_str(&format!(" {{{{{m}.measure.{n}}}}} |"));
        }
        t.push('\n');
    }
    t
}
