//! Rolling train/valid/test splits over a trading calendar.
//!
//! The last phase anchors at the calendar end: test is the final span,
//! validation the span before it, training everything earlier. Each earlier
//! phase rolls the valid/test pair back by exactly one span while training
//! keeps growing from the calendar start — the walk-forward scheme where
//! later phases see strictly more history.
//!
//! Spans are calendar durations (days), resolved against the actual
//! timestamps, so "one year" stays one year on a 252-row trading calendar.

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Half-open index range into the calendar.
pub type Segment = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub train: Segment,
    pub valid: Segment,
    pub test: Segment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    pub phases: Vec<Phase>,
    pub span_days: i64,
    /// Warmup the plan was validated against; the env re-checks anyway.
    pub warmup: usize,
}

impl SplitPlan {
    pub fn n_phases(&self) -> usize {
        self.phases.len()
    }

    /// 1-based phase lookup (phases are numbered 1..=P in configs and file
    /// names, matching how people talk about them).
    pub fn phase(&self, number: usize) -> Result<&Phase> {
        if number == 0 || number > self.phases.len() {
            bail!(Validation, "phase {number} out of range 1..={}", self.phases.len());
        }
        Ok(&self.phases[number - 1])
    }
}

/// Build `phase_count` rolling phases of `span_days`-long valid/test windows.
///
/// `warmup` is the feature warmup: the earliest phase must keep at least one
/// training point past it, otherwise the calendar is declared too short.
pub fn make_rolling_splits(
    calendar: &[NaiveDate],
    phase_count: usize,
    span_days: i64,
    warmup: usize,
) -> Result<SplitPlan> {
    if phase_count == 0 {
        bail!(Validation, "phase count must be at least 1");
    }
    if span_days <= 0 {
        bail!(Validation, "span must be positive, got {span_days} days");
    }
    if calendar.windows(2).any(|w| w[0] >= w[1]) {
        bail!(Validation, "calendar must be strictly increasing");
    }
    let Some(&end) = calendar.last() else {
        bail!(Validation, "calendar is empty");
    };

    // First index strictly after `date` — shared boundary resolver so
    // adjacent windows tile without gap or overlap.
    let idx_after = |date: NaiveDate| calendar.partition_point(|&d| d <= date);

    let mut phases = Vec::with_capacity(phase_count);
    for p in 1..=phase_count {
        let shift = (phase_count - p) as i64;
        let cut = |spans_back: i64| idx_after(end - Duration::days(spans_back * span_days));
        let test = (cut(shift + 1), cut(shift));
        let valid = (cut(shift + 2), test.0);
        let train = (0usize, valid.0);
        for (name, seg) in [("train", train), ("valid", valid), ("test", test)] {
            if seg.0 >= seg.1 {
                bail!(
                    Validation,
                    "calendar too short: phase {p} {name} window is empty \
                     (need roughly {} days of data past warmup, have {} calendar points)",
                    (phase_count as i64 + 1) * span_days,
                    calendar.len()
                );
            }
        }
        if train.1 <= warmup {
            bail!(
                Validation,
                "calendar too short: phase {p} training window ends at index {} \
                 which is inside the {warmup}-step feature warmup",
                train.1
            );
        }
        phases.push(Phase { train, valid, test });
    }

    // Contract check: consecutive phases' test windows tile exactly.
    for w in phases.windows(2) {
        debug_assert_eq!(w[0].test.1, w[1].test.0, "test windows must tile");
    }

    Ok(SplitPlan { phases, span_days, warmup })
}
