//! Train/validation/test protocols over source and target reservoirs.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use super::{anchors, DataError, PreparedReservoir, ReservoirRecord, Result, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Train on source reservoirs, test on unseen targets.
    Dg,
    /// Train, validate and test on the targets with the full history before the test span.
    Oracle,
    /// Train on the first years of the targets, test on the final year.
    FewShot,
}

impl FromStr for SplitMode {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dg" => Ok(SplitMode::Dg),
            "oracle" => Ok(SplitMode::Oracle),
            "fewshot" => Ok(SplitMode::FewShot),
            other => Err(DataError::Config(format!("unknown split mode `{other}` (expected dg, oracle or fewshot)"))),
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::Dg => "dg",
            SplitMode::Oracle => "oracle",
            SplitMode::FewShot => "fewshot",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOptions {
    /// Chronological train share of each source reservoir.
    pub source_train_fraction: f64,
    /// Share of the few-shot training years held out for validation.
    pub fewshot_val_fraction: f64,
    /// Days in the final (test) year of a target.
    pub final_days: usize,
    /// Score every mode on the same held-out span (second half of the
    /// targets' final year) instead of each protocol's own test span.
    pub shared_test: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions { source_train_fraction: 0.8, fewshot_val_fraction: 0.2, final_days: 365, shared_test: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitSpans {
    pub train: Option<Range<usize>>,
    pub val: Option<Range<usize>>,
    pub test: Option<Range<usize>>,
    /// Span the normalization statistics are fitted on.
    pub fit: Option<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub mode: SplitMode,
    /// One entry per record, in record order.
    pub spans: Vec<SplitSpans>,
}

fn frac(len: usize, f: f64) -> usize {
    ((len as f64) * f).round() as usize
}

/// Assigns day spans to every record.
///
/// * `dg`: sources split chronologically into train/val; targets are test
///   only and are normalized on their own history before the test span.
/// * `oracle`: targets train on everything before the final year, validate
///   on its first half and test on its second half.
/// * `fewshot`: targets train on the leading share of the years before the
///   final year, validate on the rest of those years, test on the final year.
pub fn split_protocol(records: &[ReservoirRecord], mode: SplitMode, opts: &SplitOptions) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&opts.source_train_fraction) || opts.source_train_fraction == 0.0 {
        return Err(DataError::Config("source_train_fraction must lie in (0, 1)".into()));
    }
    let mut spans = Vec::with_capacity(records.len());
    for r in records {
        let n = r.len();
        let final_start = n.saturating_sub(opts.final_days);
        let half = final_start + (n - final_start).div_ceil(2);
        let shared = half..n;
        let s = match (mode, r.role) {
            (SplitMode::Dg, Role::Source) => {
                let cut = frac(n, opts.source_train_fraction);
                SplitSpans { train: Some(0..cut), val: Some(cut..n), test: None, fit: Some(0..cut) }
            }
            // stats come from the history before the test span; when the
            // whole series is scored there is nothing earlier to use
            (SplitMode::Dg, Role::Target) => SplitSpans {
                train: None,
                val: None,
                test: Some(if opts.shared_test { shared } else { 0..n }),
                fit: Some(if opts.shared_test { 0..half } else { 0..n }),
            },
            (SplitMode::Oracle, Role::Target) => SplitSpans {
                train: Some(0..final_start),
                val: Some(final_start..half),
                test: Some(shared),
                fit: Some(0..final_start),
            },
            (SplitMode::FewShot, Role::Target) => {
                let cut = frac(final_start, 1.0 - opts.fewshot_val_fraction);
                SplitSpans {
                    train: Some(0..cut),
                    val: Some(cut..final_start),
                    test: Some(if opts.shared_test { shared } else { final_start..n }),
                    fit: Some(0..cut),
                }
            }
            (_, Role::Source) => SplitSpans::default(),
        };
        spans.push(s);
    }
    Ok(SplitPlan { mode, spans })
}

impl SplitPlan {
    pub fn fit_ranges(&self) -> Vec<Option<Range<usize>>> {
        self.spans.iter().map(|s| s.fit.clone()).collect()
    }
}

/// A window addressed by prepared-reservoir index and anchor day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowRef {
    pub reservoir: usize,
    pub anchor: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleSets {
    pub train: Vec<WindowRef>,
    pub val: Vec<WindowRef>,
    pub test: Vec<WindowRef>,
}

impl SampleSets {
    /// Enumerates windows for every prepared reservoir according to `plan`.
    pub fn build(plan: &SplitPlan, prepared: &[PreparedReservoir], window: usize, horizon: usize) -> SampleSets {
        let mut sets = SampleSets::default();
        for (p_idx, p) in prepared.iter().enumerate() {
            let spans = &plan.spans[p.record];
            let push = |span: &Option<Range<usize>>, out: &mut Vec<WindowRef>| {
                if let Some(span) = span {
                    let range = anchors(span, window, horizon);
                    if range.is_empty() {
                        log::warn!("span {span:?} of `{}` is too short for any window", p.id);
                    }
                    out.extend(range.map(|anchor| WindowRef { reservoir: p_idx, anchor }));
                }
            };
            push(&spans.train, &mut sets.train);
            push(&spans.val, &mut sets.val);
            push(&spans.test, &mut sets.test);
        }
        sets
    }
}
