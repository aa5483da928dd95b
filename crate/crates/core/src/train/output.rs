//! CSV outputs of training runs.

use std::fmt::Write as _;
use std::path::Path;

use super::{io_err, EpochLog, Result, RunOutcome, TrainError};
use crate::losses::{NseReport, Phase};

pub const EPOCHS_HEADER: &str =
    "epoch,phase,lr,train_con,train_adv,train_sup,train_total,val_con,val_adv,val_sup,val_total";

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn write_epochs_csv(path: &Path, epochs: &[EpochLog]) -> Result<()> {
    let mut s = String::from(EPOCHS_HEADER);
    s.push('\n');
    for e in epochs {
        let phase = match e.phase {
            Phase::Warmup => "warmup",
            Phase::Adversarial => "adversarial",
        };
        let (t, v) = (e.train, e.val);
        writeln!(
            s,
            "{},{phase},{},{},{},{},{},{},{},{},{}",
            e.epoch, e.lr, t.con, t.adv, t.sup, t.total, v.con, v.adv, v.sup, v.total
        )
        .expect("writing to a String");
    }
    write(path, &s)
}

fn nse_header(horizon: usize) -> String {
    let days: Vec<String> = (1..=horizon).map(|d| format!("day_{d}")).collect();
    format!("reservoir_id,{},overall\n", days.join(","))
}

/// Per-reservoir rows followed by `mean` (macro average) and `pooled` rows.
/// Undefined scores are written as `NA`; values use shortest round-trip
/// formatting so the file can be compared bitwise after a reload.
pub fn write_nse_csv(path: &Path, report: &NseReport) -> Result<()> {
    let mut s = nse_header(report.days.len());
    let mut row = |id: &str, days: &[Option<f64>], overall: Option<f64>| {
        let cells: Vec<String> = days.iter().map(|&d| cell(d)).collect();
        writeln!(s, "{id},{},{}", cells.join(","), cell(overall)).expect("writing to a String");
    };
    for r in &report.reservoirs {
        row(&r.id, &r.days, r.overall);
    }
    row("mean", &report.days, report.overall);
    row("pooled", &report.pooled_days, report.pooled_overall);
    write(path, &s)
}

/// Rows of an `nse.csv` file: id plus day scores and overall as the last value.
pub fn read_nse_csv(path: &Path) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |line: u64, msg: String| TrainError::Data(crate::data::DataError::Parse {
        file: path.display().to_string(),
        line,
        msg,
    });
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default().to_string();
        let values = fields
            .map(|f| match f {
                "NA" => Ok(None),
                v => v.parse::<f64>().map(Some).map_err(|e| bad(i as u64 + 1, format!("`{v}`: {e}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((id, values));
    }
    Ok(rows)
}

/// Mean and sample standard deviation across runs of one experiment cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub mode: String,
    pub ablation: String,
    pub runs: usize,
    pub completed: usize,
    pub overall: (Option<f64>, Option<f64>),
    pub days: Vec<(Option<f64>, Option<f64>)>,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some(var.sqrt()))
}

impl SummaryRow {
    pub fn from_reports(mode: &str, ablation: &str, runs: usize, reports: &[&NseReport], horizon: usize) -> SummaryRow {
        let collect = |f: &dyn Fn(&NseReport) -> Option<f64>| -> Vec<f64> { reports.iter().filter_map(|r| f(r)).collect() };
        SummaryRow {
            mode: mode.to_string(),
            ablation: ablation.to_string(),
            runs,
            completed: reports.len(),
            overall: mean_std(&collect(&|r| r.overall)),
            days: (0..horizon).map(|k| mean_std(&collect(&|r| r.days.get(k).copied().flatten()))).collect(),
        }
    }

    pub fn from_outcomes(mode: &str, ablation: &str, outcomes: &[RunOutcome], horizon: usize) -> SummaryRow {
        let reports: Vec<&NseReport> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).map(|r| &r.nse).collect();
        SummaryRow::from_reports(mode, ablation, outcomes.len(), &reports, horizon)
    }

    pub fn is_complete(&self) -> bool {
        self.completed == self.runs && self.overall.0.is_some()
    }
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let horizon = rows.iter().map(|r| r.days.len()).max().unwrap_or(0);
    let mut s = String::from("mode,ablation,runs,completed,overall_mean,overall_std");
    for d in 1..=horizon {
        write!(s, ",day_{d}_mean,day_{d}_std").expect("writing to a String");
    }
    s.push('\n');
    for r in rows {
        write!(s, "{},{},{},{},{},{}", r.mode, r.ablation, r.runs, r.completed, cell(r.overall.0), cell(r.overall.1))
            .expect("writing to a String");
        for &(m, sd) in &r.days {
            write!(s, ",{},{}", cell(m), cell(sd)).expect("writing to a String");
        }
        s.push('\n');
    }
    write(path, &s)
}
