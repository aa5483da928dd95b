//! Experiment drivers behind the command-line subcommands.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{Ablation, ExperimentConfig, Mode};
use crate::data::{generate_world, ingest_csv, write_world_csv, ReservoirRecord};
use crate::losses::NseReport;
use crate::model::{Checkpoint, ModelBundle, ModelError};
use crate::train::{
    evaluate, io_err, run_experiment, run_parallel, run_single, write_nse_csv, write_summary_csv, Dataset,
    Result, RunOutcome, SummaryRow, TrainError,
};

/// Loads the configured CSV data, or generates the synthetic world.
pub fn load_records(cfg: &ExperimentConfig) -> Result<Vec<ReservoirRecord>> {
    Ok(match &cfg.csv {
        Some((series, metadata)) => ingest_csv(series, metadata)?,
        None => generate_world(&cfg.world)?,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn write_effective_config(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    write_text(&out.join("effective_config.txt"), &cfg.to_text())
}

/// Writes the synthetic world as `series.csv` and `metadata.csv`.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<ReservoirRecord>> {
    let records = generate_world(&cfg.world)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_world_csv(&records, &out.join("series.csv"), &out.join("metadata.csv"))?;
    Ok(records)
}

/// Evaluates a checkpoint on the test windows of `cfg`'s data, using the
/// normalization stored in the checkpoint. Writes `nse.csv` into `out`.
pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path, out: Option<&Path>) -> Result<NseReport> {
    let ckpt = Checkpoint::load(checkpoint).map_err(|e| match e {
        ModelError::Io(source) => TrainError::Io { path: checkpoint.display().to_string(), source },
        other => other.into(),
    })?;
    let bundle = ModelBundle::from_checkpoint(cfg.dims, &ckpt)?;
    let records = load_records(cfg)?;
    let ds = Dataset::build(&records, cfg, cfg.seed, Some(&bundle.norm))?;
    let report = evaluate(&bundle, &ds, &ds.sets.test, cfg);
    if let Some(out) = out {
        write_nse_csv(&out.join("nse.csv"), &report)?;
    }
    Ok(report)
}

/// One configuration of a grid, run over all seeds.
pub struct Cell {
    pub name: String,
    pub cfg: ExperimentConfig,
}

pub struct CellResult {
    pub name: String,
    pub cfg: ExperimentConfig,
    pub outcomes: Vec<RunOutcome>,
    pub summary: SummaryRow,
}

impl CellResult {
    pub fn reports(&self) -> Vec<&NseReport> {
        self.outcomes.iter().filter_map(|o| o.result.as_ref().ok()).map(|r| &r.nse).collect()
    }
}

/// Runs every (cell, seed) pair on one shared set of records. Each run
/// writes to `out/<cell>/run_<seed>/`; the per-cell summaries are written
/// afterwards by the caller's thread.
pub fn run_grid(cells: Vec<Cell>, records: &[ReservoirRecord], out: Option<&Path>, threads: usize) -> Vec<CellResult> {
    let mut jobs: Vec<Box<dyn FnOnce() -> (usize, RunOutcome) + Send + '_>> = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        for k in 0..cell.cfg.num_runs as u64 {
            let seed = cell.cfg.seed + k;
            let dir = out.map(|o| o.join(&cell.name).join(format!("run_{seed}")));
            let cfg = &cell.cfg;
            jobs.push(Box::new(move || {
                let result = run_single(cfg, records, seed, dir.as_deref()).map_err(|e| e.to_string());
                if let Err(e) = &result {
                    log::error!("{} seed {seed} failed: {e}", cfg.mode);
                }
                (c, RunOutcome { seed, result })
            }));
        }
    }
    let mut grouped: Vec<Vec<RunOutcome>> = cells.iter().map(|_| Vec::new()).collect();
    for (c, outcome) in run_parallel(jobs, threads) {
        grouped[c].push(outcome);
    }
    let results: Vec<CellResult> = cells
        .into_iter()
        .zip(grouped)
        .map(|(cell, outcomes)| {
            let summary = SummaryRow::from_outcomes(
                &cell.cfg.mode.to_string(),
                cell.cfg.ablation.key(),
                &outcomes,
                cell.cfg.dims.horizon,
            );
            CellResult { name: cell.name, cfg: cell.cfg, outcomes, summary }
        })
        .collect();
    if let Some(out) = out {
        for r in &results {
            if let Err(e) = write_summary_csv(&out.join(&r.name).join("summary.csv"), std::slice::from_ref(&r.summary)) {
                log::error!("{e}");
            }
        }
    }
    results
}

/// Trains `cfg.num_runs` seeds of the configured mode.
pub fn train(cfg: &ExperimentConfig, out: Option<&Path>, threads: usize) -> Result<Vec<RunOutcome>> {
    let records = load_records(cfg)?;
    Ok(run_experiment(cfg, &records, out, threads))
}

/// The five methods, each on its own split protocol, on one shared world.
pub fn comparison_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    Mode::ALL
        .iter()
        .map(|&mode| {
            let mut c = cfg.clone();
            c.mode = mode;
            c.ablation = Ablation::None;
            Cell { name: mode.to_string(), cfg: c }
        })
        .collect()
}

/// Full HydroDCM followed by each ablation.
pub fn ablation_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    std::iter::once(Ablation::None)
        .chain(Ablation::ALL)
        .map(|ablation| {
            let mut c = cfg.clone();
            c.mode = Mode::HydroDcm;
            c.ablation = ablation;
            let name = match ablation {
                Ablation::None => "hydrodcm".to_string(),
                a => format!("hydrodcm_{}", a.key()),
            };
            Cell { name, cfg: c }
        })
        .collect()
}

/// Per reservoir and forecast day: mean and sample std of NSE across seeds.
pub fn per_reservoir_day_csv(results: &[CellResult]) -> String {
    let mut s = String::from("cell,mode,ablation,reservoir_id,day,nse_mean,nse_std,runs\n");
    for r in results {
        let reports = r.reports();
        let Some(first) = reports.first() else { continue };
        for (i, res) in first.reservoirs.iter().enumerate() {
            for day in 0..res.days.len() {
                let vals: Vec<f64> = reports
                    .iter()
                    .filter_map(|rep| rep.reservoirs.get(i).and_then(|x| x.days[day]))
                    .collect();
                let n = vals.len();
                let mean = (n > 0).then(|| vals.iter().sum::<f64>() / n as f64);
                let std = mean.filter(|_| n > 1).map(|m| {
                    (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                });
                let na = |v: Option<f64>| v.map_or("NA".to_string(), |v| v.to_string());
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{n}",
                    r.name,
                    r.cfg.mode,
                    r.cfg.ablation.key(),
                    res.id,
                    day + 1,
                    na(mean),
                    na(std)
                )
                .expect("writing to a String");
            }
        }
    }
    s
}

fn write_table(results: &[CellResult], out: &Path, table: &str) -> Result<()> {
    let rows: Vec<SummaryRow> = results.iter().map(|r| r.summary.clone()).collect();
    write_summary_csv(&out.join(table), &rows)?;
    write_text(&out.join("plotdata").join("per_reservoir_day.csv"), &per_reservoir_day_csv(results))
}

/// Runs all methods and writes `comparison.csv` and `plotdata/`.
pub fn compare(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<Vec<CellResult>> {
    let records = load_records(cfg)?;
    let results = run_grid(comparison_cells(cfg), &records, Some(out), threads);
    write_table(&results, out, "comparison.csv")?;
    Ok(results)
}

/// Runs full HydroDCM and its ablations and writes `ablation.csv` and `plotdata/`.
pub fn ablate(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<Vec<CellResult>> {
    let records = load_records(cfg)?;
    let results = run_grid(ablation_cells(cfg), &records, Some(out), threads);
    write_table(&results, out, "ablation.csv")?;
    Ok(results)
}
