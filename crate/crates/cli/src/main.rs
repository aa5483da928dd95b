use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use hydrodcm::config::{parse_config, ExperimentConfig};
use hydrodcm::harness::{self, CellResult};
use hydrodcm::losses::NseReport;
use hydrodcm::train::{thread_budget, SummaryRow};

#[derive(Parser)]
#[command(name = "hydrodcm", version, about = "Domain-generalized multi-day reservoir inflow forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let cfg = parse_config(self.config.as_deref(), &self.overrides)?;
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        harness::write_effective_config(&self.out, &cfg)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic world as series and metadata CSVs.
    GenData(Common),
    /// Train the configured mode over all seeds.
    Train(Common),
    /// Evaluate a checkpoint on the configured data.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run every method and write comparison.csv and plotdata/.
    Compare(Common),
    /// Run full HydroDCM and its ablations.
    Ablate(Common),
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{:.2}", 100.0 * v))
}

fn print_report(report: &NseReport) {
    println!("reservoir  {}  overall", (1..=report.days.len()).map(|d| format!("day{d:<3}")).collect::<Vec<_>>().join(" "));
    let row = |id: &str, days: &[Option<f64>], overall: Option<f64>| {
        let cells: Vec<String> = days.iter().map(|&d| format!("{:>6}", fmt(d))).collect();
        println!("{id:<10} {}  {:>6}", cells.join(" "), fmt(overall));
    };
    for r in &report.reservoirs {
        row(&r.id, &r.days, r.overall);
    }
    row("mean", &report.days, report.overall);
}

fn print_summary(rows: &[SummaryRow]) {
    for r in rows {
        let sd = r.overall.1.map_or(String::new(), |s| format!(" ± {:.2}", 100.0 * s));
        let flag = if r.is_complete() { "" } else { "  [incomplete]" };
        println!("{:<10} {:<16} NSE {}{sd}  ({}/{} runs){flag}", r.mode, r.ablation, fmt(r.overall.0), r.completed, r.runs);
    }
}

fn grid_status(results: &[CellResult]) -> ExitCode {
    let rows: Vec<SummaryRow> = results.iter().map(|r| r.summary.clone()).collect();
    print_summary(&rows);
    if rows.iter().all(SummaryRow::is_complete) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let threads = thread_budget();
    match cli.command {
        Command::GenData(common) => {
            let cfg = common.load()?;
            let records = harness::gen_data(&cfg, &common.out)?;
            println!("wrote {} reservoirs to {}", records.len(), common.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(common) => {
            let cfg = common.load()?;
            let outcomes = harness::train(&cfg, Some(&common.out), threads)?;
            let row = SummaryRow::from_outcomes(&cfg.mode.to_string(), cfg.ablation.key(), &outcomes, cfg.dims.horizon);
            for o in &outcomes {
                if let Err(e) = &o.result {
                    eprintln!("seed {} failed: {e}", o.seed);
                }
            }
            print_summary(std::slice::from_ref(&row));
            Ok(if row.is_complete() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.load()?;
            let report = harness::eval(&cfg, &checkpoint, Some(&common.out))?;
            print_report(&report);
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare(common) => {
            let cfg = common.load()?;
            Ok(grid_status(&harness::compare(&cfg, &common.out, threads)?))
        }
        Command::Ablate(common) => {
            let cfg = common.load()?;
            Ok(grid_status(&harness::ablate(&cfg, &common.out, threads)?))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
