//! `apcr`: seeded batch runner for the estimator, bandit and panel experiments.
//!
//! Exit status: 0 on success (failed replications are flagged on stderr but
//! do not change it), 1 on a runtime failure, 2 on an invalid configuration.
//! Errors are written to stderr as one JSON object per line.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apcr::experiments::{
    rate_final_state, run_bandit, run_coverage, run_panel, run_rate, write_table, ExperimentConfig, Kind, Replication,
    Report, Tabular,
};
use apcr::pcr::write_snapshot;
use apcr::{bandit, selftest, Error};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "apcr", version, about = "Adaptive PCR experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimation-error decay on a well-balanced stream; saves a state snapshot with --out.
    Estimate(Common),
    /// PCR-UCB bandit episodes with regret accounting.
    Bandit(Common),
    /// Synthetic-intervention estimates on generated panels.
    Panel(Common),
    /// Monte Carlo check of the empirical error bound.
    Coverage(Common),
    /// Scalar formulas against stored reference values.
    Selftest(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` file; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Output directory for CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress the summary on stdout.
    #[arg(long)]
    quiet: bool,
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

fn report_error(err: &Error) {
    eprintln!("{}", json!({ "error": err.code(), "message": err.to_string() }));
}

fn load(kind: Kind, args: &Common) -> Result<ExperimentConfig, Error> {
    let text = match &args.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut cfg = ExperimentConfig::parse(kind, &text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn flag_failures<T>(reps: &[Replication<T>]) -> usize {
    let mut count = 0;
    for rep in reps {
        if let Err(e) = &rep.outcome {
            count += 1;
            eprintln!(
                "{}",
                json!({ "warning": "replication_failed", "replication": rep.index, "seed": rep.seed,
                        "error": e.code(), "message": e.to_string() })
            );
        }
    }
    if count > 0 {
        eprintln!("{}", json!({ "warnings": count }));
    }
    count
}

fn emit<T>(cfg: &ExperimentConfig, report: &Report<T>, quiet: bool) -> Result<(), Error>
where
    Report<T>: Tabular,
{
    let header = report.summary_header();
    let rows = report.summary_rows();
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), cfg.to_text())?;
        write_table(&header, &rows, create(dir, "summary.csv")?)?;
        write_table(&report.replication_header(), &report.replication_rows(), create(dir, "replications.csv")?)?;
    }
    if !quiet {
        write_table(&header, &rows, io::stdout().lock())?;
    }
    flag_failures(&report.replications);
    Ok(())
}

fn run(kind: Kind, args: &Common) -> Result<(), Failure> {
    let cfg = load(kind, args).map_err(Failure::Config)?;
    let runtime = Failure::Runtime;
    match kind {
        Kind::Coverage => {
            let report = run_coverage(&cfg).map_err(runtime)?;
            emit(&cfg, &report, args.quiet).map_err(runtime)?;
            if !args.quiet {
                let s = report.coverage_summary();
                let per_action: Vec<String> =
                    report.per_action_violation_rate().iter().map(|v| v.to_string()).collect();
                println!(
                    "violation_rate,{}\nper_action_violation_rate,{}\nnot_yet_valid,{}",
                    s.violation_rate(),
                    per_action.join(";"),
                    s.not_yet_valid
                );
            }
        }
        Kind::Rate => {
            let report = run_rate(&cfg).map_err(runtime)?;
            emit(&cfg, &report, args.quiet).map_err(runtime)?;
            if let Some(dir) = &cfg.out {
                let state = rate_final_state(&cfg).map_err(runtime)?;
                write_snapshot(&state, create(dir, "snapshot.txt").map_err(runtime)?).map_err(runtime)?;
            }
        }
        Kind::Bandit => {
            let report = run_bandit(&cfg).map_err(runtime)?;
            emit(&cfg, &report, args.quiet).map_err(runtime)?;
            if let Some(dir) = &cfg.out {
                let traces = dir.join("traces");
                fs::create_dir_all(&traces).map_err(|e| runtime(e.into()))?;
                for rep in &report.replications {
                    if let Ok(run) = &rep.outcome {
                        let file = create(&traces, &format!("trace_{:04}.csv", rep.index)).map_err(runtime)?;
                        bandit::write_trace_csv(&run.trace, file).map_err(runtime)?;
                    }
                }
            }
        }
        Kind::Panel => {
            let report = run_panel(&cfg).map_err(runtime)?;
            emit(&cfg, &report, args.quiet).map_err(runtime)?;
        }
        Kind::Selftest => {
            let cases = selftest::run().map_err(runtime)?;
            let header = ["case", "expected", "actual", "rel_error", "status"];
            let rows: Vec<Vec<String>> = cases
                .iter()
                .map(|c| {
                    let status = if c.passed() { "pass" } else { "fail" };
                    vec![c.name.to_string(), c.expected.to_string(), c.actual.to_string(), c.rel_error().to_string(), status.into()]
                })
                .collect();
            if let Some(dir) = &cfg.out {
                fs::create_dir_all(dir).map_err(|e| runtime(e.into()))?;
                write_table(&header, &rows, create(dir, "selftest.csv").map_err(runtime)?).map_err(runtime)?;
            }
            if !args.quiet {
                write_table(&header, &rows, io::stdout().lock()).map_err(runtime)?;
            }
            let failed = cases.iter().filter(|c| !c.passed()).count();
            if failed > 0 {
                return Err(runtime(Error::AssumptionViolated(format!("{failed} selftest case(s) out of tolerance"))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Estimate(a) => (Kind::Rate, a),
        Command::Bandit(a) => (Kind::Bandit, a),
        Command::Panel(a) => (Kind::Panel, a),
        Command::Coverage(a) => (Kind::Coverage, a),
        Command::Selftest(a) => (Kind::Selftest, a),
    };
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            report_error(&e);
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            report_error(&e);
            ExitCode::from(1)
        }
    }
}
