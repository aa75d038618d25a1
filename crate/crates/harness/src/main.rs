use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use splitfed_harness::oracles::{grad_check_nets, group_exact, metric_check_cases, OracleOutcome};
use splitfed_harness::runner::{load_records, write_report};
use splitfed_harness::{run_suite, HarnessError, Suite};

/// Split federated learning experiment runner.
#[derive(Parser)]
#[command(name = "sflsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configuration and seed of a suite file.
    Run {
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Brute-force reference checks.
    Oracle {
        #[command(subcommand)]
        oracle: Oracle,
    },
    /// Summarise existing run records.
    Metrics {
        /// Glob over `*.record.json` files.
        records: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum Oracle {
    /// Finite-difference gradient check on seeded random MLPs.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        nets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        max_params: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Greedy grouping against exhaustive search.
    GroupExact {
        #[arg(long, default_value_t = 6)]
        clients: usize,
        #[arg(long, default_value_t = 2)]
        groups: usize,
        #[arg(long, default_value_t = 1)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Metric implementations against double-loop evaluation.
    MetricCheck {
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn oracle(o: Oracle) -> Result<OracleOutcome, HarnessError> {
    match o {
        Oracle::GradCheck {
            nets,
            seed,
            max_params,
            eps,
        } => grad_check_nets(nets, seed, max_params, eps),
        Oracle::GroupExact {
            clients,
            groups,
            instances,
            seed,
        } => group_exact(clients, groups, instances, seed),
        Oracle::MetricCheck { cases, seed } => metric_check_cases(cases, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { suite, out, jobs } => Suite::from_path(&suite)
            .and_then(|s| run_suite(&s, &out, jobs))
            .map(|outcomes| {
                for o in outcomes {
                    let r = &o.report;
                    println!(
                        "{} [{}]: {} runs, acc {:.4} (std {:.4}), pg {:.4} (std {:.4})",
                        o.name,
                        o.hash,
                        r.runs,
                        r.reported_acc.median,
                        r.reported_acc.std,
                        r.reported_pg.median,
                        r.reported_pg.std
                    );
                }
                ExitCode::SUCCESS
            }),
        Command::Oracle { oracle: o } => oracle(o).map(|outcome| {
            println!("{outcome}");
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }),
        Command::Metrics { records, out } => load_records(&records).and_then(|loaded| {
            let records: Vec<_> = loaded.into_iter().map(|(_, r)| r).collect();
            let rep = write_report(&records, &out)?;
            println!(
                "{} runs: acc {:.4}, pg {:.4}",
                rep.runs, rep.reported_acc.median, rep.reported_pg.median
            );
            Ok(ExitCode::SUCCESS)
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(e.exit_code())
    })
}
