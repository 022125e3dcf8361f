use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hjbpi_cli as cli;
use hjbpi_core::verify::Outcome;

#[derive(Parser)]
#[command(
    name = "hjbpi",
    about = "Neural policy iteration for nonlinear optimal control, with interval stability verification",
    version
)]
struct Args {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run policy iteration and write the net, per-iteration CSV and summary.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides out_dir from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Verify a serialized net against the configured stability conditions.
    ///
    /// Exit code: 0 verified, 1 counterexample, 2 budget exhausted, 3 parse error.
    Verify {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a batch of closed-loop trajectories under a serialized net.
    Simulate {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a list of solve configurations and emit an aggregated CSV.
    Table {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Export the decrease-condition negation as an SMT query.
    ExportSmt {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output file (default: query.smt2 next to the net).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the generated configuration reference with all defaults.
    Defaults,
}

fn out_dir(cli_out: Option<PathBuf>, cfg_out: &Option<PathBuf>) -> PathBuf {
    cli_out
        .or_else(|| std::env::var_os("HJBPI_OUT").map(PathBuf::from))
        .or_else(|| cfg_out.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run() -> cli::Result<ExitCode> {
    let args = Args::parse();
    if args.threads > 0 {
        // ignore failure when a global pool already exists (tests)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global();
    }
    match args.command {
        Command::Solve { config, out, seed } => {
            let mut cfg = cli::load_run_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out_dir(out, &cfg.out_dir);
            let summary = cli::cmd_solve(&cfg, &dir)?;
            println!(
                "solve {}: n={} m={} N={} iterations={} converged={} error={} ({:.1} ms)",
                summary.benchmark,
                summary.n,
                summary.m,
                summary.collocation,
                summary.iterations,
                summary.converged,
                summary
                    .final_test_error
                    .map_or("n/a".into(), |v| format!("{v:.3e}")),
                summary.wall_ms
            );
            if let Some(d) = &summary.diverged {
                eprintln!("warning: {d}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { net, config, out } => {
            let cfg = cli::load_run_config(&config)?;
            let section = cfg.verify.clone().unwrap_or_default();
            let dir = out_dir(out, &cfg.out_dir);
            let report = cli::cmd_verify(&net, &cfg.benchmark, &section, &dir)?;
            println!(
                "verify {}: {:?} after {} boxes ({:.1} ms)",
                cfg.benchmark, report.outcome, report.boxes_processed, report.wall_ms
            );
            if let Some(w) = &report.witness {
                println!(
                    "counterexample at {:?} (condition {:?}, value {:.6e})",
                    w.point, report.condition_id, w.value
                );
            }
            Ok(match report.outcome {
                Outcome::Verified => ExitCode::SUCCESS,
                Outcome::Counterexample => ExitCode::from(1),
                Outcome::BudgetExhausted => ExitCode::from(2),
            })
        }
        Command::Simulate {
            net,
            config,
            out,
            seed,
        } => {
            let cfg = cli::load_run_config(&config)?;
            let section = cfg.simulate.clone().unwrap_or_default();
            let dir = out_dir(out, &cfg.out_dir);
            let summary =
                cli::cmd_simulate(&net, &cfg.benchmark, &section, seed.unwrap_or(cfg.seed), &dir)?;
            println!(
                "simulate {}: {}/{} converged{}",
                cfg.benchmark,
                summary.converged_count,
                summary.count,
                summary
                    .mean_cost
                    .map_or(String::new(), |c| format!(", mean cost {c:.4}"))
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Table { config, out, seed } => {
            let mut cfg = cli::load_table_config(&config)?;
            if let Some(s) = seed {
                for row in &mut cfg.rows {
                    row.seed = s;
                }
            }
            let dir = out_dir(out, &None);
            let path = cli::cmd_table(&cfg, &dir)?;
            println!("table written to {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportSmt { net, config, out } => {
            let cfg = cli::load_run_config(&config)?;
            let section = cfg.verify.clone().unwrap_or_default();
            let out_path = out.unwrap_or_else(|| {
                net.with_file_name(format!(
                    "{}.smt2",
                    net.file_stem().and_then(|s| s.to_str()).unwrap_or("query")
                ))
            });
            cli::cmd_export_smt(&net, &cfg.benchmark, &section, &out_path)?;
            println!("query written to {}", out_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Defaults => {
            print!("{}", cli::default_config_reference());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            // parse and validation failures exit 3 per the verify contract;
            // other errors exit 4
            let msg = format!("{e}");
            if msg.starts_with("config:")
                || msg.starts_with("benchmark:")
                || msg.starts_with("net:")
                || msg.contains("parse error")
            {
                ExitCode::from(3)
            } else {
                ExitCode::from(4)
            }
        }
    }
}
