use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wienerlab_cli::run::{run_scenario, RunOptions, RunReport, Status};
use wienerlab_cli::suite::{load_scenario, run_suite, Overrides};

/// Output directory override, ahead of the config and behind `--out`.
const OUT_ENV: &str = "WIENERLAB_OUT";

#[derive(Debug, Parser)]
#[command(name = "wienerlab", version, about = "Scenario runner for relaxed Dirichlet problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory [default: $WIENERLAB_OUT, the config's `output`, ./out]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write SVG plots
    #[arg(long, global = true)]
    plots: bool,
    /// Override the solver relative tolerance
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Override the refinement factor of two-resolution checks
    #[arg(long, global = true)]
    refine: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario file
    Run { config: PathBuf },
    /// Run every *.toml scenario of a directory
    Suite {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn out_dir(cli: &Cli, from_config: Option<&str>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| from_config.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn print_report(r: &RunReport) {
    let verdict = r.verdict.map(|v| v.as_str()).unwrap_or("-");
    println!("{:<32} {:<13} verdict={verdict} time={:.2}s", r.name, r.status.as_str(), r.wall_time);
    for m in &r.messages {
        println!("    {m}");
    }
}

fn execute(cli: &Cli) -> Status {
    let overrides = Overrides {
        rel_tol: cli.tol,
        refine: cli.refine,
    };
    match &cli.command {
        Command::Run { config } => {
            let cfg = match load_scenario(config, overrides) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Status::ConfigError;
                }
            };
            let opts = RunOptions {
                out_dir: out_dir(cli, cfg.output.as_deref()),
                plots: cli.plots,
            };
            let report = run_scenario(&cfg, &opts);
            print_report(&report);
            report.status
        }
        Command::Suite { dir, jobs } => {
            let opts = RunOptions {
                out_dir: out_dir(cli, None),
                plots: cli.plots,
            };
            match run_suite(dir, *jobs, overrides, &opts) {
                Ok(suite) => {
                    for r in &suite.reports {
                        print_report(r);
                    }
                    let worst = suite.worst();
                    println!("{} scenarios, overall {}", suite.reports.len(), worst.as_str());
                    worst
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    Status::ConfigError
                }
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    ExitCode::from(execute(&cli).exit_code() as u8)
}
