use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use knotmpc_bench::config::ExperimentKind;
use knotmpc_bench::presets::{preset, PRESETS};
use knotmpc_bench::summary::{format_table, summarize_records};
use knotmpc_bench::{run_experiment_to, BenchError, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "knotmpc",
    version,
    about = "Run knot-parameterized MPC experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config file or a built-in preset.
    Run(RunArgs),
    /// List built-in presets, or print one as TOML.
    Presets {
        #[arg(long, value_name = "NAME")]
        show: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file.
    #[arg(required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR", default_value = "results")]
    out: PathBuf,
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    /// Use a single worker so timings are not skewed by contention.
    #[arg(long)]
    timing_strict: bool,
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, BenchError> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if args.timing_strict {
        cfg.workers = 1;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn headline_metrics(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::ParamSweep | ExperimentKind::HorizonSweep => &["cost_ratio"],
        ExperimentKind::Robustness => &["normalized_cost", "overshoot_pct", "rise_time"],
        ExperimentKind::SolveTimeScaling => &["opt_time_median", "total_time_median"],
        ExperimentKind::ClosedloopComparison => &["actual_cost", "cost_ratio", "total_time_median"],
    }
}

fn run(args: RunArgs) -> Result<(), BenchError> {
    let cfg = load(&args)?;
    eprintln!(
        "running {} ({}), {} trials, seed {}, {} worker(s)",
        cfg.name,
        cfg.kind.name(),
        cfg.trials,
        cfg.seed,
        cfg.workers
    );
    let (records, path) = run_experiment_to(&cfg, &args.out)?;
    for m in headline_metrics(cfg.kind) {
        print!("{}", format_table(m, &summarize_records(&records, m)));
    }
    println!("wrote {} rows to {}", records.len(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Presets { show: Some(name) } => {
            preset(&name).map(|cfg| print!("{}", cfg.to_toml()))
        }
        Command::Presets { show: None } => {
            for p in PRESETS {
                println!("{:<24} {}", p.name, p.description);
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
