use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iprox::experiments::{export_trace, run_batch, ExperimentConfig, ExperimentOutcome, ResultWriter};
use iprox::problems::TABLE1;

#[derive(Parser)]
#[command(name = "iprox", version, about = "Inexact proximal methods: benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run experiment 1 or 2 on one or all test configurations.
    Bench(BenchArgs),
    /// Run an experiment described by a JSON config.
    Solve(SolveArgs),
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    experiment: u8,
    /// Test number 1..=16, or `all`.
    #[arg(long)]
    tn: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Seconds per method.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    tol_gnorm: Option<f64>,
    #[arg(long)]
    ifb_iter_budget: Option<usize>,
    #[arg(long)]
    inner_budget: Option<usize>,
    /// Also write per-iteration traces into this directory.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    #[arg(long, env = "IPROX_WORKERS", default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    config: PathBuf,
    /// Result CSV; without it rows are only logged.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

type CliResult<T> = Result<T, String>;

fn parse_tns(spec: &str) -> CliResult<Vec<usize>> {
    if spec.eq_ignore_ascii_case("all") {
        return Ok((1..=TABLE1.len()).collect());
    }
    spec.split(',')
        .map(|s| {
            let tn: usize = s.trim().parse().map_err(|_| format!("invalid --tn value `{s}`"))?;
            if (1..=TABLE1.len()).contains(&tn) {
                Ok(tn)
            } else {
                Err(format!("--tn must lie in 1..={}, got {tn}", TABLE1.len()))
            }
        })
        .collect()
}

fn bench_configs(args: &BenchArgs) -> CliResult<Vec<ExperimentConfig>> {
    parse_tns(&args.tn)?
        .into_iter()
        .map(|tn| {
            let mut cfg = ExperimentConfig::new(args.experiment, tn, args.seed);
            if let Some(v) = args.max_iter {
                cfg.max_iter = v;
            }
            if let Some(v) = args.time_limit {
                cfg.time_limit_s = v;
            }
            if let Some(v) = args.tol_gnorm {
                cfg.tol_gnorm = v;
            }
            if let Some(v) = args.ifb_iter_budget {
                cfg.ifb_iter_budget = v;
            }
            if let Some(v) = args.inner_budget {
                cfg.inner_budget = v;
            }
            cfg.validate().map_err(|e| e.to_string())?;
            Ok(cfg)
        })
        .collect()
}

fn write_traces(dir: &Path, cfg: &ExperimentConfig, out: &ExperimentOutcome) -> iprox::Result<()> {
    for (name, trace) in [("ifb", &out.ifb), ("ipgm", &out.ipgm)] {
        let path = dir.join(format!("exp{}_tn{}_{name}.csv", cfg.experiment, cfg.label()));
        export_trace(trace, &path)?;
    }
    Ok(())
}

fn run(configs: &[ExperimentConfig], out: Option<&Path>, trace_dir: Option<&Path>, workers: usize) -> CliResult<()> {
    let mut writer = out.map(ResultWriter::create).transpose().map_err(|e| e.to_string())?;
    if let Some(dir) = trace_dir {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    let mut failures = Vec::new();
    run_batch(configs, workers, |i, outcome| {
        for trace in [&outcome.ifb, &outcome.ipgm] {
            if trace.stop_reason.is_failure() {
                failures.push(format!("tn {}: run ended with `{}`", configs[i].label(), trace.stop_reason));
            }
        }
        for row in &outcome.rows {
            log::info!(
                "tn {} {}: iter {} fval {:.6} gnorm {:.3e} error {:.3e} time {:.2}s ({})",
                row.tn,
                row.method,
                row.iter,
                row.fval,
                row.gnorm,
                row.error,
                row.time_s,
                row.stop_reason
            );
            if let Some(w) = writer.as_mut() {
                w.write_row(row)?;
            }
        }
        if let Some(dir) = trace_dir {
            write_traces(dir, &configs[i], &outcome)?;
        }
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(failures.join("; "))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(args) => bench_configs(&args)
            .and_then(|configs| run(&configs, Some(&args.out), args.trace_dir.as_deref(), args.workers)),
        Command::Solve(args) => std::fs::read_to_string(&args.config)
            .map_err(|e| format!("{}: {e}", args.config.display()))
            .and_then(|text| {
                serde_json::from_str::<ExperimentConfig>(&text).map_err(|e| format!("{}: {e}", args.config.display()))
            })
            .and_then(|cfg| cfg.validate().map(|_| cfg).map_err(|e| e.to_string()))
            .and_then(|cfg| run(&[cfg], args.out.as_deref(), args.trace_dir.as_deref(), 1)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
