use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use pomv_cli::commands::{cmd_benchmark, cmd_estimate, cmd_reference, cmd_simulate, loglog_slope, RunContext};
use pomv_cli::config::RunConfig;
use pomv_cli::exit_code;

#[derive(Debug, Parser)]
#[command(name = "pomv", version, about = "Parameter estimation for partially observed McKean-Vlasov SDEs")]
struct Cli {
    /// TOML configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set mlmc.L=5`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed; overrides run.master_seed.
    #[arg(long, env = "POMV_SEED", global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides run.worker_count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; overrides run.output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a data set and write obs.csv.
    Simulate,
    /// Average M_bar randomized terms and write estimates.csv.
    Estimate {
        /// Observations; defaults to <out>/obs.csv.
        #[arg(long)]
        obs: Option<PathBuf>,
    },
    /// High-budget reference estimate, written to reference.csv.
    Reference {
        #[arg(long)]
        obs: Option<PathBuf>,
    },
    /// MSE against the reference over the M_bar grid; writes benchmark.csv.
    Benchmark {
        #[arg(long)]
        obs: Option<PathBuf>,
        /// Reference file; defaults to <out>/reference.csv.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.run.master_seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.run.worker_count = w;
    }
    if let Some(o) = cli.out {
        cfg.run.output_dir = o;
    }
    let ctx = RunContext::from_config(&cfg);
    let obs_or = |o: Option<PathBuf>| o.unwrap_or_else(|| ctx.path("obs.csv"));
    match cli.command {
        Command::Simulate => {
            let p = cmd_simulate(&cfg, &ctx)?;
            println!("wrote {}", p.display());
        }
        Command::Estimate { obs } => {
            let s = cmd_estimate(&cfg, &ctx, &obs_or(obs))?;
            println!("theta_bar  = {}", fmt(&s.theta_bar));
            match &s.std_error {
                Some(se) => println!("std_error  = {}", fmt(se)),
                None => println!("std_error  = unavailable (one term)"),
            }
            println!("total_cost = {}", s.total_cost);
            println!("wrote {}", s.path.display());
        }
        Command::Reference { obs } => {
            let (r, p) = cmd_reference(&cfg, &ctx, &obs_or(obs))?;
            println!("reference  = {}", fmt(&r.theta));
            println!("std_error  = {}", fmt(&r.std_error));
            println!("wrote {}", p.display());
        }
        Command::Benchmark { obs, reference } => {
            let reference = reference.unwrap_or_else(|| ctx.path("reference.csv"));
            let s = cmd_benchmark(&cfg, &ctx, &obs_or(obs), &reference)?;
            println!("M_bar,mse,mean_cost");
            for i in 0..s.m_bar.len() {
                println!("{},{:e},{}", s.m_bar[i], s.mse[i], s.mean_cost[i]);
            }
            if s.m_bar.len() >= 2 && s.mse.iter().all(|&m| m > 0.0) {
                println!("slope(log MSE, log cost) = {:.3}", loglog_slope(&s.mean_cost, &s.mse));
            }
            println!("wrote {}", s.path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
