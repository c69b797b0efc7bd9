//! Command-line surface: simulate, diagnose, estimate, benchmark.

mod commands;
mod config;
mod pi_spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use ivdrf::error::Error;

#[derive(Parser)]
#[command(
    name = "ivdrf",
    version,
    about = "Dose-response estimation for continuous treatments with instrumental variables"
)]
struct Cli {
    /// Config file: `key = value` lines, or a manifest from a previous run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed; required for every run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker-thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Extra `key=value` overrides (repeatable); flags beat the config file.
    #[arg(long = "set", short = 'S', global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and write it with its manifest.
    Simulate {
        #[arg(long)]
        n: Option<usize>,
        /// paper_main | unconfounded | binary_iv_crossing | discrete_toy | custom
        #[arg(long)]
        variant: Option<String>,
        /// Parameter file for discrete_toy / custom variants.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Relevance and weighting-function checks for a dataset.
    Diagnose {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Target interval `lo,hi`.
        #[arg(long, allow_hyphen_values = true)]
        interval: Option<String>,
        /// Weighting function: density@<a0> | coordinate:<j> | poly:<j>^<d>
        #[arg(long)]
        pi: Option<String>,
        /// Also build a finite cover of `lo,hi`.
        #[arg(long, allow_hyphen_values = true)]
        cover: Option<String>,
    },
    /// Cross-fit scores and estimate the dose-response curve.
    Estimate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        interval: Option<String>,
        #[arg(long)]
        pi: Option<String>,
        /// llkr | erm
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        spline_df: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        /// Bootstrap replications (0 disables).
        #[arg(long)]
        bootstrap: Option<usize>,
        /// Estimate even when the relevance verdict fails.
        #[arg(long)]
        force: bool,
    },
    /// Replicated simulation benchmark.
    Benchmark {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        interval: Option<String>,
        /// Comma list: iv,nuc
        #[arg(long)]
        frameworks: Option<String>,
        /// Comma list: aipw,ipw,or
        #[arg(long)]
        estimators: Option<String>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Schema(_)
        | Error::Parse { .. }
        | Error::EmptyData
        | Error::Config(_)
        | Error::Misuse(_)
        | Error::InvalidInterval(_)
        | Error::InvalidPlan(_)
        | Error::SpecError(_) => 2,
        Error::Io(_) | Error::Csv(_) => 5,
        _ => 4,
    }
}

const EXIT_DIAGNOSTICS_REFUSAL: u8 = 3;

fn run(cli: Cli) -> Result<u8, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
        cfg.set(k.trim(), v.trim());
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed);
    }
    if cfg.get("seed").is_none() {
        return Err(Error::Config("a seed is required (--seed or seed = ...)".into()));
    }
    if let Some(out) = &cli.out {
        cfg.set("out", out.display());
    }
    if let Some(threads) = cli.threads {
        cfg.set("threads", threads);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let out_dir = PathBuf::from(cfg.get("out").unwrap_or("."));
    std::fs::create_dir_all(&out_dir)?;

    match cli.command {
        Command::Simulate { n, variant, params } => {
            if let Some(n) = n {
                cfg.set("n", n);
            }
            if let Some(v) = variant {
                cfg.set("variant", v);
            }
            if let Some(p) = params {
                cfg.set("params", p.display());
            }
            commands::cmd_simulate(&mut cfg, &out_dir)?;
        }
        Command::Diagnose {
            input,
            interval,
            pi,
            cover,
        } => {
            if let Some(v) = input {
                cfg.set("input", v.display());
            }
            if let Some(v) = interval {
                cfg.set("interval", v);
            }
            if let Some(v) = pi {
                cfg.set("pi", v);
            }
            if let Some(v) = cover {
                cfg.set("cover", v);
            }
            commands::cmd_diagnose(&mut cfg, &out_dir)?;
        }
        Command::Estimate {
            input,
            interval,
            pi,
            method,
            spline_df,
            folds,
            bootstrap,
            force,
        } => {
            if let Some(v) = input {
                cfg.set("input", v.display());
            }
            if let Some(v) = interval {
                cfg.set("interval", v);
            }
            if let Some(v) = pi {
                cfg.set("pi", v);
            }
            if let Some(v) = method {
                cfg.set("method", v);
            }
            if let Some(v) = spline_df {
                cfg.set("spline_df", v);
            }
            if let Some(v) = folds {
                cfg.set("folds", v);
            }
            if let Some(v) = bootstrap {
                cfg.set("bootstrap", v);
            }
            if !commands::cmd_estimate(&mut cfg, &out_dir, force)? {
                return Ok(EXIT_DIAGNOSTICS_REFUSAL);
            }
        }
        Command::Benchmark {
            n,
            reps,
            folds,
            interval,
            frameworks,
            estimators,
            variant,
            params,
        } => {
            if let Some(v) = n {
                cfg.set("n", v);
            }
            if let Some(v) = reps {
                cfg.set("reps", v);
            }
            if let Some(v) = folds {
                cfg.set("folds", v);
            }
            if let Some(v) = interval {
                cfg.set("interval", v);
            }
            if let Some(v) = frameworks {
                cfg.set("frameworks", v);
            }
            if let Some(v) = estimators {
                cfg.set("estimators", v);
            }
            if let Some(v) = variant {
                cfg.set("variant", v);
            }
            if let Some(p) = params {
                cfg.set("params", p.display());
            }
            commands::cmd_benchmark(&mut cfg, &out_dir)?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
