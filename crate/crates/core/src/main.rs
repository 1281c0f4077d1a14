use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lawn_ma::baselines::Scheme;
use lawn_ma::experiments::{
    cdf_csv, empirical_cdf, pooled_rates, render_run, run_schemes, seed_list, summarize, summary_csv, sweep,
    sweep_csv, write_files, SweepParam, PLOT_STUB,
};
use lawn_ma::scenario::{desk_scenario, validate, Scenario};
use lawn_ma::Instance;

#[derive(Parser)]
#[command(name = "lawn-ma", version, about = "Sum-rate optimization for a movable-antenna aerial data collector")]
struct Cli {
    /// Worker threads; LAWN_MA_THREADS takes precedence when set.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON; the desk-scale scenario is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Channel and swarm seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,

    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Comma-separated subset of proposed, ao-mm, fixed-traj, fpa.
    #[arg(long, default_value = "proposed,ao-mm,fixed-traj,fpa")]
    schemes: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scheme once and write traces and final state.
    Run {
        #[command(flatten)]
        common: Common,

        /// Also write per-path channel parameters along each trajectory.
        #[arg(long)]
        dump_channels: bool,
    },
    /// Final sum rate versus one parameter over several seeds.
    Sweep {
        #[command(flatten)]
        common: Common,

        /// One of p_max, K, L_paths, region_size (in wavelengths), v_max.
        #[arg(long)]
        param: String,

        /// Comma-separated values.
        #[arg(long)]
        values: String,

        /// Number of seeds, starting at the base seed.
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Pooled per-user, per-slot rate CDFs over several seeds.
    Cdf {
        #[command(flatten)]
        common: Common,

        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Check a scenario and report every violation.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(config: Option<&Path>, seed: Option<u64>) -> Result<Scenario> {
    let mut s = match config {
        Some(path) => Scenario::from_json_file(path)?,
        None => desk_scenario(),
    };
    if let Some(seed) = seed {
        s.rng_seed = seed;
    }
    Ok(s.validated()?)
}

fn parse_schemes(list: &str) -> Result<Vec<Scheme>> {
    let schemes: Vec<Scheme> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<lawn_ma::Result<_>>()?;
    if schemes.is_empty() {
        bail!("no schemes selected");
    }
    Ok(schemes)
}

fn parse_values(list: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|v| v.parse::<f64>().with_context(|| format!("bad value '{v}'")))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        bail!("--values is empty");
    }
    Ok(values)
}

fn threads(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("LAWN_MA_THREADS") {
        Ok(v) if !v.trim().is_empty() => Ok(Some(
            v.trim().parse().with_context(|| format!("LAWN_MA_THREADS='{v}' is not a count"))?,
        )),
        _ => Ok(flag),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { common, dump_channels } => {
            let schemes = parse_schemes(&common.schemes)?;
            let instance = Instance::new(load(common.config.as_deref(), common.seed)?)?;
            let runs = run_schemes(&instance, &schemes)?;
            let files = render_run(&instance, &runs, dump_channels)?;
            write_files(&common.out, &files)?;
            for run in &runs {
                println!(
                    "{:<10} {:>12.4} bps/Hz after {} outer iterations",
                    run.scheme.tag(),
                    run.outcome.final_sum_rate(),
                    run.outcome.iterations()
                );
            }
        }
        Command::Sweep {
            common,
            param,
            values,
            seeds,
        } => {
            let schemes = parse_schemes(&common.schemes)?;
            let param: SweepParam = param.parse()?;
            let values = parse_values(&values)?;
            let base = load(common.config.as_deref(), common.seed)?;
            let seeds = seed_list(base.rng_seed, seeds);
            let rows = sweep(&base, param, &values, &seeds, &schemes)?;
            let summary = summarize(&rows, &schemes, &values);
            write_files(
                &common.out,
                &[
                    ("sweep.csv".into(), sweep_csv(param, &rows)),
                    ("sweep_summary.csv".into(), summary_csv(param, &summary)),
                    ("plot.py".into(), PLOT_STUB.into()),
                ],
            )?;
            for r in &summary {
                println!("{:<10} {}={:<8} {:>12.4}", r.scheme.tag(), param.name(), r.value, r.mean);
            }
        }
        Command::Cdf { common, seeds } => {
            let schemes = parse_schemes(&common.schemes)?;
            let base = load(common.config.as_deref(), common.seed)?;
            let seeds = seed_list(base.rng_seed, seeds);
            let pooled = pooled_rates(&base, &seeds, &schemes)?;
            write_files(&common.out, &[("cdf.csv".into(), cdf_csv(&empirical_cdf(&pooled)))])?;
        }
        Command::Validate { config } => {
            let s = match config {
                Some(path) => Scenario::from_json_file(path)?,
                None => desk_scenario(),
            };
            let report = validate(&s);
            if !report.is_empty() {
                bail!("{report}");
            }
            println!("ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads(cli.threads).and_then(|n| {
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = n {
            pool = pool.num_threads(n);
        }
        let pool = pool.build()?;
        pool.install(|| execute(cli.command))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
