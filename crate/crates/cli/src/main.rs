use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use msmfe::harness::{self, OutputFormat, RunConfig, SolverMethod};

/// Multipoint stress mixed finite element solver for linear elasticity.
#[derive(Debug, Parser)]
#[command(name = "msmfe", version)]
struct Args {
    /// msmfe0, msmfe1, msmfe1-scaled or saddle-oracle.
    #[arg(long, default_value = "msmfe0")]
    method: String,
    /// Spatial dimension; defaults to the example's.
    #[arg(long)]
    dim: Option<usize>,
    /// 1: smooth 2D, 2: smooth 3D, 3: heterogeneous 2D, 4: locking study.
    #[arg(long, default_value_t = 1)]
    example: u8,
    /// Comma-separated subdivisions per side, e.g. 2,4,8.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<usize>>,
    /// Comma-separated Poisson ratios for example 4.
    #[arg(long, value_delimiter = ',')]
    nu_list: Option<Vec<f64>>,
    /// Material contrast of example 3.
    #[arg(long, default_value_t = 1e6)]
    kappa: f64,
    /// Relative CG tolerance.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// CG iteration cap; defaults to 10 (100 for example 4) times the unknowns.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Worker threads (0 = all cores, 1 = deterministic).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output file; a `.manifest.json` is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or markdown.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Mesh in the plain-text format instead of a generated one.
    #[arg(long)]
    mesh_file: Option<PathBuf>,
    /// Allow 3D levels beyond n = 8.
    #[arg(long)]
    allow_large: bool,
}

fn default_levels(example: u8) -> Vec<usize> {
    match example {
        2 => vec![2, 4, 8],
        3 => vec![3, 6, 12, 24, 48, 96],
        4 => vec![32],
        _ => vec![2, 4, 8, 16, 32, 64],
    }
}

fn config(args: Args) -> anyhow::Result<RunConfig> {
    let method: SolverMethod = args.method.parse()?;
    let format: OutputFormat = args.format.parse()?;
    let dim = args.dim.unwrap_or(if args.example == 2 { 3 } else { 2 });
    Ok(RunConfig {
        method,
        dim,
        example: args.example,
        levels: args.levels.unwrap_or_else(|| default_levels(args.example)),
        nu_list: args.nu_list.unwrap_or_else(harness::locking_nu_list),
        kappa: args.kappa,
        tol: args.tol,
        max_iter: args.max_iter,
        threads: args.threads,
        out: args.out,
        format,
        mesh_file: args.mesh_file,
        allow_large: args.allow_large,
    })
}

fn run(args: Args) -> anyhow::Result<()> {
    let config = config(args)?;
    config.validate()?;
    if config.example == 4 {
        let run = harness::run_locking(&config)?;
        let table = match config.format {
            OutputFormat::Csv => harness::locking_csv(&run),
            OutputFormat::Markdown => harness::locking_markdown(&run),
        };
        print!("{table}");
        harness::write_outputs(&config, &table, &run).context("writing outputs")?;
    } else {
        let run = harness::run_convergence(&config)?;
        let table = harness::render(&run.records, config.format);
        print!("{table}");
        harness::write_outputs(&config, &table, &run).context("writing outputs")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
