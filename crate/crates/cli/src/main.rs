//! `hetacc`: search, compose, simulate and sweep accelerator designs.
//!
//! Exit status is 0 on success, 2 when the budget admits no design and 1 for
//! usage or I/O errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use num_rational::Ratio;

const THREADS_VAR: &str = "HETACC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "hetacc", version, about = "Design-space explorer for heterogeneous matrix-multiply accelerators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rank single-accelerator designs for a model or square problems.
    Dse(DseArgs),
    /// Partition a model over several accelerators.
    Compose(ComposeArgs),
    /// Run the FIFO scheduler over a composition written by `compose`.
    Simulate(SimulateArgs),
    /// Compose over a grid of scaled platforms and accelerator counts.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Built-in platform (`vck190`, `vck190-calibrated`) or a JSON file.
    #[arg(long, default_value = "vck190-calibrated")]
    platform: String,
    /// Output directory; created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DseArgs {
    #[command(flatten)]
    common: Common,
    /// Built-in model (`bert`, `vit`, `ncf`, `mlp`) or a JSON file.
    #[arg(long, conflicts_with = "square", required_unless_present = "square")]
    model: Option<String>,
    /// Square sizes: `64,512,6144` or `64..6144` (doubling, end included).
    #[arg(long, value_parser = parse_sizes)]
    square: Option<Sizes>,
    /// Designs kept per problem.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    top: u64,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: String,
    /// Number of accelerators.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    num: u64,
    /// Memory-tuning rounds per partition.
    #[arg(long, default_value_t = 32)]
    ubound: u32,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory written by `compose`.
    #[arg(long)]
    from: PathBuf,
    /// Concurrent inference tasks.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    tasks: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: String,
    /// Bandwidth scale factors, e.g. `1,4,16` or `1/2`.
    #[arg(long, value_delimiter = ',', default_value = "1", value_parser = parse_scale)]
    bw_scale: Vec<Ratio<u64>>,
    /// Tile-count scale factors.
    #[arg(long, value_delimiter = ',', default_value = "1", value_parser = parse_scale)]
    aie_scale: Vec<Ratio<u64>>,
    /// On-chip RAM scale factors.
    #[arg(long, value_delimiter = ',', default_value = "1", value_parser = parse_scale)]
    ram_scale: Vec<Ratio<u64>>,
    /// Accelerator counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8", value_parser = clap::value_parser!(u64).range(1..))]
    num: Vec<u64>,
    #[arg(long, default_value_t = 32)]
    ubound: u32,
}

#[derive(Debug, Clone)]
pub struct Sizes(Vec<u64>);

fn parse_sizes(s: &str) -> Result<Sizes, String> {
    let positive = |t: &str| match t.trim().parse::<u64>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("`{t}` is not a positive size")),
    };
    if let Some((lo, hi)) = s.split_once("..") {
        let (lo, hi) = (positive(lo)?, positive(hi)?);
        if lo > hi {
            return Err(format!("empty range {lo}..{hi}"));
        }
        let mut sizes: Vec<u64> = std::iter::successors(Some(lo), |&v| v.checked_mul(2))
            .take_while(|&v| v <= hi)
            .collect();
        if sizes.last() != Some(&hi) {
            sizes.push(hi);
        }
        return Ok(Sizes(sizes));
    }
    s.split(',').map(positive).collect::<Result<_, _>>().map(Sizes)
}

fn parse_scale(s: &str) -> Result<Ratio<u64>, String> {
    let r: Ratio<u64> = s.trim().parse().map_err(|_| format!("`{s}` is not an integer or fraction"))?;
    if r == Ratio::from_integer(0) {
        return Err("scale must be positive".into());
    }
    Ok(r)
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_VAR} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let started = std::time::Instant::now();
    match cli.command {
        Command::Dse(a) => commands::dse(&a)?,
        Command::Compose(a) => commands::compose(&a)?,
        Command::Simulate(a) => commands::simulate(&a)?,
        Command::Sweep(a) => {
            if a.bw_scale.is_empty() || a.aie_scale.is_empty() || a.ram_scale.is_empty() || a.num.is_empty() {
                bail!("sweep lists must not be empty");
            }
            commands::sweep(&a)?
        }
    }
    // Kept out of the report files so that they stay byte-identical.
    eprintln!("elapsed {:.3}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let infeasible = e
                .chain()
                .any(|c| c.downcast_ref::<hetacc_core::Error>().is_some_and(|e| e.is_infeasible()));
            ExitCode::from(if infeasible { 2 } else { 1 })
        }
    }
}
