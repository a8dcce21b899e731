use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use pdmp_core::experiment::runner::reference_cache;
use pdmp_core::experiment::{output, preset, run_sweep, ProblemConfig, Sweep, PRESETS};
use pdmp_core::metrics::build_reference;

#[derive(Parser)]
#[command(name = "pdmp-bench", version, about = "Surrogate-assisted PDMP benchmarks on the elastic bar problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset sweep or a TOML sweep file.
    Run {
        /// Preset name or path to a sweep config.
        target: String,
        /// Use seeds 0..N instead of the configured list.
        #[arg(long)]
        seeds: Option<u64>,
        /// Override the evaluation budget of every run (checkpoints are re-spaced).
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Also compute the Sinkhorn divergence at checkpoints.
        #[arg(long)]
        wasserstein: bool,
        /// Write every skeleton/chain to CSV.
        #[arg(long)]
        dump_paths: bool,
    },
    /// Build a long random-walk reference for one problem config.
    Reference {
        problem: PathBuf,
        #[arg(long, default_value_t = 205_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// List presets, or print one as a TOML sweep.
    Presets { name: Option<String> },
}

fn load_sweep(target: &str) -> Result<Sweep> {
    if PRESETS.contains(&target) {
        return Ok(preset(target)?);
    }
    let path = Path::new(target);
    if !path.exists() {
        bail!("`{target}` is neither a preset ({}) nor a file", PRESETS.join(", "));
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {target}"))?;
    Ok(Sweep::from_toml(&text)?)
}

fn run(target: &str, seeds: Option<u64>, budget: Option<u64>, out: &Path, wasserstein: bool, dump_paths: bool) -> Result<ExitCode> {
    let mut sweep = load_sweep(target)?;
    for r in &mut sweep.runs {
        if let Some(n) = seeds {
            r.seeds = (0..n).collect();
        }
        if let Some(b) = budget {
            r.budget = Some(b);
            r.checkpoints = None;
        }
        r.wasserstein |= wasserstein;
    }
    let dir = out.join(&sweep.name);
    let started = std::time::Instant::now();
    let records = run_sweep(&sweep, Some(&reference_cache(out)), dump_paths)?;
    let manifest = output::write_sweep(&sweep.name, &records, &dir)?;
    let mut aborted = false;
    for rec in &records {
        let last = rec.aggregate.last();
        let n_abort = rec.seeds.iter().filter(|s| s.diagnostics.aborted.is_some()).count();
        let n_div = rec.seeds.iter().filter(|s| s.diagnostics.diverged).count();
        aborted |= n_abort > 0;
        println!(
            "{:<40} N={:<6} rmse_mean={:<10} rmse_var={:<10} aborted={n_abort} diverged={n_div}",
            rec.name,
            last.map_or(0, |p| p.n_eval),
            last.map_or("-".into(), |p| format!("{:.4e}", p.rmse_mean)),
            last.map_or("-".into(), |p| format!("{:.4e}", p.rmse_var)),
        );
    }
    println!("wrote {} in {:.1?}", manifest.display(), started.elapsed());
    Ok(if aborted { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            target,
            seeds,
            budget,
            out,
            threads,
            wasserstein,
            dump_paths,
        } => {
            if let Some(t) = threads {
                rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
            }
            run(&target, seeds, budget, &out, wasserstein, dump_paths)
        }
        Command::Reference { problem, n, seed, out } => {
            let text = std::fs::read_to_string(&problem).with_context(|| format!("reading {}", problem.display()))?;
            let cfg: ProblemConfig = toml::from_str(&text)?;
            let (_, posterior, map) = pdmp_core::experiment::runner::prepare_problem(&cfg)?;
            let tp = pdmp_core::affine::TransformedPotential::new(posterior, map)?;
            let r = build_reference(&tp, n, seed)?;
            r.save(&out)?;
            println!("reference: {} samples, mean {:?}, var {:?}", r.samples.len(), r.mean.as_slice(), r.variances.as_slice());
            Ok(ExitCode::SUCCESS)
        }
        Command::Presets { name } => {
            match name {
                Some(n) => print!("{}", preset(&n)?.to_toml()?),
                None => PRESETS.iter().for_each(|p| println!("{p}")),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
