use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{hex_digest, RunConfig};
use super::runner::{RunRecord, SeedDiagnostics};
use crate::error::Result;

pub const TRACE_HEADER: [&str; 9] = [
    "method",
    "surrogate",
    "d",
    "seed",
    "N_eval",
    "rmse_mean",
    "rmse_var",
    "wasserstein",
    "ess_per_eval",
];

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:e}"))
}

/// Per-seed metric traces, one row per (seed, checkpoint).
pub fn write_traces(rec: &RunRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    let c = &rec.config;
    for s in &rec.seeds {
        for p in &s.trace {
            w.write_record([
                c.method.name().to_string(),
                c.surrogate_name().to_string(),
                c.problem.d.to_string(),
                s.seed.to_string(),
                p.n_eval.to_string(),
                format!("{:e}", p.rmse_mean),
                format!("{:e}", p.rmse_var),
                fmt_opt(p.wasserstein),
                format!("{:e}", p.ess_per_eval),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate(rec: &RunRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "surrogate",
        "d",
        "n_seeds",
        "N_eval",
        "rmse_mean",
        "rmse_var",
        "wasserstein",
        "ess_per_eval",
    ])?;
    let c = &rec.config;
    for p in &rec.aggregate {
        w.write_record([
            c.method.name().to_string(),
            c.surrogate_name().to_string(),
            c.problem.d.to_string(),
            p.n_seeds.to_string(),
            p.n_eval.to_string(),
            format!("{:e}", p.rmse_mean),
            format!("{:e}", p.rmse_var),
            fmt_opt(p.wasserstein),
            format!("{:e}", p.ess_per_eval),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SeedSummary<'a> {
    seed: u64,
    #[serde(flatten)]
    diagnostics: &'a SeedDiagnostics,
}

#[derive(Serialize)]
struct CellEntry<'a> {
    name: &'a str,
    config_hash: &'a str,
    config: &'a RunConfig,
    files: Vec<(String, String)>,
    aborted_seeds: Vec<u64>,
    diverged_seeds: Vec<u64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    sweep: &'a str,
    cells: Vec<CellEntry<'a>>,
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(hex_digest(&std::fs::read(path)?))
}

/// Write traces, aggregates, diagnostics and optional paths for each cell, plus
/// `manifest.json` with config and file hashes. Returns the manifest path.
pub fn write_sweep(sweep_name: &str, records: &[RunRecord], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut cells = Vec::new();
    for rec in records {
        let mut files = Vec::new();
        let mut add = |p: PathBuf| -> Result<()> {
            let h = file_hash(&p)?;
            files.push((p.file_name().unwrap().to_string_lossy().into_owned(), h));
            Ok(())
        };
        let trace = dir.join(format!("{}.csv", rec.name));
        write_traces(rec, &trace)?;
        add(trace)?;
        let agg = dir.join(format!("{}_aggregate.csv", rec.name));
        write_aggregate(rec, &agg)?;
        add(agg)?;
        let diag = dir.join(format!("{}_diagnostics.json", rec.name));
        let summaries: Vec<SeedSummary<'_>> = rec
            .seeds
            .iter()
            .map(|s| SeedSummary {
                seed: s.seed,
                diagnostics: &s.diagnostics,
            })
            .collect();
        std::fs::write(&diag, serde_json::to_string_pretty(&summaries)?)?;
        add(diag)?;
        for s in &rec.seeds {
            if let Some(sk) = &s.skeleton {
                let p = dir.join(format!("{}_seed{}_skeleton.csv", rec.name, s.seed));
                sk.write_csv(&p)?;
                add(p)?;
            }
            if let Some(ch) = &s.chain {
                let p = dir.join(format!("{}_seed{}_chain.csv", rec.name, s.seed));
                ch.write_csv(&p)?;
                add(p)?;
            }
        }
        cells.push(CellEntry {
            name: &rec.name,
            config_hash: &rec.config_hash,
            config: &rec.config,
            files,
            aborted_seeds: rec.seeds.iter().filter(|s| s.diagnostics.aborted.is_some()).map(|s| s.seed).collect(),
            diverged_seeds: rec.seeds.iter().filter(|s| s.diagnostics.diverged).map(|s| s.seed).collect(),
        });
    }
    let path = dir.join("manifest.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&Manifest {
            sweep: sweep_name,
            cells,
        })?,
    )?;
    Ok(path)
}
