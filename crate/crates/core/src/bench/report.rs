//! CSV, run manifest and plotting script.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::json;

use super::{SimConfig, SimReport};
use crate::error::{contract, Error, Result};

pub const CSV_HEADER: &str = "detector,eb_n0_db,iteration,bits,errors,ber,ci_low,ci_high,cmults,sac_rate";

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub detector: String,
    pub eb_n0_db: f64,
    pub iteration: usize,
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub cmults: f64,
    pub sac_rate: f64,
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emitted {
    pub csv: PathBuf,
    pub manifest: PathBuf,
    pub plot: Option<PathBuf>,
}

/// The CSV text of a report. Floats use the shortest round-trip form.
pub fn csv_text(report: &SimReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.detector, c.eb_n0_db, c.iteration, c.bits, c.errors, c.ber, c.ci_low, c.ci_high, c.cmults, c.sac_rate
        );
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(contract("CSV header does not match"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || contract(format!("CSV row {}: `{line}`", i + 1));
            if f.len() != 10 {
                return Err(bad());
            }
            let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad());
            let int = |j: usize| f[j].parse::<u64>().map_err(|_| bad());
            Ok(CsvRow {
                detector: f[0].to_string(),
                eb_n0_db: num(1)?,
                iteration: int(2)? as usize,
                bits: int(3)?,
                errors: int(4)?,
                ber: num(5)?,
                ci_low: num(6)?,
                ci_high: num(7)?,
                cmults: num(8)?,
                sac_rate: num(9)?,
            })
        })
        .collect()
}

/// `git describe --always --dirty`, or `unknown` outside a work tree.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn plot_script(csv_name: &str) -> String {
    format!(
        r#"# BER against Eb/N0, one curve per detector and iteration.
import csv
from collections import defaultdict

import matplotlib.pyplot as plt

curves = defaultdict(list)
with open("{csv_name}") as f:
    for row in csv.DictReader(f):
        curves[(row["detector"], int(row["iteration"]))].append((float(row["eb_n0_db"]), float(row["ber"])))

for (detector, iteration), pts in sorted(curves.items()):
    pts.sort()
    label = detector if iteration == 1 and len({{k[1] for k in curves}}) == 1 else f"{{detector}} it{{iteration}}"
    plt.semilogy([p[0] for p in pts], [max(p[1], 1e-7) for p in pts], marker="o", label=label)
plt.xlabel("Eb/N0 (dB)")
plt.ylabel("BER")
plt.grid(True, which="both", alpha=0.3)
plt.legend()
plt.savefig("ber.png", dpi=150)
"#
    )
}

/// Writes `results.csv`, `manifest.json` and, if the config asks, `plot.py` into `dir`.
pub fn emit_report(report: &SimReport, cfg: &SimConfig, dir: &Path) -> Result<Emitted> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let csv = dir.join("results.csv");
    write(&csv, &csv_text(report))?;

    let cells: Vec<_> = report
        .cells
        .iter()
        .map(|c| {
            json!({
                "detector": c.detector,
                "eb_n0_db": c.eb_n0_db,
                "iteration": c.iteration,
                "trials": c.trials,
                "sac_layer_rates": c.sac_layer_rates,
            })
        })
        .collect();
    let manifest = json!({
        "scenario": report.scenario.to_string(),
        "master_seed": report.master_seed,
        "git_describe": git_describe(),
        "wall_time_s": report.wall_time_s,
        "config": cfg.echo,
        "cells": cells,
    });
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| contract(e.to_string()))?;
    write(&manifest_path, &text)?;

    let plot = if cfg.plot {
        let p = dir.join("plot.py");
        write(&p, &plot_script("results.csv"))?;
        Some(p)
    } else {
        None
    };
    Ok(Emitted {
        csv,
        manifest: manifest_path,
        plot,
    })
}
