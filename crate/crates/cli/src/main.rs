use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use ips_cli::acceptance::{acceptance, AcceptanceOptions, DEFAULT_SEED};
use ips_cli::config::{Command, ExperimentConfig, Suite};
use ips_cli::run::run;
use ips_core::Offset;

#[derive(Parser)]
#[command(name = "ips", version, about = "Cancellative spin systems, duals and voter perturbations")]
struct Cli {
    /// Base config file; flags and `-p` overrides apply on top.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output CSV (or directory, for `acceptance`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override `key=value`, repeatable.
    #[arg(short = 'p', long = "param", global = true)]
    params: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Forward simulation: density and odd-count probability over time.
    Evolve,
    /// Survival of the annihilating dual.
    Dual,
    /// Cancellative decomposition of the model's rates.
    Cancellative,
    /// Reaction function from coalescing walks.
    Reaction,
    /// Oriented-percolation survival sweep.
    Perc,
    /// Runs one verification suite; exits nonzero if it fails.
    Verify {
        #[arg(long)]
        suite: Suite,
    },
    /// Lattice gate and criteria 1 to 10.
    Acceptance {
        /// Criterion number, name or group.
        #[arg(long)]
        only: Option<String>,
        /// Extra kernel for the lattice gate, `x,y:w;x,y:w;...`.
        #[arg(long)]
        inject_kernel: Option<String>,
    },
}

fn parse_kernel(text: &str) -> anyhow::Result<Vec<(Offset, f64)>> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|entry| {
            let (z, w) = entry.split_once(':').context("kernel entry needs `offset:weight`")?;
            let coords = z
                .split(',')
                .map(|c| c.trim().parse::<i32>())
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("bad offset `{z}`"))?;
            Ok((Offset(coords), w.trim().parse().with_context(|| format!("bad weight `{w}`"))?))
        })
        .collect()
}

/// Replaces or appends `key = value` lines in the serialized config.
fn apply_overrides(cfg: ExperimentConfig, params: &[String]) -> anyhow::Result<ExperimentConfig> {
    if params.is_empty() {
        return Ok(cfg);
    }
    let mut lines: Vec<String> = cfg.serialize().lines().map(str::to_string).collect();
    for p in params {
        let Some((k, v)) = p.split_once('=') else {
            bail!("override `{p}` is not key=value");
        };
        let line = format!("{} = {}", k.trim(), v.trim());
        match lines.iter().position(|l| l.split('=').next().map(str::trim) == Some(k.trim())) {
            Some(i) => lines[i] = line,
            None => lines.push(line),
        }
    }
    Ok(ExperimentConfig::parse(&lines.join("\n"))?)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    if let Cmd::Acceptance { only, inject_kernel } = &cli.cmd {
        let opts = AcceptanceOptions {
            seed: cli.seed.unwrap_or(DEFAULT_SEED),
            only: only.clone(),
            injected_kernel: inject_kernel.as_deref().map(parse_kernel).transpose()?,
            out_dir: cli.out.clone(),
        };
        let outcomes = acceptance(&opts, |o| println!("{}", o.line()))?;
        return Ok(outcomes.iter().all(|o| o.passed));
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.command = match &cli.cmd {
        Cmd::Evolve => Command::Evolve,
        Cmd::Dual => Command::Dual,
        Cmd::Cancellative => Command::Cancellative,
        Cmd::Reaction => Command::Reaction,
        Cmd::Perc => Command::Perc,
        Cmd::Verify { suite } => {
            cfg.suite = *suite;
            Command::Verify
        }
        Cmd::Acceptance { .. } => unreachable!(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.display().to_string());
    }
    let cfg = apply_overrides(cfg, &cli.params)?;
    let out = run(&cfg)?;
    match &cfg.out {
        Some(path) => out.table.write(std::path::Path::new(path))?,
        None => print!("{}", out.table.to_csv()?),
    }
    if let Some(p) = out.passed {
        eprintln!("{}", if p { "PASS" } else { "FAIL" });
    }
    Ok(out.passed.unwrap_or(true))
}
