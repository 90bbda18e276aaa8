use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fwlab_bench::config::{preset, ExperimentConfig};
use fwlab_bench::{replay, run, Check, Command};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fwlab", version, about = "Reeb-graph averaging experiments")]
struct Cli {
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses one per core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// TOML configuration file.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: `duffing` (default) or `radial`.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Comma-separated κ sweep, e.g. `1,10,100`. Applies to `book.kappa` for `book`.
    #[arg(long, global = true, value_delimiter = ',')]
    kappa: Option<Vec<f64>>,
    /// Confinement exponent of the book experiment.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Critical points and the Reeb graph.
    BuildGraph,
    /// Edge coefficient tables, vertex weights and endpoint fits.
    Coeffs,
    /// Projected ambient ensembles for every κ.
    SimulateAmbient,
    /// Graph diffusion ensemble.
    SimulateGraph,
    /// Both ensembles and their distances across the κ sweep.
    Compare,
    /// Book diffusion against the three-dimensional ambient flow.
    Book,
    /// n-point motions under a common noise.
    Flow,
    /// Closed-form and Monte Carlo checks on fixed presets.
    Validate,
    /// Reruns a manifest and compares every output hash.
    Replay { manifest: PathBuf },
    /// Prints the resolved configuration as TOML.
    ShowConfig,
}

impl Cmd {
    fn command(&self) -> Option<Command> {
        Some(match self {
            Cmd::BuildGraph => Command::BuildGraph,
            Cmd::Coeffs => Command::Coeffs,
            Cmd::SimulateAmbient => Command::SimulateAmbient,
            Cmd::SimulateGraph => Command::SimulateGraph,
            Cmd::Compare => Command::Compare,
            Cmd::Book => Command::Book,
            Cmd::Flow => Command::Flow,
            Cmd::Validate => Command::Validate,
            Cmd::Replay { .. } | Cmd::ShowConfig => return None,
        })
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(name)) => preset(name).with_context(|| format!("unknown preset `{name}`"))?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(k) = &cli.kappa {
        if matches!(cli.cmd, Cmd::Book) {
            cfg.book.kappa = k.clone();
        } else {
            cfg.ambient.kappa = k.clone();
        }
    }
    if let Some(a) = cli.alpha {
        cfg.book.alpha = a;
    }
    cfg.check()?;
    Ok(cfg)
}

fn report(checks: &[Check]) {
    for c in checks {
        let crit = c.criterion.map(|k| format!(" [{k}]")).unwrap_or_default();
        println!("{} {}{crit}: {:.4e} (bound {:.4e}) {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold, c.detail);
    }
}

fn main_inner(cli: Cli) -> Result<bool> {
    if let Cmd::Replay { manifest } = &cli.cmd {
        let (out, diff) = replay(manifest, &cli.out, cli.threads)?;
        report(&out.checks);
        for d in &diff {
            println!("DIFF {d}");
        }
        if diff.is_empty() {
            println!("replay reproduced all {} outputs", out.manifest.outputs.len());
        }
        return Ok(diff.is_empty() && out.passed());
    }
    let cfg = resolve(&cli)?;
    let Some(cmd) = cli.cmd.command() else {
        print!("{}", cfg.to_toml());
        return Ok(true);
    };
    let out = run(cmd, &cfg, &cli.out, cli.threads)?;
    report(&out.checks);
    let failed = out.checks.iter().filter(|c| !c.passed).count();
    println!("{}: {} checks, {failed} failed, outputs in {}", cmd.name(), out.checks.len(), cli.out.display());
    if out.manifest.passed.is_none() {
        bail!("no verdict recorded");
    }
    Ok(out.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
