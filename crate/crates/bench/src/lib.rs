//! Experiment harness: configuration, runs with manifests, convergence reports and plots.

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod plot;

use anyhow::{anyhow, bail, Result};
use config::ExperimentConfig;
use manifest::{Manifest, OutDir, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    BuildGraph,
    Coeffs,
    SimulateAmbient,
    SimulateGraph,
    Compare,
    Book,
    Flow,
    Validate,
}

impl Command {
    pub const ALL: [Command; 8] = [Self::BuildGraph, Self::Coeffs, Self::SimulateAmbient, Self::SimulateGraph, Self::Compare, Self::Book, Self::Flow, Self::Validate];

    pub fn name(self) -> &'static str {
        match self {
            Self::BuildGraph => "build-graph",
            Self::Coeffs => "coeffs",
            Self::SimulateAmbient => "simulate-ambient",
            Self::SimulateGraph => "simulate-graph",
            Self::Compare => "compare",
            Self::Book => "book",
            Self::Flow => "flow",
            Self::Validate => "validate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| anyhow!("unknown command `{s}`"))
    }
}

/// One pass/fail verdict with the measured value and the bound it was held to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Acceptance criterion this check belongs to, if any.
    pub criterion: Option<u8>,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    /// Passes when `value ≤ threshold`.
    pub fn at_most(name: impl Into<String>, criterion: Option<u8>, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), criterion, passed: value <= threshold, value, threshold, detail: detail.into() }
    }

    /// Passes when `value ≥ threshold`.
    pub fn at_least(name: impl Into<String>, criterion: Option<u8>, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), criterion, passed: value >= threshold, value, threshold, detail: detail.into() }
    }

    pub fn flag(name: impl Into<String>, criterion: Option<u8>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), criterion, passed, value: if passed { 1.0 } else { 0.0 }, threshold: 1.0, detail: detail.into() }
    }
}

pub fn checks_csv(checks: &[Check]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "criterion", "passed", "value", "threshold", "detail"]).expect("in-memory csv");
    for c in checks {
        let crit = c.criterion.map(|k| k.to_string()).unwrap_or_default();
        w.write_record([c.name.as_str(), &crit, if c.passed { "true" } else { "false" }, &format!("{:e}", c.value), &format!("{:e}", c.threshold), &c.detail]).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

pub struct RunOutput {
    pub manifest: Manifest,
    pub checks: Vec<Check>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.manifest.passed == Some(true)
    }
}

/// Runs `cmd` on a pool of `threads` workers (0 = one per core), writing every output and the
/// manifest under `out`. A failing module still leaves the files written so far and a manifest
/// carrying the error.
pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<RunOutput> {
    cfg.check()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let start = Instant::now();
    let mut dir = OutDir::create(out)?;
    let res = pool.install(|| experiments::dispatch(cmd, cfg, &mut dir));
    let (checks, error) = match res {
        Ok(c) => (c, None),
        Err(e) => (Vec::new(), Some(format!("{e:#}"))),
    };
    if error.is_none() {
        dir.write("checks.csv", checks_csv(&checks).as_bytes())?;
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cmd.name().into(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        threads: pool.current_num_threads(),
        graph_schema_version: fwlab::reeb::GRAPH_SCHEMA_VERSION,
        path_schema_version: fwlab::pathio::PATH_SCHEMA_VERSION,
        outputs: dir.entries().to_vec(),
        passed: error.is_none().then(|| checks.iter().all(|c| c.passed)),
        error: error.clone(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(dir.path(MANIFEST_FILE), text)?;
    if let Some(e) = error {
        bail!("{} failed: {e}", cmd.name());
    }
    Ok(RunOutput { manifest, checks })
}

/// Reruns the command and configuration recorded in a manifest and lists every output whose
/// hash differs from the recorded one.
pub fn replay(manifest: &Path, out: &Path, threads: usize) -> Result<(RunOutput, Vec<String>)> {
    let m = Manifest::load(manifest)?;
    let cmd = Command::parse(&m.command)?;
    let again = run(cmd, &m.config, out, threads)?;
    let diff = m.differences(&again.manifest);
    Ok((again, diff))
}
