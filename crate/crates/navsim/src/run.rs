//! Sweep run directories: a manifest written before anything else, then the
//! per-seed metrics, per-cell details, per-rate summary, marginal series and
//! fit report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use navsim_core::analysis::{fit_exp_decay, model_selection, AnalysisError, FitResult};
use navsim_core::experiments::{market_share_sweep, run_sweep, Stat, SweepInputs, SweepResult};
use navsim_core::metrics::{marginal_series, MarginalSeries};

use crate::exec::RayonExecutor;
use crate::io::{self, num, write_rows};
use crate::plan::PlanFile;
use crate::Error;

pub const MANIFEST: &str = "manifest.json";
pub const PER_SEED: &str = "per_seed.csv";
pub const CELLS: &str = "cells.csv";
pub const SUMMARY: &str = "summary.csv";
pub const MARGINALS: &str = "marginals.csv";
pub const FIT_REPORT: &str = "fit_report.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config_hash: String,
    /// the effective plan, seed override applied
    pub plan: PlanFile,
    /// directory the plan's relative paths resolve against
    pub plan_dir: PathBuf,
    pub inputs: Vec<InputDigest>,
    pub tool_version: String,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Adoption,
    MarketShare,
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub result: SweepResult,
}

/// Loads the plan, creates `out_root/<config hash>`, writes the manifest and
/// then every output table.
pub fn execute(
    plan_path: &Path,
    out_root: &Path,
    seed: Option<u64>,
    jobs: usize,
    kind: SweepKind,
    command: Vec<String>,
) -> Result<RunOutcome, Error> {
    let mut plan_file = PlanFile::read(plan_path)?;
    if let Some(s) = seed {
        plan_file.master_seed = s;
    }
    let plan_dir = plan_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let mut inputs = Vec::new();
    for p in plan_file.input_files(&plan_dir) {
        let sha256 = io::file_digest(&p)?;
        inputs.push(InputDigest { path: p, sha256 });
    }
    let pairs: Vec<(PathBuf, String)> = inputs
        .iter()
        .map(|d| (d.path.clone(), d.sha256.clone()))
        .collect();
    let config_hash = plan_file.config_hash(&pairs);
    let loaded = plan_file.load(&plan_dir)?;

    let dir = out_root.join(&config_hash[..16]);
    std::fs::create_dir_all(&dir).map_err(|e| Error::File {
        path: dir.clone(),
        msg: e.to_string(),
    })?;
    let manifest = RunManifest {
        command,
        config_hash,
        master_seed: plan_file.master_seed,
        plan: plan_file,
        plan_dir: std::fs::canonicalize(&plan_dir).unwrap_or(plan_dir),
        inputs,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    io::write_text(
        &dir.join(MANIFEST),
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )?;

    let services = loaded.service_refs();
    let inputs = SweepInputs {
        network: &loaded.network,
        demand: loaded.demand.source(),
        services: &services,
        history: &loaded.history,
    };
    let exec = RayonExecutor::new(jobs);
    let result = match kind {
        SweepKind::Adoption => run_sweep(&inputs, &loaded.plan, &exec),
        SweepKind::MarketShare => market_share_sweep(&inputs, &loaded.plan, &exec),
    }
    .map_err(Error::invalid)?;
    write_outputs(&dir, &result)?;
    Ok(RunOutcome {
        dir,
        manifest,
        result,
    })
}

pub fn write_outputs(dir: &Path, result: &SweepResult) -> Result<(), Error> {
    write_rows(
        &dir.join(PER_SEED),
        io::METRICS_HEADER,
        result.cells.iter().map(|c| io::metrics_row(&c.metrics)),
    )?;
    write_cells(&dir.join(CELLS), result)?;
    write_summary(&dir.join(SUMMARY), result)?;
    let marginals = marginal_series(&result.means_by_rate()).ok();
    if let Some(m) = &marginals {
        write_marginals(&dir.join(MARGINALS), m)?;
    }
    write_fit_report(&dir.join(FIT_REPORT), result, marginals.as_ref())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_cells(path: &Path, result: &SweepResult) -> Result<(), Error> {
    write_rows(
        path,
        &[
            "rate",
            "repeat",
            "seed",
            "route_diversity",
            "mean_co2_mg",
            "total_co2_mg",
            "vehicle_co2_mg",
            "entropy_norm",
            "teleports",
            "treated",
            "control",
            "diversity_treated",
            "diversity_control",
            "norm_diversity_treated",
            "norm_diversity_control",
            "incomplete",
        ],
        result.cells.iter().map(|c| {
            let m = &c.metrics;
            vec![
                c.rate.to_string(),
                c.repeat.to_string(),
                c.seed.to_string(),
                m.route_diversity.to_string(),
                num(m.mean_co2),
                num(m.total_co2),
                num(c.vehicle_co2),
                num(m.entropy_norm),
                m.teleports.to_string(),
                m.treated.to_string(),
                m.control.to_string(),
                opt(m.diversity_treated),
                opt(m.diversity_control),
                opt(m.norm_diversity_treated),
                opt(m.norm_diversity_control),
                m.incomplete.to_string(),
            ]
        }),
    )
}

pub const SUMMARY_HEADER: &[&str] = &[
    "rate",
    "runs",
    "route_diversity_mean",
    "route_diversity_std",
    "mean_co2_mg_mean",
    "mean_co2_mg_std",
    "total_co2_mg_mean",
    "total_co2_mg_std",
    "entropy_norm_mean",
    "entropy_norm_std",
    "teleports_mean",
    "teleports_std",
    "norm_diversity_treated_mean",
    "norm_diversity_treated_std",
    "norm_diversity_control_mean",
    "norm_diversity_control_std",
];

fn stat_cols(s: Option<Stat>) -> [String; 2] {
    match s {
        Some(s) => [num(s.mean), num(s.std)],
        None => [String::new(), String::new()],
    }
}

fn write_summary(path: &Path, result: &SweepResult) -> Result<(), Error> {
    write_rows(
        path,
        SUMMARY_HEADER,
        result.summary.iter().map(|s| {
            let mut row = vec![s.rate.to_string(), s.runs.to_string()];
            for st in [
                Some(s.route_diversity),
                Some(s.mean_co2),
                Some(s.total_co2),
                Some(s.entropy_norm),
                Some(s.teleports),
                s.norm_diversity_treated,
                s.norm_diversity_control,
            ] {
                row.extend(stat_cols(st));
            }
            row
        }),
    )
}

/// `delta_diversity,delta_co2_mg` first so `analyze fit --model expdecay`
/// reads it without column flags.
fn write_marginals(path: &Path, m: &MarginalSeries) -> Result<(), Error> {
    write_rows(
        path,
        &["delta_diversity", "delta_co2_mg", "rate"],
        m.rates
            .iter()
            .zip(&m.delta_diversity)
            .zip(&m.delta_co2)
            .map(|((r, dd), de)| [num(*dd), num(*de), r.to_string()]),
    )
}

/// Ranked models of mean diversity against the rate, then the exponential
/// decay of ΔE on ΔD when the marginal series exists. A fit that does not
/// converge is reported with its best parameters; other failures are
/// skipped.
pub fn fit_rows(result: &SweepResult, marginals: Option<&MarginalSeries>) -> Vec<FitResult> {
    let xs: Vec<f64> = result.summary.iter().map(|s| f64::from(s.rate)).collect();
    let ys: Vec<f64> = result.summary.iter().map(|s| s.route_diversity.mean).collect();
    let mut rows = Vec::new();
    if let Ok(r) = model_selection(&xs, &ys) {
        rows.extend(r.ranked);
    }
    if let Some(m) = marginals {
        match fit_exp_decay(&m.delta_diversity, &m.delta_co2) {
            Ok(f) => rows.push(f),
            Err(AnalysisError::NonConvergence { best }) => rows.push(*best),
            Err(_) => {}
        }
    }
    rows
}

fn write_fit_report(
    path: &Path,
    result: &SweepResult,
    marginals: Option<&MarginalSeries>,
) -> Result<(), Error> {
    write_rows(
        path,
        io::FIT_HEADER,
        fit_rows(result, marginals).iter().map(io::fit_row),
    )
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, Error> {
    let path = dir.join(MANIFEST);
    serde_json::from_str(&io::read_text(&path)?).map_err(|e| Error::Data {
        path,
        line: e.line() as u64,
        msg: e.to_string(),
    })
}
