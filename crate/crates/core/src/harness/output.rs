//! CSV and metadata files.
//!
//! `trace.csv`, one row per outer iteration `k`:
//! `k, gamma_k, gamma_next, [gamma_opt_k,] cost, cost_std_err, alpha_k,
//! inner_steps, rollouts, rollouts_cum, dropped_pairs, retried, gain_next`.
//! `gamma_opt_k = 1 / rho^2(A - B K^k)` appears only when the true linear
//! plant is known. `cost` is the cost of `K^{k+1}` at `gamma_k`, and `gain_next` is
//! `K^{k+1}` flattened row-major with space separators.
//!
//! Reals are written with 17 significant digits.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use super::experiments::{CartPoleReport, DimScalingResult};
use super::roa::RoaResult;
use crate::annealing::AnnealingTrace;
use crate::control::{spectral_radius, LtiSystem};
use crate::error::{Error, Result};

pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let mut parts = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            parts.push(fmt_real(m[(i, j)]));
        }
    }
    parts.join(" ")
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("output: {e}"))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

pub fn create_file(dir: &Path, name: &str) -> Result<File> {
    std::fs::create_dir_all(dir).map_err(io_err)?;
    File::create(dir.join(name)).map_err(io_err)
}

fn gamma_opt(sys: &LtiSystem, trace: &AnnealingTrace, k: usize) -> Result<f64> {
    let pol = trace.policy_at(k).expect("k within trace");
    let rho = spectral_radius(&sys.closed_loop(&pol)?)?;
    Ok(1.0 / (rho * rho))
}

pub fn write_trace_csv<W: Write>(
    w: W,
    trace: &AnnealingTrace,
    known: Option<&LtiSystem>,
) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header = vec!["k", "gamma_k", "gamma_next"];
    if known.is_some() {
        header.push("gamma_opt_k");
    }
    header.extend([
        "cost",
        "cost_std_err",
        "alpha_k",
        "inner_steps",
        "rollouts",
        "rollouts_cum",
        "dropped_pairs",
        "retried",
        "gain_next",
    ]);
    out.write_record(&header).map_err(io_err)?;
    let mut cum = 0;
    for (k, rec) in trace.records.iter().enumerate() {
        cum += rec.rollouts;
        let mut row = vec![
            rec.k.to_string(),
            fmt_real(rec.gamma),
            fmt_real(rec.gamma_next),
        ];
        if let Some(sys) = known {
            row.push(fmt_real(gamma_opt(sys, trace, k)?));
        }
        row.extend([
            fmt_real(rec.cost),
            fmt_real(rec.cost_std_err),
            fmt_real(rec.alpha),
            rec.inner_steps.to_string(),
            rec.rollouts.to_string(),
            cum.to_string(),
            rec.dropped_pairs.to_string(),
            rec.retried.to_string(),
            fmt_matrix(&rec.gain),
        ]);
        out.write_record(&row).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Per-dimension summary of a scaling study.
pub fn write_dim_study_csv<W: Write>(w: W, res: &DimScalingResult) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record([
        "n",
        "completed",
        "excluded",
        "mean_rollouts",
        "std_rollouts",
    ])
    .map_err(io_err)?;
    for r in &res.rows {
        out.write_record([
            r.n.to_string(),
            r.completed.to_string(),
            r.excluded.to_string(),
            fmt_real(r.mean_rollouts),
            fmt_real(r.std_rollouts),
        ])
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Per-trial outcomes of a scaling study.
pub fn write_dim_trials_csv<W: Write>(w: W, res: &DimScalingResult) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record([
        "n",
        "trial",
        "seed",
        "status",
        "outer_iterations",
        "total_rollouts",
        "final_rho",
    ])
    .map_err(io_err)?;
    for t in &res.trials {
        out.write_record([
            t.n.to_string(),
            t.trial.to_string(),
            t.seed.to_string(),
            status_name(&t.status),
            t.outer_iterations.to_string(),
            t.total_rollouts.to_string(),
            fmt_real(t.final_rho),
        ])
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn status_name<T: Serialize>(s: &T) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// One row per cart-pole run.
pub fn write_cartpole_study_csv<W: Write>(w: W, rep: &CartPoleReport) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record([
        "r_ini",
        "trial",
        "status",
        "outer_iterations",
        "total_rollouts",
        "final_gamma",
        "r_roa",
        "gain",
    ])
    .map_err(io_err)?;
    for run in &rep.runs {
        out.write_record([
            fmt_real(run.r_ini),
            run.trial.to_string(),
            status_name(&run.trace.status),
            run.trace.outer_iterations().to_string(),
            run.trace.total_rollouts.to_string(),
            fmt_real(run.trace.final_gamma),
            run.roa
                .as_ref()
                .map_or(String::new(), |r| fmt_real(r.r_roa)),
            fmt_matrix(run.trace.final_policy.gain()),
        ])
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Per-radius sweep results: `label, radius, successes, trials`.
pub fn write_roa_csv<W: Write>(w: W, sweeps: &[(String, &RoaResult)]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["label", "radius", "successes", "trials"])
        .map_err(io_err)?;
    for (label, res) in sweeps {
        for (radius, ok) in res.radius_grid.iter().zip(&res.successes) {
            out.write_record([
                label.clone(),
                fmt_real(*radius),
                ok.to_string(),
                res.trials_per_radius.to_string(),
            ])
            .map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

/// Run metadata; the only file that holds timing.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub command: String,
    pub crate_version: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
    pub summary: serde_json::Value,
    pub started_unix_secs: u64,
    pub wall_time_secs: f64,
    pub threads: usize,
}

pub fn write_meta(dir: &Path, meta: &Meta) -> Result<()> {
    let mut f = create_file(dir, "meta.json")?;
    serde_json::to_writer_pretty(&mut f, meta).map_err(io_err)?;
    writeln!(f).map_err(io_err)
}
