//! Result tables: yearly estimates, per-chain traces and diagnostics.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::par::Execution;
use crate::project::{self, GlobalChangeDist};
use crate::sampler::{Diagnostics, Posterior};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub country: String,
    pub year: f64,
    pub median: f64,
    pub lower90: f64,
    pub upper90: f64,
}

/// Yearly U5MR medians and 90% intervals for every country, sorted by
/// (country, year).
pub fn estimates(
    model: &Model,
    post: &Posterior,
    dist: GlobalChangeDist,
    w: f64,
    seed: u64,
    exec: Execution,
) -> Result<Vec<EstimateRow>> {
    let mut rows = Vec::new();
    // countries are already held in code order
    for (ci, c) in model.countries.iter().enumerate() {
        let alpha = project::project_coefficients(model, post, ci, dist, w, seed, exec)?;
        for p in project::trajectory(&alpha, &c.basis, &project::yearly_grid(&c.basis))? {
            if !(p.median.is_finite() && p.lower.is_finite() && p.upper.is_finite()) {
                return Err(Error::Data(format!("{}: non-finite estimate at {}", c.code, p.year)));
            }
            rows.push(EstimateRow {
                country: c.code.clone(),
                year: p.year,
                median: p.median,
                lower90: p.lower,
                upper90: p.upper,
            });
        }
    }
    Ok(rows)
}

/// Fixed-precision CSV so that equal results give identical bytes.
pub fn write_estimates<W: Write>(w: W, rows: &[EstimateRow], path: &Path) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let e = |err| Error::csv(path, err);
    wr.write_record(["country", "year", "median", "lower90", "upper90"])
        .map_err(e)?;
    for r in rows {
        wr.write_record([
            r.country.clone(),
            format!("{}", r.year),
            format!("{:.6}", r.median),
            format!("{:.6}", r.lower90),
            format!("{:.6}", r.upper90),
        ])
        .map_err(e)?;
    }
    wr.flush().map_err(|err| Error::io(path, err))
}

/// One CSV per chain: a draw index column followed by every scalar parameter.
pub fn write_traces(dir: &Path, model: &Model, post: &Posterior) -> Result<Vec<std::path::PathBuf>> {
    let traces = post.traces(model);
    let names: Vec<&String> = traces.keys().collect();
    let mut paths = Vec::new();
    for (ci, chain) in post.chains.iter().enumerate() {
        let path = dir.join(format!("trace_chain{}.csv", ci + 1));
        let mut wr = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
        let mut header = vec!["draw".to_string()];
        header.extend(names.iter().map(|n| n.to_string()));
        wr.write_record(&header).map_err(|e| Error::csv(&path, e))?;
        for j in 0..chain.draws.len() {
            let mut rec = vec![j.to_string()];
            rec.extend(names.iter().map(|n| format!("{:.8e}", traces[*n][ci][j])));
            wr.write_record(&rec).map_err(|e| Error::csv(&path, e))?;
        }
        wr.flush().map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Serialize)]
struct DiagnosticsReport<'a> {
    n_chains: usize,
    draws_per_chain: usize,
    rhat_threshold: f64,
    max_rhat: Option<f64>,
    rhat: &'a std::collections::BTreeMap<String, crate::sampler::diagnostics::Rhat>,
    ess: &'a std::collections::BTreeMap<String, f64>,
    acceptance: &'a std::collections::BTreeMap<String, f64>,
}

/// Largest finite R̂ over all parameters.
pub fn max_rhat(d: &Diagnostics) -> Option<f64> {
    d.rhat.values().filter_map(|r| r.value()).reduce(f64::max)
}

pub fn diagnostics_json(post: &Posterior, threshold: f64) -> Result<String> {
    let d = &post.diagnostics;
    let report = DiagnosticsReport {
        n_chains: post.chains.len(),
        draws_per_chain: post.chains.first().map_or(0, |c| c.draws.len()),
        rhat_threshold: threshold,
        max_rhat: max_rhat(d),
        rhat: &d.rhat,
        ess: &d.ess,
        acceptance: &d.acceptance,
    };
    serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidArgument(format!("diagnostics: {e}")))
}
