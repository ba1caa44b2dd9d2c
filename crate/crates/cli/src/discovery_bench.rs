//! Message counts of discovery as the group grows: `n` nodes start at once
//! on the simulated network and run until all hold the same keys.

use lcmsec::scenarios;
use lcmsec::transport::SimConfig;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscoveryRow {
    pub nodes: usize,
    pub seed: u64,
    pub mu_ms: f64,
    pub sigma_ms: f64,
    pub loss: f64,
    pub converged: bool,
    /// Virtual time to agreement; empty when the run hit the limit.
    pub time_ms: Option<u64>,
    pub joins: u64,
    pub responses: u64,
    /// SHA-256 over every datagram sent, for reproducibility checks.
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscoverySummary {
    pub nodes: usize,
    pub runs: usize,
    pub converged: usize,
    pub median_joins: f64,
    pub median_responses: f64,
    pub median_time_ms: f64,
}

#[derive(Debug, Clone)]
pub struct DiscoveryOpts {
    pub nodes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub mu_ms: f64,
    pub sigma_ms: f64,
    pub loss: f64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run_one(nodes: usize, seed: u64, opts: &DiscoveryOpts) -> Result<DiscoveryRow, CliError> {
    let sim = SimConfig { seed, loss: opts.loss, mu_ms: opts.mu_ms, sigma_ms: opts.sigma_ms, ..SimConfig::default() };
    let run = scenarios::convergence(nodes, &sim)?;
    Ok(DiscoveryRow {
        nodes,
        seed,
        mu_ms: opts.mu_ms,
        sigma_ms: opts.sigma_ms,
        loss: opts.loss,
        converged: run.converged_ms.is_some(),
        time_ms: run.converged_ms,
        joins: run.joins,
        responses: run.responses,
        transcript: hex(&run.transcript),
    })
}

/// Every (nodes, seed) pair, in order. A run that misses the limit is
/// reported, not an error.
pub fn run(opts: &DiscoveryOpts, mut progress: impl FnMut(&DiscoveryRow)) -> Result<Vec<DiscoveryRow>, CliError> {
    let mut rows = Vec::with_capacity(opts.nodes.len() * opts.seeds.len());
    for &n in &opts.nodes {
        for &seed in &opts.seeds {
            let row = run_one(n, seed, opts)?;
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Median with the two middle values averaged for even counts.
pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Per group size; medians cover all runs, converged or not, except the
/// time, which only exists for converged runs.
pub fn summarize(rows: &[DiscoveryRow]) -> Vec<DiscoverySummary> {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.nodes).collect();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|n| {
            let of_n: Vec<_> = rows.iter().filter(|r| r.nodes == n).collect();
            DiscoverySummary {
                nodes: n,
                runs: of_n.len(),
                converged: of_n.iter().filter(|r| r.converged).count(),
                median_joins: median(of_n.iter().map(|r| r.joins as f64)),
                median_responses: median(of_n.iter().map(|r| r.responses as f64)),
                median_time_ms: median(of_n.iter().filter_map(|r| r.time_ms.map(|t| t as f64))),
            }
        })
        .collect()
}
