//! Repetition orchestration and result files: `runs.csv` (one row per run)
//! and `summary.json` (one aggregate per protocol/regime cell).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::chord::Chord;
use crate::config::BenchmarkConfig;
use crate::kademlia::Kademlia;
use crate::metrics::{
    aggregate_runs, compute_msgs_per_query, compute_p95, compute_precision, compute_recall,
    compute_success, CellSummary, CostView, MetricsRecord, RunMetrics,
};
use crate::overlay::Protocol;
use crate::pastry::Pastry;
use crate::sim::Time;
use crate::workload::{run_scenario, Catalog, RegimeKind, RunOutcome};

pub const CSV_HEADER: [&str; 14] = [
    "protocol",
    "nodes",
    "rep",
    "seed",
    "regime",
    "queries",
    "success",
    "precision",
    "recall",
    "p95_latency",
    "msgs_observed_per_query",
    "msgs_get_per_query",
    "mean_hops",
    "mean_routing_entries",
];

/// Runs one repetition and returns the raw outcome.
pub fn simulate(
    cfg: &BenchmarkConfig,
    protocol: Protocol,
    regime: RegimeKind,
    seed: u64,
) -> Result<RunOutcome> {
    let scenario = cfg.scenario(regime);
    let params = cfg.overlay_params();
    let out = match protocol {
        Protocol::Chord => run_scenario::<Chord>(&scenario, &params, seed),
        Protocol::Pastry => run_scenario::<Pastry>(&scenario, &params, seed),
        Protocol::Kademlia => run_scenario::<Kademlia>(&scenario, &params, seed),
    };
    out.with_context(|| format!("{protocol} {regime} seed {seed}"))
}

/// Reduces a run to its service-level metrics.
pub fn measure(
    cfg: &BenchmarkConfig,
    protocol: Protocol,
    regime: RegimeKind,
    rep: u32,
    seed: u64,
    outcome: &RunOutcome,
) -> RunMetrics {
    let results = &outcome.results;
    let n = results.len();
    let latencies: Vec<Time> = results.iter().map(|r| r.latency()).collect();
    let providers = Catalog::new(cfg.nodes).providers(cfg.target_skill);
    let hops: Vec<f64> = results
        .iter()
        .filter_map(|r| r.hops)
        .map(f64::from)
        .collect();
    RunMetrics {
        record: MetricsRecord {
            protocol,
            nodes: cfg.nodes,
            rep,
            seed,
            regime,
            queries: n,
            success: compute_success(results),
            precision: compute_precision(results),
            recall: compute_recall(results, providers),
            p95_latency: compute_p95(&latencies),
            msgs_observed_per_query: compute_msgs_per_query(&outcome.ledger, n, CostView::Observed),
            msgs_get_per_query: compute_msgs_per_query(&outcome.ledger, n, CostView::QueryOnly),
            mean_hops: (!hops.is_empty()).then(|| hops.iter().sum::<f64>() / hops.len() as f64),
            mean_routing_entries: outcome.mean_routing_entries,
        },
        latencies,
        window: outcome.ledger.window(),
    }
}

pub fn run_one(
    cfg: &BenchmarkConfig,
    protocol: Protocol,
    regime: RegimeKind,
    rep: u32,
) -> Result<RunMetrics> {
    let seed = cfg.seed.wrapping_add(u64::from(rep));
    let outcome = simulate(cfg, protocol, regime, seed)?;
    Ok(measure(cfg, protocol, regime, rep, seed, &outcome))
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub config: BenchmarkConfig,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug)]
pub struct BenchmarkReport {
    pub runs: Vec<RunMetrics>,
    pub summary: Summary,
}

/// Every (protocol, regime, rep) run in deterministic order, then the
/// per-cell aggregates. `progress` sees each finished run.
pub fn run_benchmark(
    cfg: &BenchmarkConfig,
    mut progress: impl FnMut(&RunMetrics),
) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let mut runs = Vec::new();
    let mut cells: BTreeMap<(usize, usize), Vec<RunMetrics>> = BTreeMap::new();
    for (pi, &protocol) in cfg.protocols.iter().enumerate() {
        for (ri, &regime) in cfg.regimes.iter().enumerate() {
            for rep in 0..cfg.reps {
                let m = run_one(cfg, protocol, regime, rep)?;
                progress(&m);
                cells.entry((pi, ri)).or_default().push(m.clone());
                runs.push(m);
            }
        }
    }
    let cells = cells
        .values()
        .map(|runs| aggregate_runs(runs))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BenchmarkReport {
        runs,
        summary: Summary {
            config: cfg.clone(),
            cells,
        },
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn csv_bytes(runs: &[RunMetrics]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in runs {
        let m = &r.record;
        w.write_record([
            m.protocol.name().to_string(),
            m.nodes.to_string(),
            m.rep.to_string(),
            m.seed.to_string(),
            m.regime.name().to_string(),
            m.queries.to_string(),
            opt(m.success),
            opt(m.precision),
            opt(m.recall),
            opt(m.p95_latency),
            opt(m.msgs_observed_per_query),
            opt(m.msgs_get_per_query),
            opt(m.mean_hops),
            opt(m.mean_routing_entries),
        ])?;
    }
    Ok(w.into_inner()?)
}

pub fn json_bytes(summary: &Summary) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(summary)?;
    out.push(b'\n');
    Ok(out)
}

/// Writes `runs.csv` and `summary.json` into `dir`; both are rendered
/// before either is written.
pub fn write_outputs(dir: &Path, report: &BenchmarkReport) -> Result<(PathBuf, PathBuf)> {
    let csv = csv_bytes(&report.runs)?;
    let json = json_bytes(&report.summary)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv_path = dir.join("runs.csv");
    let json_path = dir.join("summary.json");
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    fs::write(&json_path, json).with_context(|| format!("writing {}", json_path.display()))?;
    Ok((csv_path, json_path))
}

/// Plot data from a `runs.csv`: for each figure metric, one line per
/// (regime, protocol) with the query-weighted mean over repetitions.
pub fn plot_data(csv_text: &str) -> Result<String> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("missing column {name}"))
    };
    let (c_proto, c_regime, c_queries) = (col("protocol")?, col("regime")?, col("queries")?);
    let figures = [
        "p95_latency",
        "msgs_observed_per_query",
        "msgs_get_per_query",
    ];
    let metric_cols = figures.iter().map(|f| col(f)).collect::<Result<Vec<_>>>()?;
    // (regime, protocol) -> per figure (weighted sum, weight)
    let mut acc: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let w: f64 = row[c_queries].parse().context("queries column")?;
        let slot = acc
            .entry((row[c_regime].to_string(), row[c_proto].to_string()))
            .or_insert_with(|| vec![(0.0, 0.0); figures.len()]);
        for (i, &c) in metric_cols.iter().enumerate() {
            if let Ok(v) = row[c].parse::<f64>() {
                slot[i].0 += v * w;
                slot[i].1 += w;
            }
        }
    }
    let mut out = String::new();
    for (i, fig) in figures.iter().enumerate() {
        out.push_str(&format!("# {fig}\n# regime protocol value\n"));
        for ((regime, proto), slots) in &acc {
            let (s, w) = slots[i];
            if w > 0.0 {
                out.push_str(&format!("{regime} {proto} {}\n", s / w));
            }
        }
        out.push('\n');
    }
    Ok(out)
}
