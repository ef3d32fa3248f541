//! Message-class accounting and the service-level metrics reported per run
//! and per (protocol, regime) cell.

use serde::Serialize;
use thiserror::Error;

use crate::overlay::{Protocol, QueryId};
use crate::sim::Time;
use crate::store::SkillId;
use crate::workload::RegimeKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MessageClass {
    Get,
    Put,
    Maintenance,
    Join,
}

impl MessageClass {
    pub const ALL: [MessageClass; 4] = [
        MessageClass::Get,
        MessageClass::Put,
        MessageClass::Maintenance,
        MessageClass::Join,
    ];

    fn slot(self) -> usize {
        self as usize
    }
}

/// Class of a sent message plus, for GET traffic, the query it serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tag {
    pub class: MessageClass,
    pub query: Option<QueryId>,
}

impl Tag {
    pub const PUT: Tag = Tag {
        class: MessageClass::Put,
        query: None,
    };
    pub const MAINTENANCE: Tag = Tag {
        class: MessageClass::Maintenance,
        query: None,
    };
    pub const JOIN: Tag = Tag {
        class: MessageClass::Join,
        query: None,
    };

    pub fn get(query: Option<QueryId>) -> Tag {
        Tag {
            class: MessageClass::Get,
            query,
        }
    }
}

/// Counts every send. The discovery window is `[first query issue, last query
/// completion]`; a message belongs to it when its send time does.
#[derive(Clone, Debug, Default)]
pub struct MessageLedger {
    total: [u64; 4],
    in_window: [u64; 4],
    per_query: Vec<u64>,
    window_start: Option<Time>,
    window_end: Option<Time>,
}

impl MessageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, now: Time, tag: Tag) {
        let slot = tag.class.slot();
        self.total[slot] += 1;
        if let Some(start) = self.window_start {
            if now >= start && self.window_end.is_none_or(|end| now <= end) {
                self.in_window[slot] += 1;
            }
        }
        if let (MessageClass::Get, Some(q)) = (tag.class, tag.query) {
            let q = q as usize;
            if q >= self.per_query.len() {
                self.per_query.resize(q + 1, 0);
            }
            self.per_query[q] += 1;
        }
    }

    pub fn open_window(&mut self, start: Time) {
        self.window_start = Some(start);
        self.window_end = None;
    }

    pub fn close_window(&mut self, end: Time) {
        self.window_end = Some(end);
    }

    pub fn window(&self) -> (Option<Time>, Option<Time>) {
        (self.window_start, self.window_end)
    }

    pub fn total(&self) -> u64 {
        self.total.iter().sum()
    }

    pub fn total_of(&self, class: MessageClass) -> u64 {
        self.total[class.slot()]
    }

    pub fn in_window(&self) -> u64 {
        self.in_window.iter().sum()
    }

    pub fn in_window_of(&self, class: MessageClass) -> u64 {
        self.in_window[class.slot()]
    }

    /// GET messages attributed to query `q`.
    pub fn query_messages(&self, q: QueryId) -> u64 {
        self.per_query.get(q as usize).copied().unwrap_or(0)
    }

    pub fn attributed_get(&self) -> u64 {
        self.per_query.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostView {
    /// Every message sent inside the discovery window.
    Observed,
    /// GET messages attributed to queries by ID.
    QueryOnly,
}

/// Outcome of one discovery query.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryResult {
    pub id: QueryId,
    pub origin: u32,
    pub target: SkillId,
    pub issue_time: Time,
    pub completion_time: Time,
    pub success: bool,
    /// `(agent, skill)` of every descriptor returned after `top_k` truncation.
    pub returned: Vec<(u32, SkillId)>,
    /// Forwarding hops (Chord, Pastry) or rounds (Kademlia); `None` when the
    /// lookup never reached a responsible node.
    pub hops: Option<u32>,
}

impl QueryResult {
    pub fn latency(&self) -> Time {
        self.completion_time - self.issue_time
    }

    fn matching(&self) -> impl Iterator<Item = &(u32, SkillId)> {
        self.returned.iter().filter(move |(_, s)| *s == self.target)
    }
}

pub fn compute_success(results: &[QueryResult]) -> Option<f64> {
    if results.is_empty() {
        return None;
    }
    Some(results.iter().filter(|r| r.success).count() as f64 / results.len() as f64)
}

/// Mean over queries of distinct matching providers returned divided by the
/// catalog's provider count for the target.
pub fn compute_recall(results: &[QueryResult], providers: usize) -> Option<f64> {
    if results.is_empty() || providers == 0 {
        return None;
    }
    let sum: f64 = results
        .iter()
        .map(|r| {
            let mut agents: Vec<u32> = r.matching().map(|(a, _)| *a).collect();
            agents.sort_unstable();
            agents.dedup();
            agents.len() as f64 / providers as f64
        })
        .sum();
    Some(sum / results.len() as f64)
}

/// Mean of matching/returned over queries that returned anything.
pub fn compute_precision(results: &[QueryResult]) -> Option<f64> {
    let per_query: Vec<f64> = results
        .iter()
        .filter(|r| !r.returned.is_empty())
        .map(|r| r.matching().count() as f64 / r.returned.len() as f64)
        .collect();
    if per_query.is_empty() {
        return None;
    }
    Some(per_query.iter().sum::<f64>() / per_query.len() as f64)
}

/// Nearest-rank percentile: the value at 1-based index `ceil(p * n)` of the
/// ascending sample.
pub fn nearest_rank(latencies: &[Time], p: f64) -> Option<Time> {
    if latencies.is_empty() {
        return None;
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

pub fn compute_p95(latencies: &[Time]) -> Option<Time> {
    nearest_rank(latencies, 0.95)
}

pub fn compute_msgs_per_query(
    ledger: &MessageLedger,
    query_count: usize,
    view: CostView,
) -> Option<f64> {
    if query_count == 0 {
        return None;
    }
    let count = match view {
        CostView::Observed => ledger.in_window(),
        CostView::QueryOnly => ledger.attributed_get(),
    };
    Some(count as f64 / query_count as f64)
}

/// Per-run service-level results; one CSV row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub protocol: Protocol,
    pub nodes: usize,
    pub rep: u32,
    pub seed: u64,
    pub regime: RegimeKind,
    pub queries: usize,
    pub success: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub p95_latency: Option<f64>,
    pub msgs_observed_per_query: Option<f64>,
    pub msgs_get_per_query: Option<f64>,
    pub mean_hops: Option<f64>,
    pub mean_routing_entries: Option<f64>,
}

/// A run's record plus what aggregation needs beyond it.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub record: MetricsRecord,
    pub latencies: Vec<Time>,
    pub window: (Option<Time>, Option<Time>),
}

/// Query-count-weighted aggregate of one (protocol, regime) cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub protocol: Protocol,
    pub regime: RegimeKind,
    pub nodes: usize,
    pub reps: usize,
    pub queries: usize,
    pub success: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub p95_latency: Option<f64>,
    pub msgs_observed_per_query: Option<f64>,
    pub msgs_get_per_query: Option<f64>,
    pub mean_hops: Option<f64>,
    pub mean_routing_entries: Option<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("no runs to aggregate")]
    Empty,
    #[error("runs belong to different cells: {0}")]
    MixedCells(String),
}

fn weighted(runs: &[RunMetrics], field: impl Fn(&MetricsRecord) -> Option<f64>) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for r in runs {
        if let Some(v) = field(&r.record) {
            let w = r.record.queries as f64;
            num += v * w;
            den += w;
        }
    }
    (den > 0.0).then(|| num / den)
}

pub fn aggregate_runs(runs: &[RunMetrics]) -> Result<CellSummary, AggregateError> {
    let first = &runs.first().ok_or(AggregateError::Empty)?.record;
    for r in runs {
        let rec = &r.record;
        if rec.protocol != first.protocol || rec.regime != first.regime || rec.nodes != first.nodes
        {
            return Err(AggregateError::MixedCells(format!(
                "{:?}/{:?}/{} vs {:?}/{:?}/{}",
                first.protocol, first.regime, first.nodes, rec.protocol, rec.regime, rec.nodes
            )));
        }
    }
    // Sort the pooled sample so the result is independent of run order.
    let mut pooled: Vec<Time> = runs
        .iter()
        .flat_map(|r| r.latencies.iter().copied())
        .collect();
    pooled.sort_by(f64::total_cmp);
    let entries: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.record.mean_routing_entries)
        .collect();
    let mut ordered: Vec<&RunMetrics> = runs.iter().collect();
    ordered.sort_by_key(|r| r.record.rep);
    let ordered: Vec<RunMetrics> = ordered.into_iter().cloned().collect();
    Ok(CellSummary {
        protocol: first.protocol,
        regime: first.regime,
        nodes: first.nodes,
        reps: runs.len(),
        queries: runs.iter().map(|r| r.record.queries).sum(),
        success: weighted(&ordered, |r| r.success),
        precision: weighted(&ordered, |r| r.precision),
        recall: weighted(&ordered, |r| r.recall),
        p95_latency: compute_p95(&pooled),
        msgs_observed_per_query: weighted(&ordered, |r| r.msgs_observed_per_query),
        msgs_get_per_query: weighted(&ordered, |r| r.msgs_get_per_query),
        mean_hops: weighted(&ordered, |r| r.mean_hops),
        mean_routing_entries: (!entries.is_empty())
            .then(|| entries.iter().sum::<f64>() / entries.len() as f64),
    })
}
