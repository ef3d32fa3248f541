//! The agent-directory workload: skill catalog, descriptor publication with
//! republish, query admission under startup regimes, and session churn. The
//! [`World`] drives one run of it over a [`Network`].

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::id::{IdError, IdSpace};
use crate::metrics::{MessageLedger, QueryResult};
use crate::net::{Network, Polled};
use crate::overlay::{Notification, Overlay, OverlayParams, QueryId};
use crate::sim::{sample_exponential, NetworkModel, RngStream, SimError, Time, Underlay};
use crate::store::{AgentDescriptor, SkillId};

pub const SKILL_COUNT: u16 = 50;

const EPS: Time = 1e-9;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error(transparent)]
    Id(#[from] IdError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("scenario needs at least one node")]
    NoNodes,
    #[error("target skill {0} has no providers among {1} agents")]
    NoProviders(String, usize),
}

/// Agent `i` advertises skill `i mod 50`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Catalog {
    agents: usize,
}

impl Catalog {
    pub fn new(agents: usize) -> Self {
        Self { agents }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn skill_of(&self, agent: u32) -> SkillId {
        SkillId((agent % u32::from(SKILL_COUNT)) as u16)
    }

    pub fn providers(&self, skill: SkillId) -> usize {
        let s = usize::from(skill.0);
        let k = usize::from(SKILL_COUNT);
        if s >= k {
            return 0;
        }
        self.agents / k + usize::from(s < self.agents % k)
    }

    pub fn skills() -> impl Iterator<Item = SkillId> {
        (0..SKILL_COUNT).map(SkillId)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Immediate,
    Warmed,
    WarmupOnly,
}

impl RegimeKind {
    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::Immediate => "immediate",
            RegimeKind::Warmed => "warmed",
            RegimeKind::WarmupOnly => "warmup_only",
        }
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegimeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "immediate" => Ok(RegimeKind::Immediate),
            "warmed" => Ok(RegimeKind::Warmed),
            "warmup_only" | "warmup-only" => Ok(RegimeKind::WarmupOnly),
            other => Err(format!("unknown regime `{other}`")),
        }
    }
}

/// When queries are admitted relative to bootstrap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StartupRegime {
    pub kind: RegimeKind,
    pub warmup: Time,
}

impl StartupRegime {
    /// Warmup of `log2 N` units.
    pub fn for_nodes(kind: RegimeKind, nodes: usize) -> Self {
        Self {
            kind,
            warmup: (nodes.max(1) as f64).log2(),
        }
    }

    /// Origin of the workload clock. Immediate runs use simulation time;
    /// warmed runs replay the immediate schedule once bootstrap and warmup
    /// are over; warmup-only runs count from bootstrap completion and skip
    /// the warmup window.
    pub fn clock_origin(&self, bootstrap_done: Time) -> Time {
        match self.kind {
            RegimeKind::Immediate => 0.0,
            RegimeKind::Warmed => bootstrap_done + self.warmup,
            RegimeKind::WarmupOnly => bootstrap_done,
        }
    }

    /// Admission time on the workload clock; queries are issued strictly
    /// after it.
    pub fn admission(&self) -> Time {
        match self.kind {
            RegimeKind::Immediate | RegimeKind::Warmed => 0.0,
            RegimeKind::WarmupOnly => self.warmup,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChurnModel {
    pub enabled: bool,
    pub session_mean: Time,
    pub downtime_mean: Time,
}

impl ChurnModel {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            session_mean: 100.0,
            downtime_mean: 30.0,
        }
    }

    pub fn session(&self, rng: &mut RngStream) -> Result<Time, SimError> {
        sample_exponential(rng, self.session_mean)
    }

    pub fn downtime(&self, rng: &mut RngStream) -> Result<Time, SimError> {
        sample_exponential(rng, self.downtime_mean)
    }

    pub fn expected_alive_fraction(&self) -> f64 {
        self.session_mean / (self.session_mean + self.downtime_mean)
    }

    /// Runs only the session/downtime alternation for `n` nodes that all
    /// start alive, returning the time-averaged alive fraction over
    /// `[0, horizon]`. Uses the same `churn` stream as a full run.
    pub fn simulate_alive_fraction(
        &self,
        n: usize,
        horizon: Time,
        seed: u64,
    ) -> Result<f64, SimError> {
        let mut rng = RngStream::new(seed, "churn");
        let mut up = 0.0;
        for _ in 0..n {
            let mut t = 0.0;
            let mut alive = true;
            while t < horizon {
                let span = if alive {
                    self.session(&mut rng)?
                } else {
                    self.downtime(&mut rng)?
                };
                let end = (t + span).min(horizon);
                if alive {
                    up += end - t;
                }
                t = end;
                alive = !alive;
            }
        }
        Ok(up / (n as f64 * horizon))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryPlan {
    pub target: SkillId,
    pub rate: f64,
    pub horizon: Time,
    pub top_k: usize,
}

impl QueryPlan {
    /// Multiples of `1/rate` in `(admission, horizon]` on the workload clock.
    pub fn issue_times(&self, admission: Time) -> Vec<Time> {
        if self.rate <= 0.0 {
            return Vec::new();
        }
        let step = 1.0 / self.rate;
        (1u32..)
            .map(|k| f64::from(k) * step)
            .skip_while(|t| *t <= admission + EPS)
            .take_while(|t| *t <= self.horizon + EPS)
            .collect()
    }
}

/// Everything one run needs besides the overlay parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub nodes: usize,
    pub regime: RegimeKind,
    pub plan: QueryPlan,
    pub churn: ChurnModel,
    pub publish_spread: Time,
    pub ttl: Time,
    pub republish_period: Time,
    pub underlay_degree: f64,
    pub loss: f64,
    pub id_bits: u32,
    pub tick_period: Time,
}

impl Scenario {
    pub fn startup(&self) -> StartupRegime {
        StartupRegime::for_nodes(self.regime, self.nodes)
    }

    pub fn join_stagger(&self) -> Time {
        (0.01f64).min(self.startup().warmup / self.nodes.max(1) as f64)
    }
}

/// Raw outcome of one run, before metric reduction.
#[derive(Debug)]
pub struct RunOutcome {
    pub results: Vec<QueryResult>,
    pub ledger: MessageLedger,
    pub bootstrap_done: Time,
    pub end_time: Time,
    pub mean_routing_entries: Option<f64>,
    /// Time-averaged fraction of alive nodes from bootstrap completion to
    /// the end of the run.
    pub alive_fraction: f64,
    pub departures: u64,
    pub messages_sent: u64,
    pub events: u64,
}

#[derive(Clone, Debug)]
enum Work {
    Join(u32),
    JoinCheck { node: u32, inc: u32 },
    JoinRetry { node: u32, inc: u32 },
    Leave(u32),
    Rejoin(u32),
    Publish { node: u32, inc: u32 },
    Query(QueryId),
    QueryDeadline(QueryId),
    Sweep,
    BootstrapDeadline,
}

/// Contacts tried per join round before backing off.
const JOIN_ATTEMPTS: u32 = 3;
/// Join procedures still unfinished after this many latencies are retried.
const JOIN_DEADLINE: Time = 64.0;
/// Queries unanswered after this many latencies count as failed.
const QUERY_DEADLINE: Time = 100.0;
const SWEEP_PERIOD: Time = 10.0;
/// Slack after the last scheduled join before bootstrap is declared over
/// regardless of stragglers.
const BOOTSTRAP_SLACK: Time = 500.0;

struct Pending {
    result: QueryResult,
    done: bool,
}

/// One run of the workload over overlay `O`.
pub struct World<O: Overlay> {
    scenario: Scenario,
    catalog: Catalog,
    net: Network<O, Work>,
    underlay: Underlay,
    bootstrap_rng: RngStream,
    publish_rng: RngStream,
    workload_rng: RngStream,
    churn_rng: RngStream,
    attempts: Vec<u32>,
    joined_once: Vec<bool>,
    initial_joined: usize,
    bootstrap_done: Option<Time>,
    queries: Vec<Pending>,
    query_times: Vec<Time>,
    open_queries: usize,
    issued: usize,
    alive: usize,
    alive_area: f64,
    alive_since: Time,
    departures: u64,
}

impl<O: Overlay> World<O> {
    pub fn new(
        scenario: Scenario,
        params: OverlayParams,
        seed: u64,
    ) -> Result<Self, WorkloadError> {
        if scenario.nodes == 0 {
            return Err(WorkloadError::NoNodes);
        }
        let catalog = Catalog::new(scenario.nodes);
        if catalog.providers(scenario.plan.target) == 0 {
            return Err(WorkloadError::NoProviders(
                scenario.plan.target.label(),
                scenario.nodes,
            ));
        }
        let space = IdSpace::new(scenario.id_bits)?;
        let ids = space.assign_node_ids(scenario.nodes)?;
        let model = NetworkModel::new(params.latency, scenario.loss)?;
        let mut topology = RngStream::new(seed, "topology");
        let underlay =
            Underlay::erdos_renyi(scenario.nodes, scenario.underlay_degree, &mut topology);
        let net = Network::new(space, ids, params, model, scenario.tick_period, seed);
        let n = scenario.nodes;
        Ok(Self {
            scenario,
            catalog,
            net,
            underlay,
            bootstrap_rng: RngStream::new(seed, "bootstrap"),
            publish_rng: RngStream::new(seed, "publish"),
            workload_rng: RngStream::new(seed, "workload"),
            churn_rng: RngStream::new(seed, "churn"),
            attempts: vec![0; n],
            joined_once: vec![false; n],
            initial_joined: 0,
            bootstrap_done: None,
            queries: Vec::new(),
            query_times: Vec::new(),
            open_queries: 0,
            issued: 0,
            alive: 0,
            alive_area: 0.0,
            alive_since: 0.0,
            departures: 0,
        })
    }

    pub fn catalog(&self) -> Catalog {
        self.catalog
    }

    fn latency(&self) -> Time {
        self.net.params().latency
    }

    fn set_alive(&mut self, delta: isize) {
        let now = self.net.now();
        if self.bootstrap_done.is_some() {
            self.alive_area += self.alive as f64 * (now - self.alive_since);
            self.alive_since = now;
        }
        self.alive = self.alive.saturating_add_signed(delta);
    }

    /// A joined underlay neighbour of `i`, else any joined node.
    fn contact_for(&mut self, i: u32) -> Option<u32> {
        let near: Vec<u32> = self
            .underlay
            .neighbors(i as usize)
            .iter()
            .copied()
            .filter(|&j| j != i && self.net.is_joined(j))
            .collect();
        if !near.is_empty() {
            return Some(near[self.bootstrap_rng.below(near.len())]);
        }
        let all: Vec<u32> = self.net.joined().into_iter().filter(|&j| j != i).collect();
        (!all.is_empty()).then(|| all[self.bootstrap_rng.below(all.len())])
    }

    fn begin_join(&mut self, i: u32) {
        match self.contact_for(i) {
            Some(c) => {
                self.net.start_join(i, c);
                let inc = self.net.incarnation(i);
                let at = self.net.now() + JOIN_DEADLINE * self.latency();
                self.net.schedule(at, Work::JoinCheck { node: i, inc });
            }
            None if !self.net.is_alive(i) => self.net.start_alone(i),
            None => {}
        }
    }

    fn retry_join(&mut self, i: u32) {
        self.attempts[i as usize] += 1;
        if self.attempts[i as usize] < JOIN_ATTEMPTS {
            self.begin_join(i);
        } else {
            self.attempts[i as usize] = 0;
            let inc = self.net.incarnation(i);
            let at = self.net.now() + self.latency();
            self.net.schedule(at, Work::JoinRetry { node: i, inc });
        }
    }

    fn on_joined(&mut self, i: u32) {
        let now = self.net.now();
        self.attempts[i as usize] = 0;
        let inc = self.net.incarnation(i);
        let offset = self.publish_rng.uniform() * self.scenario.publish_spread;
        self.net
            .schedule(now + offset, Work::Publish { node: i, inc });
        if !self.joined_once[i as usize] {
            self.joined_once[i as usize] = true;
            self.initial_joined += 1;
            if self.initial_joined == self.scenario.nodes {
                self.finish_bootstrap();
            }
        }
    }

    fn finish_bootstrap(&mut self) {
        if self.bootstrap_done.is_some() {
            return;
        }
        let now = self.net.now();
        self.bootstrap_done = Some(now);
        self.alive_since = now;
        let startup = self.scenario.startup();
        if startup.kind != RegimeKind::Immediate {
            self.schedule_queries(startup.clock_origin(now), startup.admission());
        }
        if self.scenario.churn.enabled {
            for i in 0..self.scenario.nodes as u32 {
                if self.net.is_alive(i) {
                    let s = self
                        .scenario
                        .churn
                        .session(&mut self.churn_rng)
                        .expect("valid session mean");
                    self.net.schedule(now + s, Work::Leave(i));
                }
            }
        }
    }

    fn schedule_queries(&mut self, origin: Time, admission: Time) {
        let times = self.scenario.plan.issue_times(admission);
        for (q, t) in times.iter().enumerate() {
            self.net.schedule(origin + t, Work::Query(q as QueryId));
        }
        self.query_times = times.iter().map(|t| origin + t).collect();
    }

    fn issue(&mut self, q: QueryId) {
        let now = self.net.now();
        let n = self.scenario.nodes;
        let mut origin = self.workload_rng.below(n) as u32;
        if !self.net.is_alive(origin) {
            let alive = self.net.alive();
            if !alive.is_empty() {
                origin = alive[self.workload_rng.below(alive.len())];
            }
        }
        let plan = self.scenario.plan;
        if self.issued == 0 {
            self.net.ledger_mut().open_window(now);
        }
        self.issued += 1;
        self.open_queries += 1;
        self.queries.push(Pending {
            result: QueryResult {
                id: q,
                origin,
                target: plan.target,
                issue_time: now,
                completion_time: now,
                success: false,
                returned: Vec::new(),
                hops: None,
            },
            done: false,
        });
        if !self.net.is_joined(origin) {
            self.complete(q, Vec::new(), None);
            return;
        }
        let key = self.net.space().hash_label(&plan.target.label());
        self.net.get(origin, q, key, plan.top_k);
        self.net.schedule(
            now + QUERY_DEADLINE * self.latency(),
            Work::QueryDeadline(q),
        );
    }

    fn complete(&mut self, q: QueryId, descriptors: Vec<AgentDescriptor>, hops: Option<u32>) {
        let now = self.net.now();
        let top_k = self.scenario.plan.top_k;
        let Some(p) = self.queries.get_mut(q as usize) else {
            return;
        };
        if p.done {
            return;
        }
        p.done = true;
        p.result.completion_time = now;
        p.result.hops = hops;
        p.result.returned = descriptors
            .iter()
            .take(top_k)
            .map(|d| (d.agent, d.skill))
            .collect();
        p.result.success = p.result.returned.iter().any(|(_, s)| *s == p.result.target);
        self.open_queries -= 1;
        if self.all_done() {
            self.net.ledger_mut().close_window(now);
        }
    }

    fn all_done(&self) -> bool {
        self.bootstrap_done.is_some()
            && self.issued == self.query_times.len()
            && self.open_queries == 0
    }

    fn leave(&mut self, i: u32) {
        if !self.net.is_alive(i) {
            return;
        }
        self.net.kill(i);
        self.set_alive(-1);
        self.departures += 1;
        let orphaned: Vec<QueryId> = self
            .queries
            .iter()
            .filter(|p| !p.done && p.result.origin == i)
            .map(|p| p.result.id)
            .collect();
        for q in orphaned {
            self.complete(q, Vec::new(), None);
        }
        let d = self
            .scenario
            .churn
            .downtime(&mut self.churn_rng)
            .expect("valid downtime mean");
        let at = self.net.now() + d;
        self.net.schedule(at, Work::Rejoin(i));
    }

    fn rejoin(&mut self, i: u32, churned: bool) {
        if self.net.is_alive(i) {
            return;
        }
        self.set_alive(1);
        self.begin_join(i);
        if churned {
            let s = self
                .scenario
                .churn
                .session(&mut self.churn_rng)
                .expect("valid session mean");
            let at = self.net.now() + s;
            self.net.schedule(at, Work::Leave(i));
        }
    }

    fn handle(&mut self, w: Work) {
        let now = self.net.now();
        match w {
            Work::Join(i) => {
                self.set_alive(1);
                if i == 0 {
                    self.net.start_alone(0);
                } else {
                    self.begin_join(i);
                }
            }
            Work::JoinCheck { node, inc } => {
                if self.net.incarnation(node) == inc
                    && self.net.is_alive(node)
                    && !self.net.is_joined(node)
                {
                    self.retry_join(node);
                }
            }
            Work::JoinRetry { node, inc } => {
                if self.net.incarnation(node) == inc && self.net.is_alive(node) {
                    self.begin_join(node);
                }
            }
            Work::Leave(i) => self.leave(i),
            Work::Rejoin(i) => self.rejoin(
                i,
                self.scenario.churn.enabled && self.bootstrap_done.is_some(),
            ),
            Work::Publish { node, inc } => {
                if self.net.incarnation(node) == inc && self.net.is_joined(node) {
                    let skill = self.catalog.skill_of(node);
                    let key = self.net.space().hash_label(&skill.label());
                    let d = AgentDescriptor {
                        agent: node,
                        agent_id: self.net.peer(node).id,
                        skill,
                        publish_time: now,
                        ttl: self.scenario.ttl,
                        replica_index: 0,
                    };
                    self.net.put(node, key, d);
                    self.net.schedule(
                        now + self.scenario.republish_period,
                        Work::Publish { node, inc },
                    );
                }
            }
            Work::Query(q) => self.issue(q),
            Work::QueryDeadline(q) => self.complete(q, Vec::new(), None),
            Work::Sweep => {
                for i in 0..self.scenario.nodes as u32 {
                    if let Some(node) = self.net.node_mut(i) {
                        node.store_mut().expire_sweep(now);
                    }
                }
                self.net.schedule(now + SWEEP_PERIOD, Work::Sweep);
            }
            Work::BootstrapDeadline => self.finish_bootstrap(),
        }
    }

    fn on_notice(&mut self, i: u32, n: Notification) {
        match n {
            Notification::Joined => self.on_joined(i),
            Notification::JoinFailed => self.retry_join(i),
            Notification::Get(o) => self.complete(o.query, o.descriptors, o.hops),
        }
    }

    /// Executes the whole run: staggered bootstrap, publication, queries and
    /// churn, until the last query completes.
    pub fn run(mut self) -> RunOutcome {
        let n = self.scenario.nodes;
        let stagger = self.scenario.join_stagger();
        for i in 0..n as u32 {
            self.net.schedule(f64::from(i) * stagger, Work::Join(i));
        }
        self.net.schedule(SWEEP_PERIOD, Work::Sweep);
        let last_join = (n - 1) as f64 * stagger;
        self.net
            .schedule(last_join + BOOTSTRAP_SLACK, Work::BootstrapDeadline);
        let startup = self.scenario.startup();
        if startup.kind == RegimeKind::Immediate {
            self.schedule_queries(0.0, 0.0);
        }
        while !self.all_done() {
            match self.net.poll(Time::INFINITY) {
                Some(Polled::Workload(w)) => self.handle(w),
                Some(Polled::Notice(i, note)) => self.on_notice(i, note),
                None => break,
            }
        }
        let end = self.net.now();
        let bootstrap_done = self.bootstrap_done.unwrap_or(end);
        self.set_alive(0);
        let span = end - bootstrap_done;
        let alive_fraction = if span > 0.0 {
            self.alive_area / (span * n as f64)
        } else {
            self.alive as f64 / n as f64
        };
        RunOutcome {
            results: self.queries.into_iter().map(|p| p.result).collect(),
            mean_routing_entries: self.net.mean_routing_entries(),
            messages_sent: self.net.messages_sent(),
            events: self.net.events_executed(),
            ledger: self.net.ledger().clone(),
            bootstrap_done,
            end_time: end,
            alive_fraction,
            departures: self.departures,
        }
    }
}

/// Builds and runs one world for overlay `O`.
pub fn run_scenario<O: Overlay>(
    scenario: &Scenario,
    params: &OverlayParams,
    seed: u64,
) -> Result<RunOutcome, WorkloadError> {
    Ok(World::<O>::new(scenario.clone(), params.clone(), seed)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pastry::Pastry;

    fn scenario(nodes: usize, regime: RegimeKind, target: u16) -> Scenario {
        Scenario {
            nodes,
            regime,
            plan: QueryPlan {
                target: SkillId(target),
                rate: 0.125,
                horizon: 40.0,
                top_k: 1,
            },
            churn: ChurnModel::disabled(),
            publish_spread: 0.0,
            ttl: 60.0,
            republish_period: 20.0,
            underlay_degree: 6.0,
            loss: 0.0,
            id_bits: 32,
            tick_period: 2.0,
        }
    }

    fn params() -> OverlayParams {
        OverlayParams::default()
    }

    #[test]
    fn catalog_splits_agents_round_robin() {
        let c = Catalog::new(4096);
        assert_eq!(c.providers(SkillId(5)), 82);
        assert_eq!(c.providers(SkillId(45)), 82);
        assert_eq!(c.providers(SkillId(46)), 81);
        assert_eq!(c.providers(SkillId(50)), 0);
        let total: usize = Catalog::skills().map(|s| c.providers(s)).sum();
        assert_eq!(total, 4096);
        let brute = (0..4096u32)
            .filter(|&a| c.skill_of(a) == SkillId(5))
            .count();
        assert_eq!(brute, 82);
    }

    #[test]
    fn query_counts_per_regime() {
        let plan = scenario(4096, RegimeKind::Immediate, 5).plan;
        assert_eq!(plan.issue_times(0.0), vec![8.0, 16.0, 24.0, 32.0, 40.0]);
        let warm = StartupRegime::for_nodes(RegimeKind::Warmed, 4096);
        assert_eq!(warm.admission(), 0.0);
        assert_eq!(plan.issue_times(warm.admission()).len(), 5);
        let churn_plan = QueryPlan {
            rate: 0.1,
            horizon: 60.0,
            ..plan
        };
        let churn = StartupRegime::for_nodes(RegimeKind::WarmupOnly, 4096);
        assert_eq!(
            churn_plan.issue_times(churn.admission()),
            vec![20.0, 30.0, 40.0, 50.0, 60.0]
        );
        assert_eq!(warm.clock_origin(20.5), 32.5);
        assert_eq!(churn.clock_origin(20.5), 20.5);
        let imm = StartupRegime::for_nodes(RegimeKind::Immediate, 4096);
        assert_eq!(imm.clock_origin(20.5), 0.0);
    }

    #[test]
    fn admission_boundary_is_exclusive() {
        let plan = QueryPlan {
            target: SkillId(0),
            rate: 0.125,
            horizon: 40.0,
            top_k: 1,
        };
        assert_eq!(plan.issue_times(8.0), vec![16.0, 24.0, 32.0, 40.0]);
        assert!(plan.issue_times(40.0).is_empty());
    }

    #[test]
    fn regime_names_round_trip() {
        for r in [
            RegimeKind::Immediate,
            RegimeKind::Warmed,
            RegimeKind::WarmupOnly,
        ] {
            assert_eq!(r.name().parse::<RegimeKind>().unwrap(), r);
        }
        assert_eq!(
            "warmup-only".parse::<RegimeKind>().unwrap(),
            RegimeKind::WarmupOnly
        );
        assert!("cold".parse::<RegimeKind>().is_err());
    }

    #[test]
    fn join_stagger_fits_warmup() {
        let s = scenario(4096, RegimeKind::Warmed, 5);
        assert!((s.join_stagger() - 12.0 / 4096.0).abs() < 1e-12);
        assert_eq!(scenario(64, RegimeKind::Warmed, 5).join_stagger(), 0.01);
    }

    #[test]
    fn churn_alive_fraction_near_ten_thirteenths() {
        let churn = ChurnModel {
            enabled: true,
            session_mean: 100.0,
            downtime_mean: 30.0,
        };
        assert!((churn.expected_alive_fraction() - 10.0 / 13.0).abs() < 1e-12);
        let f = churn.simulate_alive_fraction(256, 1e4, 1).unwrap();
        assert!((0.72..=0.82).contains(&f), "{f}");
    }

    #[test]
    fn single_node_answers_locally() {
        let out =
            run_scenario::<Pastry>(&scenario(1, RegimeKind::Immediate, 0), &params(), 3).unwrap();
        assert_eq!(out.bootstrap_done, 0.0);
        assert_eq!(out.results.len(), 5);
        assert!(out.results.iter().all(|r| r.success && r.latency() == 0.0));
    }

    #[test]
    fn missing_target_is_rejected() {
        let err = World::<Pastry>::new(scenario(10, RegimeKind::Warmed, 20), params(), 1);
        assert!(matches!(err, Err(WorkloadError::NoProviders(..))));
        let err = World::<Pastry>::new(scenario(0, RegimeKind::Warmed, 0), params(), 1);
        assert!(matches!(err, Err(WorkloadError::NoNodes)));
    }

    #[test]
    fn stationary_warmed_run_succeeds_without_departures() {
        let s = scenario(128, RegimeKind::Warmed, 5);
        let out = run_scenario::<Pastry>(&s, &params(), 7).unwrap();
        assert_eq!(out.departures, 0);
        assert_eq!(out.alive_fraction, 1.0);
        assert_eq!(out.results.len(), 5);
        let admit = out.bootstrap_done + s.startup().warmup;
        for r in &out.results {
            assert!(r.issue_time > admit);
            assert!(r.success, "{r:?}");
            assert_eq!(r.returned.len(), 1);
        }
    }

    #[test]
    fn churn_run_issues_five_queries_and_departs_nodes() {
        let mut s = scenario(128, RegimeKind::WarmupOnly, 5);
        s.churn = ChurnModel {
            enabled: true,
            session_mean: 100.0,
            downtime_mean: 30.0,
        };
        let out = run_scenario::<Pastry>(&s, &params(), 2).unwrap();
        assert_eq!(out.results.len(), 5);
        assert!(out.departures > 0);
        assert!(out.alive_fraction < 1.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let mut s = scenario(96, RegimeKind::Immediate, 5);
        s.publish_spread = 5.0;
        let a = run_scenario::<Pastry>(&s, &params(), 11).unwrap();
        let b = run_scenario::<Pastry>(&s, &params(), 11).unwrap();
        assert_eq!(a.results, b.results);
        assert_eq!(a.messages_sent, b.messages_sent);
        assert_eq!(a.end_time, b.end_time);
    }
}
