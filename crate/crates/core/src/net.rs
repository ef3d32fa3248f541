//! Drives a population of overlay nodes over the event queue: message
//! delivery, protocol timers, maintenance ticks and message accounting.
//! Workload events are opaque (`W`) and handed back to the caller.

use std::collections::VecDeque;

use crate::id::{IdSpace, NodeId};
use crate::metrics::{MessageLedger, Tag};
use crate::overlay::{Action, Ctx, Notification, Overlay, OverlayParams, Peer, QueryId};
use crate::sim::{EventHandle, EventQueue, NetworkModel, RngStream, Time};
use crate::store::AgentDescriptor;

#[derive(Debug)]
pub enum Event<M, T, W> {
    Deliver {
        from: Peer,
        to: u32,
        inc: u32,
        msg: M,
    },
    Timer {
        node: u32,
        inc: u32,
        timer: T,
    },
    Tick {
        node: u32,
        inc: u32,
    },
    Workload(W),
}

pub type NetEvent<O, W> = Event<<O as Overlay>::Msg, <O as Overlay>::Timer, W>;

/// What [`Network::poll`] hands back to the driver.
#[derive(Debug)]
pub enum Polled<W> {
    Workload(W),
    Notice(u32, Notification),
}

pub struct Network<O: Overlay, W> {
    space: IdSpace,
    params: OverlayParams,
    model: NetworkModel,
    tick_period: Time,
    ids: Vec<NodeId>,
    nodes: Vec<Option<O>>,
    incarnation: Vec<u32>,
    queue: EventQueue<NetEvent<O, W>>,
    ledger: MessageLedger,
    protocol_rng: RngStream,
    loss_rng: RngStream,
    outbox: VecDeque<(u32, Notification)>,
    sent: u64,
    delivered: u64,
}

impl<O: Overlay, W> Network<O, W> {
    pub fn new(
        space: IdSpace,
        ids: Vec<NodeId>,
        params: OverlayParams,
        model: NetworkModel,
        tick_period: Time,
        seed: u64,
    ) -> Self {
        let n = ids.len();
        Self {
            space,
            params,
            model,
            tick_period,
            ids,
            nodes: (0..n).map(|_| None).collect(),
            incarnation: vec![0; n],
            queue: EventQueue::new(),
            ledger: MessageLedger::new(),
            protocol_rng: RngStream::new(seed, "protocol"),
            loss_rng: RngStream::new(seed, "loss"),
            outbox: VecDeque::new(),
            sent: 0,
            delivered: 0,
        }
    }

    pub fn now(&self) -> Time {
        self.queue.now()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn space(&self) -> IdSpace {
        self.space
    }

    pub fn params(&self) -> &OverlayParams {
        &self.params
    }

    pub fn peer(&self, i: u32) -> Peer {
        Peer {
            idx: i,
            id: self.ids[i as usize],
        }
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn node(&self, i: u32) -> Option<&O> {
        self.nodes[i as usize].as_ref()
    }

    pub fn node_mut(&mut self, i: u32) -> Option<&mut O> {
        self.nodes[i as usize].as_mut()
    }

    pub fn is_alive(&self, i: u32) -> bool {
        self.nodes[i as usize].is_some()
    }

    pub fn is_joined(&self, i: u32) -> bool {
        self.node(i).is_some_and(O::is_joined)
    }

    pub fn incarnation(&self, i: u32) -> u32 {
        self.incarnation[i as usize]
    }

    pub fn ledger(&self) -> &MessageLedger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut MessageLedger {
        &mut self.ledger
    }

    pub fn messages_sent(&self) -> u64 {
        self.sent
    }

    pub fn messages_delivered(&self) -> u64 {
        self.delivered
    }

    pub fn events_executed(&self) -> u64 {
        self.queue.executed()
    }

    fn fresh(&mut self, i: u32) {
        self.incarnation[i as usize] += 1;
        let node = O::new(self.peer(i), self.space, &self.params);
        self.nodes[i as usize] = Some(node);
    }

    /// Starts `i` with empty state as the first member of the overlay.
    pub fn start_alone(&mut self, i: u32) {
        self.fresh(i);
        self.with_node(i, |node, ctx| node.bootstrap_alone(ctx));
    }

    /// Starts `i` with empty state and begins joining through `contact`.
    pub fn start_join(&mut self, i: u32, contact: u32) {
        self.fresh(i);
        let contact = self.peer(contact);
        self.with_node(i, |node, ctx| node.join(ctx, contact));
    }

    /// Retries a join for an already started node that is not yet joined.
    pub fn retry_join(&mut self, i: u32, contact: u32) {
        if self.is_alive(i) && !self.is_joined(i) {
            self.start_join(i, contact);
        }
    }

    /// Kills `i`: its state is dropped, its timers and in-flight messages
    /// addressed to it die with it.
    pub fn kill(&mut self, i: u32) {
        self.nodes[i as usize] = None;
        self.incarnation[i as usize] += 1;
    }

    pub fn get(&mut self, i: u32, query: QueryId, key: NodeId, limit: usize) {
        self.with_node(i, |node, ctx| node.get(ctx, query, key, limit));
    }

    pub fn put(&mut self, i: u32, key: NodeId, d: AgentDescriptor) {
        self.with_node(i, |node, ctx| node.put(ctx, key, d));
    }

    pub fn schedule(&mut self, at: Time, w: W) -> EventHandle {
        self.queue.schedule_at(at, Event::Workload(w))
    }

    pub fn cancel(&mut self, handle: EventHandle) {
        self.queue.cancel(handle);
    }

    /// Runs `f` against node `i` with a fresh context and applies the
    /// actions it buffered. Does nothing if `i` is dead.
    pub fn with_node<F>(&mut self, i: u32, f: F)
    where
        F: FnOnce(&mut O, &mut Ctx<'_, O::Msg, O::Timer>),
    {
        let now = self.now();
        let me = self.peer(i);
        let Some(node) = self.nodes[i as usize].as_mut() else {
            return;
        };
        let mut ctx = Ctx::new(now, me, self.space, &mut self.protocol_rng);
        f(node, &mut ctx);
        let actions = ctx.into_actions();
        self.apply(i, actions);
    }

    fn apply(&mut self, i: u32, actions: Vec<Action<O::Msg, O::Timer>>) {
        let now = self.now();
        let from = self.peer(i);
        let inc = self.incarnation[i as usize];
        for action in actions {
            match action {
                Action::Send { to, msg, tag } => self.transmit(now, from, to, msg, tag),
                Action::Timer { delay, timer } => {
                    self.queue.schedule_in(
                        delay,
                        Event::Timer {
                            node: i,
                            inc,
                            timer,
                        },
                    );
                }
                Action::Notify(n) => {
                    if n == Notification::Joined && self.tick_period > 0.0 {
                        let phase = self.protocol_rng.uniform() * self.tick_period;
                        self.queue.schedule_in(phase, Event::Tick { node: i, inc });
                    }
                    self.outbox.push_back((i, n));
                }
            }
        }
    }

    fn transmit(&mut self, now: Time, from: Peer, to: Peer, msg: O::Msg, tag: Tag) {
        self.ledger.record(now, tag);
        self.sent += 1;
        if let Some(delay) = self.model.transit(&mut self.loss_rng) {
            let inc = self.incarnation[to.idx as usize];
            self.queue.schedule_in(
                delay,
                Event::Deliver {
                    from,
                    to: to.idx,
                    inc,
                    msg,
                },
            );
        }
    }

    fn live(&self, i: u32, inc: u32) -> bool {
        self.incarnation[i as usize] == inc && self.nodes[i as usize].is_some()
    }

    /// Executes protocol events up to `end` and returns the next workload
    /// event or notification for the driver; `None` once nothing is left at
    /// or before `end` (the clock then reads `end`).
    pub fn poll(&mut self, end: Time) -> Option<Polled<W>> {
        loop {
            if let Some((i, n)) = self.outbox.pop_front() {
                return Some(Polled::Notice(i, n));
            }
            let Some(ev) = self.queue.pop_until(end) else {
                self.queue.advance_to(end);
                return None;
            };
            match ev.payload {
                Event::Workload(w) => return Some(Polled::Workload(w)),
                Event::Deliver { from, to, inc, msg } => {
                    if self.live(to, inc) {
                        self.delivered += 1;
                        self.with_node(to, |node, ctx| node.on_message(ctx, from, msg));
                    }
                }
                Event::Timer { node, inc, timer } => {
                    if self.live(node, inc) {
                        self.with_node(node, |n, ctx| n.on_timer(ctx, timer));
                    }
                }
                Event::Tick { node, inc } => {
                    if self.live(node, inc) {
                        self.with_node(node, |n, ctx| n.maintenance_tick(ctx));
                        self.queue
                            .schedule_in(self.tick_period, Event::Tick { node, inc });
                    }
                }
            }
        }
    }

    /// Runs to `end`, discarding workload events and returning notices.
    pub fn run_until(&mut self, end: Time) -> Vec<(u32, Notification)> {
        let mut notices = Vec::new();
        while let Some(p) = self.poll(end) {
            if let Polled::Notice(i, n) = p {
                notices.push((i, n));
            }
        }
        notices
    }

    /// Indices of live nodes, joined or not.
    pub fn alive(&self) -> Vec<u32> {
        (0..self.len() as u32)
            .filter(|&i| self.is_alive(i))
            .collect()
    }

    /// Indices of live, joined nodes.
    pub fn joined(&self) -> Vec<u32> {
        (0..self.len() as u32)
            .filter(|&i| self.is_joined(i))
            .collect()
    }

    /// Mean routing-state size over live joined nodes.
    pub fn mean_routing_entries(&self) -> Option<f64> {
        let sizes: Vec<usize> = self
            .nodes
            .iter()
            .flatten()
            .filter(|n| n.is_joined())
            .map(O::routing_entries)
            .collect();
        (!sizes.is_empty()).then(|| sizes.iter().sum::<usize>() as f64 / sizes.len() as f64)
    }
}

/// Test and calibration helper: nodes join one at a time through a random
/// joined contact, each waiting for the previous join to finish plus `gap`,
/// then the network runs `settle` more units of maintenance.
pub fn build_network<O: Overlay>(
    space: IdSpace,
    ids: Vec<NodeId>,
    params: OverlayParams,
    tick_period: Time,
    seed: u64,
    gap: Time,
    settle: Time,
) -> Network<O, ()> {
    assert!(gap > 0.0, "join gap must be positive");
    let join_deadline = 64.0 * params.latency;
    let mut net = Network::new(
        space,
        ids,
        params,
        NetworkModel::default(),
        tick_period,
        seed,
    );
    let mut rng = RngStream::new(seed, "bootstrap");
    if net.is_empty() {
        return net;
    }
    net.start_alone(0);
    for i in 1..net.len() as u32 {
        for _ in 0..5 {
            let joined = net.joined();
            net.start_join(i, joined[rng.below(joined.len())]);
            let deadline = net.now() + join_deadline;
            while !net.is_joined(i) && net.now() < deadline {
                net.run_until(net.now() + gap);
            }
            if net.is_joined(i) {
                break;
            }
        }
        net.run_until(net.now() + gap);
    }
    let end = net.now() + settle;
    net.run_until(end);
    net
}
