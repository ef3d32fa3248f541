//! Pastry: prefix routing table, leaf set, join by routing toward the new
//! identifier, neighbour probing with leaf-set repair.

use std::collections::BTreeMap;

use crate::id::{IdSpace, NodeId};
use crate::metrics::Tag;
use crate::overlay::{
    GetOutcome, Notification, Overlay, OverlayCtx, OverlayParams, Peer, Protocol, QueryId,
};
use crate::sim::Time;
use crate::store::{AgentDescriptor, DescriptorStore};

#[derive(Clone, Debug, PartialEq)]
pub enum Purpose {
    Get { query: QueryId, limit: usize },
    Put(AgentDescriptor),
    Join,
}

impl Purpose {
    fn tag(&self) -> Tag {
        match self {
            Purpose::Get { query, .. } => Tag::get(Some(*query)),
            Purpose::Put(_) => Tag::PUT,
            Purpose::Join => Tag::JOIN,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Lookup {
    pub rid: u64,
    pub origin: Peer,
    pub key: NodeId,
    pub purpose: Purpose,
    pub hops: u32,
    /// Replica holders already asked after a miss at the root.
    pub probed: Vec<Peer>,
}

#[derive(Clone, Debug)]
pub enum PastryMsg {
    Route {
        lookup: Lookup,
        ack: u64,
    },
    HopAck {
        ack: u64,
    },
    Found {
        rid: u64,
        hops: u32,
        descriptors: Vec<AgentDescriptor>,
    },
    Failed {
        rid: u64,
    },
    Replica {
        key: NodeId,
        d: AgentDescriptor,
    },
    /// Routing state a node on the join route hands to the joiner; the last
    /// node also hands over its leaf set.
    JoinState {
        rid: u64,
        entries: Vec<Peer>,
        leaf: Option<Vec<Peer>>,
    },
    Announce,
    Ping {
        req: u64,
    },
    Pong {
        req: u64,
        leaf: Vec<Peer>,
    },
    LeafFailed {
        dead: Peer,
    },
    LeafRequest,
    LeafSet {
        leaf: Vec<Peer>,
    },
}

#[derive(Clone, Debug)]
pub enum PastryTimer {
    Ack(u64),
    Ping(u64),
    Lookup(u64),
    Join(u64),
}

struct PendingHop {
    lookup: Lookup,
    next: Peer,
}

pub struct Pastry {
    me: Peer,
    space: IdSpace,
    params: OverlayParams,
    digit_bits: u32,
    joined: bool,
    joining: Option<u64>,
    table: Vec<Vec<Option<Peer>>>,
    /// Clockwise half of the leaf set, nearest first.
    larger: Vec<Peer>,
    /// Counter-clockwise half, nearest first.
    smaller: Vec<Peer>,
    store: DescriptorStore,
    next_id: u64,
    pending_hops: BTreeMap<u64, PendingHop>,
    lookups: BTreeMap<u64, Purpose>,
    pings: BTreeMap<u64, Peer>,
    /// Set after a probe timeout: the next tick probes the whole leaf set.
    full_round: bool,
    dead: BTreeMap<NodeId, Time>,
}

impl Pastry {
    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    fn latency(&self) -> Time {
        self.params.latency
    }

    fn half(&self) -> usize {
        self.params.leaf_set / 2
    }

    /// Orders by circular distance to `key`, ties toward the smaller id.
    fn closeness(&self, id: NodeId, key: NodeId) -> (u64, NodeId) {
        (self.space.circular_distance(id, key), id)
    }

    pub fn leaf_set(&self) -> Vec<Peer> {
        let mut v: Vec<Peer> = self
            .smaller
            .iter()
            .chain(self.larger.iter())
            .copied()
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn table(&self) -> &[Vec<Option<Peer>>] {
        &self.table
    }

    fn leaf_full(&self) -> bool {
        self.larger.len() >= self.half() && self.smaller.len() >= self.half()
    }

    fn in_leaf_range(&self, key: NodeId) -> bool {
        if !self.leaf_full() {
            return true;
        }
        let lo = self.smaller.last().expect("full leaf set").id;
        let hi = self.larger.last().expect("full leaf set").id;
        self.space.ring_distance(lo, key) <= self.space.ring_distance(lo, hi)
    }

    /// Splits `pool` into the nearest clockwise and counter-clockwise halves.
    /// A peer counts on the side it is nearer to; a short side is topped up
    /// with the other side's overflow.
    fn rebuild_leaf(&mut self, mut pool: Vec<Peer>) {
        pool.retain(|p| p.idx != self.me.idx);
        pool.sort();
        pool.dedup();
        let (space, me, half) = (self.space, self.me.id, self.half());
        let cw_of = |p: &Peer| space.ring_distance(me, p.id);
        let ccw_of = |p: &Peer| space.ring_distance(p.id, me);
        let (mut cw, mut ccw): (Vec<Peer>, Vec<Peer>) =
            pool.into_iter().partition(|p| cw_of(p) <= ccw_of(p));
        cw.sort_by_key(cw_of);
        ccw.sort_by_key(ccw_of);
        let cw_over = cw.split_off(half.min(cw.len()));
        let ccw_over = ccw.split_off(half.min(ccw.len()));
        // Overflow nearest to the short side comes last in the other's order.
        for p in ccw_over.into_iter().rev() {
            if cw.len() >= half {
                break;
            }
            cw.push(p);
        }
        for p in cw_over.into_iter().rev() {
            if ccw.len() >= half {
                break;
            }
            ccw.push(p);
        }
        cw.sort_by_key(cw_of);
        ccw.sort_by_key(ccw_of);
        self.larger = cw;
        self.smaller = ccw;
    }

    fn add_leaf_candidates(&mut self, peers: &[Peer]) {
        let fresh: Vec<Peer> = peers
            .iter()
            .copied()
            .filter(|p| p.idx != self.me.idx && !self.dead.contains_key(&p.id))
            .collect();
        if fresh.is_empty() {
            return;
        }
        let mut pool = self.leaf_set();
        pool.extend(fresh);
        self.rebuild_leaf(pool);
    }

    fn table_insert(&mut self, p: Peer) {
        if p.idx == self.me.idx || p.id == self.me.id {
            return;
        }
        let row = self
            .space
            .shared_prefix_len(self.me.id, p.id, self.digit_bits);
        let col = self.space.digit(p.id, row, self.digit_bits);
        if self.table[row][col].is_none() {
            self.table[row][col] = Some(p);
        }
    }

    /// Learns about a peer believed alive.
    fn learn(&mut self, peers: &[Peer]) {
        for p in peers {
            if !self.dead.contains_key(&p.id) {
                self.table_insert(*p);
            }
        }
        self.add_leaf_candidates(peers);
    }

    fn heard_from(&mut self, p: Peer) {
        self.dead.remove(&p.id);
        self.learn(&[p]);
    }

    fn purge(&mut self, dead: Peer, now: Time) -> bool {
        self.dead.insert(dead.id, now);
        for row in self.table.iter_mut() {
            for e in row.iter_mut() {
                if *e == Some(dead) {
                    *e = None;
                }
            }
        }
        let was_leaf = self.larger.contains(&dead) || self.smaller.contains(&dead);
        if was_leaf {
            let pool: Vec<Peer> = self.leaf_set().into_iter().filter(|p| *p != dead).collect();
            self.rebuild_leaf(pool);
        }
        was_leaf
    }

    /// Every distinct peer in the routing table or leaf set.
    pub fn known(&self) -> Vec<Peer> {
        let mut v: Vec<Peer> = self
            .table
            .iter()
            .flatten()
            .flatten()
            .copied()
            .chain(self.leaf_set())
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Next hop toward `key`, or `None` when this node is the closest it knows.
    fn next_hop(&self, key: NodeId, exclude: &[Peer]) -> Option<Peer> {
        let usable = |p: &Peer| !exclude.contains(p) && !self.dead.contains_key(&p.id);
        let here = self.closeness(self.me.id, key);
        if self.in_leaf_range(key) {
            let best = self
                .leaf_set()
                .into_iter()
                .filter(|p| usable(p))
                .min_by_key(|p| self.closeness(p.id, key));
            return best.filter(|p| self.closeness(p.id, key) < here);
        }
        let l = self
            .space
            .shared_prefix_len(self.me.id, key, self.digit_bits);
        let col = self.space.digit(key, l, self.digit_bits);
        if let Some(p) = self.table[l][col].filter(|p| usable(p)) {
            return Some(p);
        }
        self.known()
            .into_iter()
            .filter(|p| usable(p))
            .filter(|p| self.space.shared_prefix_len(p.id, key, self.digit_bits) >= l)
            .filter(|p| self.closeness(p.id, key) < here)
            .min_by_key(|p| self.closeness(p.id, key))
    }

    fn fail_lookup(&mut self, ctx: &mut OverlayCtx<'_, Self>, lookup: Lookup) {
        if lookup.origin.idx == self.me.idx {
            self.finish_failed(ctx, lookup.rid);
        } else if !matches!(lookup.purpose, Purpose::Put(_)) {
            let tag = lookup.purpose.tag();
            ctx.send(lookup.origin, PastryMsg::Failed { rid: lookup.rid }, tag);
        }
    }

    fn finish_failed(&mut self, ctx: &mut OverlayCtx<'_, Self>, rid: u64) {
        match self.lookups.remove(&rid) {
            Some(Purpose::Get { query, .. }) => ctx.notify(Notification::Get(GetOutcome {
                query,
                descriptors: Vec::new(),
                hops: None,
            })),
            Some(Purpose::Join) => {
                self.joining = None;
                ctx.notify(Notification::JoinFailed);
            }
            _ => {}
        }
    }

    fn hop_cap(&self) -> u32 {
        2 * (self.space.digit_count(self.digit_bits) + self.params.leaf_set) as u32
    }

    /// One routing step at this node: forward, or resolve here.
    fn step(&mut self, ctx: &mut OverlayCtx<'_, Self>, lookup: Lookup, exclude: &[Peer]) {
        // A joiner is never its own root, even when stale state still lists
        // a previous incarnation under the same id.
        let mut exclude = exclude.to_vec();
        if lookup.purpose == Purpose::Join {
            exclude.push(lookup.origin);
        }
        match self.next_hop(lookup.key, &exclude) {
            Some(next) if lookup.hops < self.hop_cap() => {
                let key = lookup.key;
                let before = self
                    .space
                    .shared_prefix_len(self.me.id, key, self.digit_bits);
                let after = self.space.shared_prefix_len(next.id, key, self.digit_bits);
                let closer = self.closeness(next.id, key) < self.closeness(self.me.id, key);
                debug_assert!(
                    after > before
                        || (after == before && closer)
                        || (self.in_leaf_range(key) && closer),
                    "routing made no progress toward {key}"
                );
                if lookup.purpose == Purpose::Join && lookup.origin.idx != self.me.idx {
                    self.send_join_state(ctx, &lookup, before, false);
                }
                let mut lookup = lookup;
                lookup.hops += 1;
                self.send_hop(ctx, lookup, next);
            }
            Some(_) => self.fail_lookup(ctx, lookup),
            None => self.resolve(ctx, lookup),
        }
    }

    fn send_join_state(
        &mut self,
        ctx: &mut OverlayCtx<'_, Self>,
        lookup: &Lookup,
        upto: usize,
        last: bool,
    ) {
        let rows = (upto + 1).min(self.table.len());
        let mut entries: Vec<Peer> = self.table[..rows]
            .iter()
            .flatten()
            .flatten()
            .copied()
            .collect();
        entries.push(self.me);
        let leaf = last.then(|| self.leaf_set());
        ctx.send(
            lookup.origin,
            PastryMsg::JoinState {
                rid: lookup.rid,
                entries,
                leaf,
            },
            Tag::JOIN,
        );
    }

    fn send_hop(&mut self, ctx: &mut OverlayCtx<'_, Self>, lookup: Lookup, next: Peer) {
        let ack = self.fresh_id();
        let tag = lookup.purpose.tag();
        ctx.send(
            next,
            PastryMsg::Route {
                lookup: lookup.clone(),
                ack,
            },
            tag,
        );
        ctx.set_timer(4.0 * self.latency(), PastryTimer::Ack(ack));
        self.pending_hops.insert(ack, PendingHop { lookup, next });
    }

    /// Live leaf-set members and self ranked by closeness to `key`.
    fn replica_candidates(&self, key: NodeId) -> Vec<Peer> {
        let mut v = self.leaf_set();
        v.retain(|p| !self.dead.contains_key(&p.id));
        v.push(self.me);
        v.sort_by_key(|p| self.closeness(p.id, key));
        v
    }

    fn resolve(&mut self, ctx: &mut OverlayCtx<'_, Self>, mut lookup: Lookup) {
        let tag = lookup.purpose.tag();
        match lookup.purpose.clone() {
            Purpose::Get { query, limit } => {
                let descriptors = self.store.get(lookup.key, ctx.now, limit);
                lookup.probed.push(self.me);
                if descriptors.is_empty() && lookup.probed.len() < self.params.replication {
                    let next = self
                        .replica_candidates(lookup.key)
                        .into_iter()
                        .take(self.params.replication)
                        .find(|p| !lookup.probed.contains(p));
                    if let Some(next) = next {
                        lookup.hops += 1;
                        self.send_hop(ctx, lookup, next);
                        return;
                    }
                }
                if lookup.origin.idx == self.me.idx {
                    self.lookups.remove(&lookup.rid);
                    ctx.notify(Notification::Get(GetOutcome {
                        query,
                        descriptors,
                        hops: Some(lookup.hops),
                    }));
                } else {
                    ctx.send(
                        lookup.origin,
                        PastryMsg::Found {
                            rid: lookup.rid,
                            hops: lookup.hops,
                            descriptors,
                        },
                        tag,
                    );
                }
            }
            Purpose::Put(d) => {
                self.store.put(lookup.key, d.with_replica(0));
                let others: Vec<Peer> = self
                    .replica_candidates(lookup.key)
                    .into_iter()
                    .filter(|p| *p != self.me)
                    .take(self.params.replication.saturating_sub(1))
                    .collect();
                for (i, p) in others.into_iter().enumerate() {
                    let d = d.with_replica(i as u8 + 1);
                    ctx.send(p, PastryMsg::Replica { key: lookup.key, d }, Tag::PUT);
                }
            }
            Purpose::Join => {
                let upto = self
                    .space
                    .shared_prefix_len(self.me.id, lookup.key, self.digit_bits);
                self.send_join_state(ctx, &lookup, upto, true);
                self.learn(&[lookup.origin]);
            }
        }
    }

    fn originate(&mut self, ctx: &mut OverlayCtx<'_, Self>, key: NodeId, purpose: Purpose) {
        let rid = self.fresh_id();
        if let Purpose::Get { .. } = purpose {
            self.lookups.insert(rid, purpose.clone());
            let timeout = 8.0 * self.latency() * f64::from(self.space.bits());
            ctx.set_timer(timeout, PastryTimer::Lookup(rid));
        }
        let lookup = Lookup {
            rid,
            origin: self.me,
            key,
            purpose,
            hops: 0,
            probed: Vec::new(),
        };
        self.step(ctx, lookup, &[]);
    }

    fn probe(&mut self, ctx: &mut OverlayCtx<'_, Self>, p: Peer) {
        if self.pings.values().any(|q| *q == p) {
            return;
        }
        let req = self.fresh_id();
        self.pings.insert(req, p);
        ctx.send(p, PastryMsg::Ping { req }, Tag::MAINTENANCE);
        ctx.set_timer(4.0 * self.latency(), PastryTimer::Ping(req));
    }

    /// Probes leaf members that a neighbour's leaf set should contain but
    /// does not: the neighbour has most likely seen them fail.
    fn cross_check(&mut self, ctx: &mut OverlayCtx<'_, Self>, from: Peer, theirs: &[Peer]) {
        let space = self.space;
        let half = self.half();
        let covers: Box<dyn Fn(NodeId) -> bool> = if theirs.len() < 2 * half {
            Box::new(|_| true)
        } else {
            let cw = |p: &Peer| space.ring_distance(from.id, p.id);
            let ccw = |p: &Peer| space.ring_distance(p.id, from.id);
            let hi = theirs
                .iter()
                .filter(|p| cw(p) <= ccw(p))
                .map(cw)
                .max()
                .unwrap_or(0);
            let lo = theirs
                .iter()
                .filter(|p| cw(p) > ccw(p))
                .map(ccw)
                .max()
                .unwrap_or(0);
            Box::new(move |id| {
                space.ring_distance(from.id, id) <= hi || space.ring_distance(id, from.id) <= lo
            })
        };
        let suspects: Vec<Peer> = self
            .leaf_set()
            .into_iter()
            .filter(|p| *p != from && !theirs.contains(p) && covers(p.id))
            .collect();
        for p in suspects {
            self.probe(ctx, p);
        }
    }

    /// Drops `dead`, tells the other leaf members and asks the farthest live
    /// leaf on the affected side for replacements.
    fn repair(&mut self, ctx: &mut OverlayCtx<'_, Self>, dead: Peer, broadcast: bool) {
        let was_larger = self.larger.contains(&dead);
        if !self.purge(dead, ctx.now) {
            return;
        }
        if broadcast {
            for p in self.leaf_set() {
                ctx.send(p, PastryMsg::LeafFailed { dead }, Tag::MAINTENANCE);
            }
        }
        let side = if was_larger {
            &self.larger
        } else {
            &self.smaller
        };
        if let Some(extreme) = side.last().copied() {
            ctx.send(extreme, PastryMsg::LeafRequest, Tag::MAINTENANCE);
        }
    }
}

impl Overlay for Pastry {
    type Msg = PastryMsg;
    type Timer = PastryTimer;

    const PROTOCOL: Protocol = Protocol::Pastry;

    fn new(me: Peer, space: IdSpace, params: &OverlayParams) -> Self {
        let digit_bits = params.pastry_b;
        space
            .check_digits(digit_bits)
            .expect("digit width validated by configuration");
        let rows = space.digit_count(digit_bits);
        Self {
            me,
            space,
            params: params.clone(),
            digit_bits,
            joined: false,
            joining: None,
            table: vec![vec![None; 1 << digit_bits]; rows],
            larger: Vec::new(),
            smaller: Vec::new(),
            store: DescriptorStore::new(),
            next_id: 0,
            pending_hops: BTreeMap::new(),
            lookups: BTreeMap::new(),
            pings: BTreeMap::new(),
            full_round: false,
            dead: BTreeMap::new(),
        }
    }

    fn me(&self) -> Peer {
        self.me
    }

    fn is_joined(&self) -> bool {
        self.joined
    }

    fn bootstrap_alone(&mut self, ctx: &mut OverlayCtx<'_, Self>) {
        self.joined = true;
        ctx.notify(Notification::Joined);
    }

    fn join(&mut self, ctx: &mut OverlayCtx<'_, Self>, contact: Peer) {
        let rid = self.fresh_id();
        self.joining = Some(rid);
        self.lookups.insert(rid, Purpose::Join);
        ctx.set_timer(64.0 * self.latency(), PastryTimer::Join(rid));
        let lookup = Lookup {
            rid,
            origin: self.me,
            key: self.me.id,
            purpose: Purpose::Join,
            hops: 1,
            probed: Vec::new(),
        };
        self.send_hop(ctx, lookup, contact);
    }

    fn on_message(&mut self, ctx: &mut OverlayCtx<'_, Self>, from: Peer, msg: PastryMsg) {
        if !self.joined {
            match msg {
                PastryMsg::JoinState { rid, entries, leaf } if self.joining == Some(rid) => {
                    self.heard_from(from);
                    self.learn(&entries);
                    if let Some(leaf) = leaf {
                        self.learn(&leaf);
                        self.joining = None;
                        self.lookups.remove(&rid);
                        self.joined = true;
                        for p in self.known() {
                            ctx.send(p, PastryMsg::Announce, Tag::JOIN);
                        }
                        ctx.notify(Notification::Joined);
                    }
                }
                PastryMsg::HopAck { ack } => {
                    self.pending_hops.remove(&ack);
                }
                PastryMsg::Failed { rid } => self.finish_failed(ctx, rid),
                _ => {}
            }
            return;
        }
        let from_joiner = matches!(&msg, PastryMsg::Route { lookup, .. }
            if lookup.purpose == Purpose::Join && lookup.origin == from);
        if !from_joiner {
            self.heard_from(from);
        }
        match msg {
            PastryMsg::Route { lookup, ack } => {
                ctx.send(from, PastryMsg::HopAck { ack }, lookup.purpose.tag());
                if !lookup.probed.is_empty() {
                    self.resolve(ctx, lookup);
                } else {
                    self.step(ctx, lookup, &[]);
                }
            }
            PastryMsg::HopAck { ack } => {
                self.pending_hops.remove(&ack);
            }
            PastryMsg::Found {
                rid,
                hops,
                descriptors,
            } => {
                if let Some(Purpose::Get { query, .. }) = self.lookups.remove(&rid) {
                    ctx.notify(Notification::Get(GetOutcome {
                        query,
                        descriptors,
                        hops: Some(hops),
                    }));
                }
            }
            PastryMsg::Failed { rid } => self.finish_failed(ctx, rid),
            PastryMsg::Replica { key, d } => self.store.put(key, d),
            PastryMsg::JoinState { .. } | PastryMsg::Announce => {}
            PastryMsg::Ping { req } => {
                let leaf = self.leaf_set();
                ctx.send(from, PastryMsg::Pong { req, leaf }, Tag::MAINTENANCE);
            }
            PastryMsg::Pong { req, leaf } => {
                self.pings.remove(&req);
                self.learn(&leaf);
                self.cross_check(ctx, from, &leaf);
            }
            PastryMsg::LeafFailed { dead } => {
                if dead.idx != self.me.idx {
                    // The dead node's other neighbour spreads the news on
                    // its side of the ring.
                    let adjacent =
                        self.larger.first() == Some(&dead) || self.smaller.first() == Some(&dead);
                    self.repair(ctx, dead, adjacent);
                }
            }
            PastryMsg::LeafRequest => {
                let leaf = self.leaf_set();
                ctx.send(from, PastryMsg::LeafSet { leaf }, Tag::MAINTENANCE);
            }
            PastryMsg::LeafSet { leaf } => self.learn(&leaf),
        }
    }

    fn on_timer(&mut self, ctx: &mut OverlayCtx<'_, Self>, timer: PastryTimer) {
        match timer {
            PastryTimer::Ack(ack) => {
                let Some(hop) = self.pending_hops.remove(&ack) else {
                    return;
                };
                let mut lookup = hop.lookup;
                lookup.hops -= 1;
                if !self.joined {
                    self.fail_lookup(ctx, lookup);
                    return;
                }
                self.repair(ctx, hop.next, true);
                self.dead.insert(hop.next.id, ctx.now);
                if !lookup.probed.is_empty() {
                    lookup.probed.pop();
                    self.resolve(ctx, lookup);
                } else {
                    self.step(ctx, lookup, &[hop.next]);
                }
            }
            PastryTimer::Ping(req) => {
                if let Some(p) = self.pings.remove(&req) {
                    self.full_round = true;
                    self.repair(ctx, p, true);
                }
            }
            PastryTimer::Lookup(rid) => self.finish_failed(ctx, rid),
            PastryTimer::Join(rid) => {
                if self.joining == Some(rid) {
                    self.finish_failed(ctx, rid);
                }
            }
        }
    }

    fn maintenance_tick(&mut self, ctx: &mut OverlayCtx<'_, Self>) {
        let horizon = ctx.now - 20.0;
        self.dead.retain(|_, t| *t > horizon);
        let neighbours: Vec<Peer> = if std::mem::take(&mut self.full_round) {
            self.leaf_set()
        } else {
            self.larger
                .first()
                .into_iter()
                .chain(self.smaller.first())
                .copied()
                .collect()
        };
        for p in neighbours {
            self.probe(ctx, p);
        }
    }

    fn get(&mut self, ctx: &mut OverlayCtx<'_, Self>, query: QueryId, key: NodeId, limit: usize) {
        self.originate(ctx, key, Purpose::Get { query, limit });
    }

    fn put(&mut self, ctx: &mut OverlayCtx<'_, Self>, key: NodeId, d: AgentDescriptor) {
        self.originate(ctx, key, Purpose::Put(d));
    }

    fn store(&self) -> &DescriptorStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut DescriptorStore {
        &mut self.store
    }

    fn routing_entries(&self) -> usize {
        self.known().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_network, Network};
    use crate::sim::RngStream;
    use crate::store::SkillId;

    const TICK: Time = 2.0;

    fn net(space: IdSpace, ids: Vec<NodeId>, seed: u64) -> Network<Pastry, ()> {
        build_network::<Pastry>(space, ids, OverlayParams::default(), TICK, seed, 0.5, 40.0)
    }

    fn rank(space: IdSpace, ids: &[NodeId], key: NodeId) -> Vec<NodeId> {
        let mut v = ids.to_vec();
        v.sort_by_key(|id| (space.circular_distance(*id, key), *id));
        v
    }

    fn oracle_leaf(space: IdSpace, ids: &[NodeId], me: NodeId, l: usize) -> Vec<NodeId> {
        let others: Vec<NodeId> = ids.iter().copied().filter(|i| *i != me).collect();
        if others.len() <= l {
            let mut all = others;
            all.sort();
            return all;
        }
        // Walk outward from `me` in both directions, taking the l/2 nearest
        // on each side; a side that runs out lends its quota to the other.
        let cw = |i: &NodeId| space.ring_distance(me, *i);
        let ccw = |i: &NodeId| space.ring_distance(*i, me);
        let mut larger: Vec<NodeId> = others.iter().copied().filter(|i| cw(i) <= ccw(i)).collect();
        let mut smaller: Vec<NodeId> = others.iter().copied().filter(|i| cw(i) > ccw(i)).collect();
        larger.sort_by_key(cw);
        smaller.sort_by_key(ccw);
        let take_l = (l / 2)
            .max(l.saturating_sub(smaller.len()))
            .min(larger.len());
        let take_s = l - take_l;
        let mut out: Vec<NodeId> = larger[..take_l].to_vec();
        if take_s <= smaller.len() {
            out.extend_from_slice(&smaller[..take_s]);
        }
        out.sort();
        out
    }

    fn leaf_ids(n: &Pastry) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = n.leaf_set().iter().map(|p| p.id).collect();
        v.sort();
        v
    }

    fn check_leaves(net: &Network<Pastry, ()>) {
        let live = net.joined();
        let ids: Vec<NodeId> = live.iter().map(|&i| net.peer(i).id).collect();
        for &i in &live {
            let me = net.peer(i).id;
            assert_eq!(
                leaf_ids(net.node(i).unwrap()),
                oracle_leaf(net.space(), &ids, me, 16),
                "leaf set of {me}"
            );
        }
    }

    fn desc(agent: u32, t: Time) -> AgentDescriptor {
        AgentDescriptor {
            agent,
            agent_id: NodeId(u64::from(agent)),
            skill: SkillId(0),
            publish_time: t,
            ttl: 1e9,
            replica_index: 0,
        }
    }

    fn holders(net: &Network<Pastry, ()>, key: NodeId) -> Vec<NodeId> {
        let now = net.now();
        let mut v: Vec<NodeId> = (0..net.len() as u32)
            .filter(|&i| net.node(i).is_some_and(|n| n.store().has_live(key, now)))
            .map(|i| net.peer(i).id)
            .collect();
        v.sort();
        v
    }

    #[test]
    fn singleton_is_empty() {
        let space = IdSpace::new(16).unwrap();
        let n = net(space, vec![NodeId(5)], 1);
        let node = n.node(0).unwrap();
        assert!(node.is_joined());
        assert!(node.leaf_set().is_empty());
        assert_eq!(node.routing_entries(), 0);
    }

    #[test]
    fn pair_knows_each_other() {
        let space = IdSpace::new(16).unwrap();
        let n = net(space, vec![NodeId(5), NodeId(40000)], 2);
        assert_eq!(n.node(0).unwrap().leaf_set(), vec![n.peer(1)]);
        assert_eq!(n.node(1).unwrap().leaf_set(), vec![n.peer(0)]);
    }

    #[test]
    fn leaf_sets_match_oracle_after_joins() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(64).unwrap();
        let n = net(space, ids, 3);
        check_leaves(&n);
    }

    #[test]
    fn table_entries_respect_prefix_rule() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(64).unwrap();
        let n = net(space, ids, 4);
        for i in 0..64u32 {
            let node = n.node(i).unwrap();
            let me = n.peer(i).id;
            for (row, cols) in node.table().iter().enumerate() {
                for (col, e) in cols.iter().enumerate() {
                    if let Some(p) = e {
                        assert_eq!(space.shared_prefix_len(me, p.id, 4), row);
                        assert_eq!(space.digit(p.id, row, 4), col);
                    }
                }
            }
        }
    }

    #[test]
    fn puts_land_on_numerically_closest_nodes() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(64).unwrap();
        let mut n = net(space, ids.clone(), 5);
        let mut rng = RngStream::new(5, "keys");
        for k in 0..1000u32 {
            let key = NodeId(rng.next_u64() & space.mask());
            let origin = rng.below(64) as u32;
            n.put(origin, key, desc(k, n.now()));
            n.run_until(n.now() + 20.0);
            let mut want: Vec<NodeId> = rank(space, &ids, key).into_iter().take(3).collect();
            want.sort();
            assert_eq!(holders(&n, key), want, "key {key}");
            for i in 0..64u32 {
                n.node_mut(i).unwrap().store_mut().clear();
            }
        }
    }

    #[test]
    fn gets_succeed_with_bounded_hops_and_exact_accounting() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(64).unwrap();
        let mut n = net(space, ids, 6);
        let key = space.hash_label("skill_05");
        n.put(9, key, desc(9, n.now()));
        n.run_until(n.now() + 20.0);
        let mut answered = 0;
        for q in 0..64u32 {
            n.get(q, q, key, 1);
            for (_, note) in n.run_until(n.now() + 30.0) {
                if let Notification::Get(out) = note {
                    let hops = out.hops.unwrap();
                    assert!(hops as usize <= 4 + 16);
                    assert_eq!(out.descriptors.len(), 1);
                    let expected = if hops == 0 {
                        0
                    } else {
                        2 * u64::from(hops) + 1
                    };
                    assert_eq!(n.ledger().query_messages(q), expected);
                    answered += 1;
                }
            }
        }
        assert_eq!(answered, 64);
    }

    #[test]
    fn stable_leaf_sets_are_a_fixpoint() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(32).unwrap();
        let mut n = net(space, ids, 7);
        let before: Vec<_> = (0..32u32).map(|i| leaf_ids(n.node(i).unwrap())).collect();
        n.run_until(n.now() + 20.0);
        let after: Vec<_> = (0..32u32).map(|i| leaf_ids(n.node(i).unwrap())).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn dead_leaf_is_replaced() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(64).unwrap();
        let mut n = net(space, ids, 8);
        n.kill(17);
        n.run_until(n.now() + 5.0 * TICK);
        check_leaves(&n);
    }

    #[test]
    fn rejoin_under_a_stale_identity_converges() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(64).unwrap();
        let mut n = net(space, ids, 10);
        n.kill(17);
        n.start_join(17, 3);
        // Failure reports about the old incarnation still spread and mute
        // the id for 20 units before neighbours relearn it.
        n.run_until(n.now() + 30.0 * TICK);
        assert!(n.is_joined(17));
        check_leaves(&n);
    }

    #[test]
    fn smaller_side_refills_after_mass_failure() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(24).unwrap();
        let mut n = net(space, ids.clone(), 9);
        let me = 0u32;
        let smaller: Vec<u32> = {
            let node = n.node(me).unwrap();
            node.smaller.iter().map(|p| p.idx).collect()
        };
        for i in smaller {
            n.kill(i);
        }
        n.run_until(n.now() + 10.0 * TICK);
        check_leaves(&n);
    }
}
