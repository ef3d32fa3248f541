//! Chord: successor lists, finger tables, periodic stabilization and
//! recursive lookups with per-hop acknowledgements.

use std::collections::BTreeMap;

use crate::id::{IdSpace, NodeId};
use crate::metrics::Tag;
use crate::overlay::{
    GetOutcome, Notification, Overlay, OverlayCtx, OverlayParams, Peer, Protocol, QueryId,
};
use crate::sim::Time;
use crate::store::{AgentDescriptor, DescriptorStore};

/// Stabilization cadence the tests assume; the driver owns the real tick.
pub const STABILIZE_PERIOD: Time = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub enum Purpose {
    Get { query: QueryId, limit: usize },
    Put(AgentDescriptor),
    Join,
    Finger(usize),
}

impl Purpose {
    fn tag(&self) -> Tag {
        match self {
            Purpose::Get { query, .. } => Tag::get(Some(*query)),
            Purpose::Put(_) => Tag::PUT,
            Purpose::Join => Tag::JOIN,
            Purpose::Finger(_) => Tag::MAINTENANCE,
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
    /// Replica holders already consulted after a miss at the root.
    pub replica_probe: u8,
}

#[derive(Clone, Debug)]
pub enum ChordMsg {
    Route {
        lookup: Lookup,
        deliver: bool,
        ack: u64,
    },
    HopAck {
        ack: u64,
    },
    Found {
        rid: u64,
        hops: u32,
        responsible: Peer,
        descriptors: Vec<AgentDescriptor>,
    },
    Failed {
        rid: u64,
    },
    Replica {
        key: NodeId,
        d: AgentDescriptor,
    },
    JoinAccepted {
        rid: u64,
        predecessor: Option<Peer>,
        successors: Vec<Peer>,
        hints: Vec<Peer>,
    },
    GetPredecessor {
        req: u64,
    },
    Predecessor {
        req: u64,
        predecessor: Option<Peer>,
        successors: Vec<Peer>,
    },
    Notify,
}

#[derive(Clone, Debug)]
pub enum ChordTimer {
    Ack(u64),
    Stabilize(u64),
    Lookup(u64),
    Join(u64),
}

struct PendingHop {
    lookup: Lookup,
    next: Peer,
}

pub struct Chord {
    me: Peer,
    space: IdSpace,
    params: OverlayParams,
    joined: bool,
    joining: Option<u64>,
    predecessor: Option<Peer>,
    pred_seen: Time,
    successors: Vec<Peer>,
    fingers: Vec<Option<Peer>>,
    /// Finger confirmed by a lookup (or by the successor) rather than guessed
    /// from traffic; only confirmed fingers may short-cut delivery.
    confirmed: Vec<bool>,
    next_finger: usize,
    store: DescriptorStore,
    next_id: u64,
    pending_hops: BTreeMap<u64, PendingHop>,
    lookups: BTreeMap<u64, Purpose>,
    stabilizing: Option<(u64, Peer)>,
    /// Peers found dead, with the time of detection; indirect mentions of
    /// them are ignored until they contact us directly.
    dead: BTreeMap<NodeId, Time>,
}

impl Chord {
    pub fn predecessor(&self) -> Option<Peer> {
        self.predecessor
    }

    pub fn successors(&self) -> &[Peer] {
        &self.successors
    }

    pub fn successor(&self) -> Option<Peer> {
        self.successors.first().copied()
    }

    pub fn fingers(&self) -> &[Option<Peer>] {
        &self.fingers
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    fn latency(&self) -> Time {
        self.params.latency
    }

    fn finger_start(&self, i: usize) -> NodeId {
        self.space.add(self.me.id, 1u64 << i)
    }

    fn alone(&self) -> bool {
        self.successors.is_empty()
    }

    fn responsible_for(&self, key: NodeId) -> bool {
        match self.predecessor {
            Some(p) => self.space.in_half_open(key, p.id, self.me.id),
            None => self.alone(),
        }
    }

    /// Learns about a live peer: fills or tightens fingers it fits.
    fn consider(&mut self, p: Peer) {
        if p.idx == self.me.idx || self.dead.contains_key(&p.id) {
            return;
        }
        let d = self.space.ring_distance(self.me.id, p.id);
        if d == 0 {
            return;
        }
        let top = 63 - d.leading_zeros() as usize;
        for i in (0..=top).rev() {
            let start = self.finger_start(i);
            let better = match self.fingers[i] {
                None => true,
                Some(f) => {
                    self.space.ring_distance(start, p.id) < self.space.ring_distance(start, f.id)
                }
            };
            if !better {
                break;
            }
            self.fingers[i] = Some(p);
            self.confirmed[i] = false;
        }
        if self.successors.is_empty() {
            self.successors.push(p);
        }
    }

    /// Direct contact proves liveness.
    fn heard_from(&mut self, p: Peer) {
        self.dead.remove(&p.id);
        self.consider(p);
    }

    fn merge_successors(&mut self, head: Peer, rest: &[Peer]) {
        let mut list = vec![head];
        for &p in rest {
            if p.idx != self.me.idx && !self.dead.contains_key(&p.id) && !list.contains(&p) {
                list.push(p);
            }
        }
        let (space, me) = (self.space, self.me.id);
        list.sort_by_key(|p| space.ring_distance(me, p.id));
        list.truncate(self.params.successor_list);
        self.successors = list;
    }

    fn purge(&mut self, dead: Peer, now: Time) {
        self.dead.insert(dead.id, now);
        self.successors.retain(|p| *p != dead);
        for (f, c) in self.fingers.iter_mut().zip(self.confirmed.iter_mut()) {
            if *f == Some(dead) {
                *f = None;
                *c = false;
            }
        }
        if self.predecessor == Some(dead) {
            self.predecessor = None;
        }
        if self.successors.is_empty() {
            // Fall back to the nearest finger, then the predecessor.
            let (space, me) = (self.space, self.me.id);
            if let Some(f) = self
                .fingers
                .iter()
                .flatten()
                .min_by_key(|f| space.ring_distance(me, f.id))
                .copied()
            {
                self.successors.push(f);
            } else if let Some(p) = self.predecessor {
                self.successors.push(p);
            }
        }
    }

    /// Every distinct peer in routing state.
    pub fn known(&self) -> Vec<Peer> {
        let mut v: Vec<Peer> = self
            .successors
            .iter()
            .copied()
            .chain(self.fingers.iter().flatten().copied())
            .chain(self.predecessor)
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Next hop for `key` and whether it is the key's successor. Join
    /// lookups (`to_predecessor`) only ever move to the closest preceding
    /// node, so they end at the joiner's predecessor.
    fn next_hop(
        &self,
        key: NodeId,
        exclude: &[Peer],
        to_predecessor: bool,
    ) -> Option<(Peer, bool)> {
        let space = self.space;
        let me = self.me.id;
        let usable = |p: &Peer| !exclude.contains(p) && !self.dead.contains_key(&p.id);
        let mut prev = me;
        let successors = if to_predecessor {
            &[][..]
        } else {
            &self.successors[..]
        };
        for s in successors {
            if usable(s) && space.in_half_open(key, prev, s.id) {
                return Some((*s, true));
            }
            if usable(s) {
                prev = s.id;
            }
        }
        for (i, f) in self.fingers.iter().enumerate() {
            if let (Some(f), true) = (f, self.confirmed[i] && !to_predecessor) {
                let start = self.finger_start(i);
                if usable(f)
                    && space.ring_distance(start, key) <= space.ring_distance(start, f.id)
                    && space.ring_distance(me, start) <= space.ring_distance(me, key)
                {
                    return Some((*f, true));
                }
            }
        }
        let to_key = space.ring_distance(me, key);
        self.successors
            .iter()
            .chain(self.fingers.iter().flatten())
            .filter(|p| usable(p))
            .filter(|p| {
                let d = space.ring_distance(me, p.id);
                d > 0 && d < to_key
            })
            .max_by_key(|p| space.ring_distance(me, p.id))
            .map(|p| (*p, false))
    }

    fn fail_lookup(&mut self, ctx: &mut OverlayCtx<'_, Self>, lookup: Lookup) {
        if lookup.origin.idx == self.me.idx {
            self.finish_failed(ctx, lookup.rid);
        } else if !matches!(lookup.purpose, Purpose::Put(_)) {
            let tag = lookup.purpose.tag();
            ctx.send(lookup.origin, ChordMsg::Failed { rid: lookup.rid }, tag);
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

    /// Forwards `lookup` (one more hop) or fails it when no candidate is left.
    fn forward(&mut self, ctx: &mut OverlayCtx<'_, Self>, mut lookup: Lookup, exclude: &[Peer]) {
        if lookup.hops as usize > 2 * self.space.bits() as usize {
            self.fail_lookup(ctx, lookup);
            return;
        }
        let join = lookup.purpose == Purpose::Join;
        let Some((next, deliver)) = self.next_hop(lookup.key, exclude, join) else {
            self.fail_lookup(ctx, lookup);
            return;
        };
        lookup.hops += 1;
        self.send_hop(ctx, lookup, next, deliver);
    }

    fn send_hop(
        &mut self,
        ctx: &mut OverlayCtx<'_, Self>,
        lookup: Lookup,
        next: Peer,
        deliver: bool,
    ) {
        let ack = self.fresh_id();
        let tag = lookup.purpose.tag();
        ctx.send(
            next,
            ChordMsg::Route {
                lookup: lookup.clone(),
                deliver,
                ack,
            },
            tag,
        );
        ctx.set_timer(4.0 * self.latency(), ChordTimer::Ack(ack));
        self.pending_hops.insert(ack, PendingHop { lookup, next });
    }

    fn on_route(
        &mut self,
        ctx: &mut OverlayCtx<'_, Self>,
        from: Peer,
        lookup: Lookup,
        deliver: bool,
    ) {
        let key = lookup.key;
        if lookup.purpose == Purpose::Join {
            self.route_join(ctx, lookup);
            return;
        }
        if lookup.replica_probe > 0 || (deliver && self.predecessor.is_none()) {
            self.resolve(ctx, lookup);
            return;
        }
        if self.responsible_for(key) {
            self.resolve(ctx, lookup);
            return;
        }
        if deliver {
            if let Some(p) = self.predecessor {
                if p != from && self.space.in_half_open(key, from.id, p.id) {
                    let mut lookup = lookup;
                    lookup.hops += 1;
                    self.send_hop(ctx, lookup, p, true);
                    return;
                }
            }
        }
        self.forward(ctx, lookup, &[]);
    }

    /// Joins are accepted by the joiner's predecessor: the node whose
    /// successor interval holds the joiner's id splices it in directly.
    fn route_join(&mut self, ctx: &mut OverlayCtx<'_, Self>, lookup: Lookup) {
        let key = lookup.key;
        let here = match self.successor() {
            None => true,
            Some(s) => self.space.in_half_open(key, self.me.id, s.id),
        };
        if here {
            self.accept_join(ctx, lookup);
        } else {
            self.forward(ctx, lookup, &[]);
        }
    }

    fn accept_join(&mut self, ctx: &mut OverlayCtx<'_, Self>, lookup: Lookup) {
        let joiner = lookup.origin;
        let mut successors: Vec<Peer> = self
            .successors
            .iter()
            .copied()
            .filter(|p| *p != joiner)
            .collect();
        if successors.is_empty() {
            successors.push(self.me);
        }
        let rest = successors.clone();
        self.merge_successors(joiner, &rest);
        if self.predecessor.is_none() {
            self.predecessor = Some(joiner);
            self.pred_seen = ctx.now;
        }
        let mut hints: Vec<Peer> = self.fingers.iter().flatten().copied().collect();
        hints.dedup();
        ctx.send(
            joiner,
            ChordMsg::JoinAccepted {
                rid: lookup.rid,
                predecessor: Some(self.me),
                successors,
                hints,
            },
            Tag::JOIN,
        );
    }

    /// This node is (or stands in for) the key's successor.
    fn resolve(&mut self, ctx: &mut OverlayCtx<'_, Self>, lookup: Lookup) {
        let tag = lookup.purpose.tag();
        match lookup.purpose.clone() {
            Purpose::Get { query, limit } => {
                let descriptors = self.store.get(lookup.key, ctx.now, limit);
                let probes_left = (lookup.replica_probe as usize + 1) < self.params.replication;
                if descriptors.is_empty() && probes_left {
                    if let Some(s) = self.successor() {
                        let mut next = lookup.clone();
                        next.hops += 1;
                        next.replica_probe += 1;
                        self.send_hop(ctx, next, s, true);
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
                        ChordMsg::Found {
                            rid: lookup.rid,
                            hops: lookup.hops,
                            responsible: self.me,
                            descriptors,
                        },
                        tag,
                    );
                }
            }
            Purpose::Put(d) => {
                self.store.put(lookup.key, d.with_replica(0));
                let replicas: Vec<Peer> = self
                    .successors
                    .iter()
                    .take(self.params.replication.saturating_sub(1))
                    .copied()
                    .collect();
                for (i, s) in replicas.into_iter().enumerate() {
                    let d = d.with_replica(i as u8 + 1);
                    ctx.send(s, ChordMsg::Replica { key: lookup.key, d }, Tag::PUT);
                }
            }
            Purpose::Join => self.accept_join(ctx, lookup),
            Purpose::Finger(_) => {
                if lookup.origin.idx == self.me.idx {
                    self.lookups.remove(&lookup.rid);
                } else {
                    ctx.send(
                        lookup.origin,
                        ChordMsg::Found {
                            rid: lookup.rid,
                            hops: lookup.hops,
                            responsible: self.me,
                            descriptors: Vec::new(),
                        },
                        tag,
                    );
                }
            }
        }
    }

    fn originate(&mut self, ctx: &mut OverlayCtx<'_, Self>, key: NodeId, purpose: Purpose) {
        let rid = self.fresh_id();
        let lookup = Lookup {
            rid,
            origin: self.me,
            key,
            purpose: purpose.clone(),
            hops: 0,
            replica_probe: 0,
        };
        if !matches!(purpose, Purpose::Put(_)) {
            self.lookups.insert(rid, purpose.clone());
            let timeout = match purpose {
                Purpose::Join => 64.0 * self.latency(),
                _ => 8.0 * self.latency() * f64::from(self.space.bits()),
            };
            let timer = match purpose {
                Purpose::Join => ChordTimer::Join(rid),
                _ => ChordTimer::Lookup(rid),
            };
            ctx.set_timer(timeout, timer);
        }
        if self.joined && self.responsible_for(key) {
            self.resolve(ctx, lookup);
        } else {
            self.forward(ctx, lookup, &[]);
        }
    }

    fn stabilize(&mut self, ctx: &mut OverlayCtx<'_, Self>) {
        if self.alone() {
            if let Some(p) = self.predecessor {
                self.successors.push(p);
            } else {
                return;
            }
        }
        if self.stabilizing.is_some() {
            return;
        }
        let s = self.successors[0];
        let req = self.fresh_id();
        self.stabilizing = Some((req, s));
        ctx.send(s, ChordMsg::GetPredecessor { req }, Tag::MAINTENANCE);
        ctx.set_timer(4.0 * self.latency(), ChordTimer::Stabilize(req));
    }

    fn fix_fingers(&mut self, ctx: &mut OverlayCtx<'_, Self>) {
        let Some(s) = self.successor() else {
            return;
        };
        let m = self.fingers.len();
        let gap = self.space.ring_distance(self.me.id, s.id);
        for i in 0..m {
            let start = self.finger_start(i);
            if self.space.ring_distance(self.me.id, start) <= gap {
                self.fingers[i] = Some(s);
                self.confirmed[i] = true;
            }
        }
        for _ in 0..m {
            let i = self.next_finger;
            self.next_finger = (self.next_finger + 1) % m;
            let start = self.finger_start(i);
            if self.space.ring_distance(self.me.id, start) > gap {
                self.originate(ctx, start, Purpose::Finger(i));
                return;
            }
        }
    }
}

impl Overlay for Chord {
    type Msg = ChordMsg;
    type Timer = ChordTimer;

    const PROTOCOL: Protocol = Protocol::Chord;

    fn new(me: Peer, space: IdSpace, params: &OverlayParams) -> Self {
        Self {
            me,
            space,
            params: params.clone(),
            joined: false,
            joining: None,
            predecessor: None,
            pred_seen: 0.0,
            successors: Vec::new(),
            fingers: vec![None; space.bits() as usize],
            confirmed: vec![false; space.bits() as usize],
            next_finger: 0,
            store: DescriptorStore::new(),
            next_id: 0,
            pending_hops: BTreeMap::new(),
            lookups: BTreeMap::new(),
            stabilizing: None,
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
        ctx.set_timer(64.0 * self.latency(), ChordTimer::Join(rid));
        let lookup = Lookup {
            rid,
            origin: self.me,
            key: self.me.id,
            purpose: Purpose::Join,
            hops: 1,
            replica_probe: 0,
        };
        self.send_hop(ctx, lookup, contact, false);
    }

    fn on_message(&mut self, ctx: &mut OverlayCtx<'_, Self>, from: Peer, msg: ChordMsg) {
        let from_joiner = matches!(&msg, ChordMsg::Route { lookup, .. }
            if lookup.purpose == Purpose::Join && lookup.origin == from);
        if !self.joined {
            match msg {
                ChordMsg::JoinAccepted {
                    rid,
                    predecessor,
                    successors,
                    hints,
                } if self.joining == Some(rid) => {
                    self.joining = None;
                    self.lookups.remove(&rid);
                    self.joined = true;
                    self.heard_from(from);
                    if let Some((&head, rest)) = successors.split_first() {
                        self.merge_successors(head, rest);
                    }
                    self.predecessor = predecessor;
                    self.pred_seen = ctx.now;
                    for h in hints.into_iter().chain(predecessor) {
                        self.consider(h);
                    }
                    if let Some(s) = self.successor() {
                        ctx.send(s, ChordMsg::Notify, Tag::JOIN);
                    }
                    ctx.notify(Notification::Joined);
                }
                ChordMsg::HopAck { ack } => {
                    self.pending_hops.remove(&ack);
                }
                ChordMsg::Failed { rid } => self.finish_failed(ctx, rid),
                _ => {}
            }
            return;
        }
        if !from_joiner {
            self.heard_from(from);
        }
        match msg {
            ChordMsg::Route {
                lookup,
                deliver,
                ack,
            } => {
                ctx.send(from, ChordMsg::HopAck { ack }, lookup.purpose.tag());
                if !matches!(lookup.purpose, Purpose::Join) {
                    self.consider(lookup.origin);
                }
                self.on_route(ctx, from, lookup, deliver);
            }
            ChordMsg::HopAck { ack } => {
                self.pending_hops.remove(&ack);
            }
            ChordMsg::Found {
                rid,
                hops,
                responsible,
                descriptors,
            } => {
                self.consider(responsible);
                match self.lookups.remove(&rid) {
                    Some(Purpose::Get { query, .. }) => ctx.notify(Notification::Get(GetOutcome {
                        query,
                        descriptors,
                        hops: Some(hops),
                    })),
                    Some(Purpose::Finger(i)) if responsible != self.me => {
                        self.fingers[i] = Some(responsible);
                        self.confirmed[i] = true;
                    }
                    _ => {}
                }
            }
            ChordMsg::Failed { rid } => self.finish_failed(ctx, rid),
            ChordMsg::Replica { key, d } => self.store.put(key, d),
            ChordMsg::JoinAccepted { .. } => {}
            ChordMsg::GetPredecessor { req } => {
                ctx.send(
                    from,
                    ChordMsg::Predecessor {
                        req,
                        predecessor: self.predecessor,
                        successors: self.successors.clone(),
                    },
                    Tag::MAINTENANCE,
                );
            }
            ChordMsg::Predecessor {
                req,
                predecessor,
                successors,
            } => {
                let Some((want, s)) = self.stabilizing else {
                    return;
                };
                if want != req {
                    return;
                }
                self.stabilizing = None;
                let mut head = s;
                let mut rest = successors;
                rest.extend(self.successors.iter().copied().filter(|p| *p != s));
                if let Some(p) = predecessor {
                    if p.idx != self.me.idx
                        && !self.dead.contains_key(&p.id)
                        && self.space.in_open(p.id, self.me.id, s.id)
                    {
                        head = p;
                        rest.insert(0, s);
                    }
                }
                self.merge_successors(head, &rest);
                for p in rest.into_iter().chain(predecessor) {
                    self.consider(p);
                }
                let next = self.successors[0];
                ctx.send(next, ChordMsg::Notify, Tag::MAINTENANCE);
            }
            ChordMsg::Notify => {
                let stale = ctx.now - self.pred_seen > 3.0 * STABILIZE_PERIOD;
                let accept = match self.predecessor {
                    None => true,
                    Some(p) if p == from => true,
                    Some(p) => stale || self.space.in_open(from.id, p.id, self.me.id),
                };
                if accept {
                    self.predecessor = Some(from);
                    self.pred_seen = ctx.now;
                }
                if self.alone() {
                    self.successors.push(from);
                }
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut OverlayCtx<'_, Self>, timer: ChordTimer) {
        match timer {
            ChordTimer::Ack(ack) => {
                let Some(hop) = self.pending_hops.remove(&ack) else {
                    return;
                };
                self.purge(hop.next, ctx.now);
                let mut lookup = hop.lookup;
                lookup.hops -= 1;
                if !self.joined {
                    self.fail_lookup(ctx, lookup);
                } else if lookup.replica_probe > 0 {
                    self.resolve(ctx, lookup);
                } else {
                    self.forward(ctx, lookup, &[hop.next]);
                }
            }
            ChordTimer::Stabilize(req) => {
                if let Some((want, s)) = self.stabilizing {
                    if want == req {
                        self.stabilizing = None;
                        self.purge(s, ctx.now);
                    }
                }
            }
            ChordTimer::Lookup(rid) => self.finish_failed(ctx, rid),
            ChordTimer::Join(rid) => {
                if self.joining == Some(rid) {
                    self.finish_failed(ctx, rid);
                }
            }
        }
    }

    fn maintenance_tick(&mut self, ctx: &mut OverlayCtx<'_, Self>) {
        let horizon = ctx.now - 10.0 * STABILIZE_PERIOD;
        self.dead.retain(|_, t| *t > horizon);
        self.stabilize(ctx);
        self.fix_fingers(ctx);
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

    fn params() -> OverlayParams {
        OverlayParams::default()
    }

    fn ring(space: IdSpace, ids: Vec<NodeId>, seed: u64) -> Network<Chord, ()> {
        build_network::<Chord>(space, ids, params(), STABILIZE_PERIOD, seed, 0.5, 80.0)
    }

    /// First live id clockwise from `key`, inclusive.
    fn oracle_successor(space: IdSpace, alive: &[NodeId], key: NodeId) -> NodeId {
        *alive
            .iter()
            .min_by_key(|id| space.ring_distance(key, **id))
            .unwrap()
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

    fn holders(net: &Network<Chord, ()>, key: NodeId) -> Vec<NodeId> {
        let now = net.now();
        let mut v: Vec<NodeId> = (0..net.len() as u32)
            .filter(|&i| net.node(i).is_some_and(|n| n.store().has_live(key, now)))
            .map(|i| net.peer(i).id)
            .collect();
        v.sort();
        v
    }

    fn check_ring(net: &Network<Chord, ()>) {
        let space = net.space();
        let alive: Vec<u32> = net.joined();
        let ids: Vec<NodeId> = alive.iter().map(|&i| net.peer(i).id).collect();
        for &i in &alive {
            let me = net.peer(i).id;
            let node = net.node(i).unwrap();
            let succ = oracle_successor(space, &ids, space.add(me, 1));
            assert_eq!(
                node.successor().map(|p| p.id),
                Some(succ),
                "successor of {me}"
            );
            let pred = *ids
                .iter()
                .min_by_key(|id| space.ring_distance(**id, space.add(me, space.mask())))
                .unwrap();
            assert_eq!(
                node.predecessor().map(|p| p.id),
                Some(pred),
                "predecessor of {me}"
            );
        }
    }

    #[test]
    fn singleton_ring() {
        let space = IdSpace::new(16).unwrap();
        let net = ring(space, vec![NodeId(7)], 1);
        let n = net.node(0).unwrap();
        assert!(n.is_joined());
        assert_eq!(n.successor(), None);
        assert_eq!(n.predecessor(), None);
    }

    #[test]
    fn two_node_ring() {
        let space = IdSpace::new(16).unwrap();
        let net = ring(space, vec![NodeId(100), NodeId(9000)], 2);
        let a = net.node(0).unwrap();
        let b = net.node(1).unwrap();
        assert_eq!(a.successor(), Some(net.peer(1)));
        assert_eq!(a.predecessor(), Some(net.peer(1)));
        assert_eq!(b.successor(), Some(net.peer(0)));
        assert_eq!(b.predecessor(), Some(net.peer(0)));
    }

    #[test]
    fn sixty_four_joins_form_sorted_ring() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(64).unwrap();
        let net = ring(space, ids, 3);
        check_ring(&net);
    }

    #[test]
    fn full_ring_lookups_match_successor_oracle() {
        let space = IdSpace::new(6).unwrap();
        let ids: Vec<NodeId> = (0..64).map(NodeId).collect();
        let mut net = ring(space, ids.clone(), 4);
        let mut rng = RngStream::new(4, "keys");
        for k in 0..1000u32 {
            let key = NodeId(rng.next_u64() & space.mask());
            let origin = rng.below(64) as u32;
            net.put(origin, key, desc(k, net.now()));
            net.run_until(net.now() + 20.0);
            let owner = oracle_successor(space, &ids, key);
            let mut want: Vec<NodeId> = (0..3).map(|j| space.add(owner, j)).collect();
            want.sort();
            assert_eq!(holders(&net, key), want, "key {key}");
            for i in 0..64u32 {
                net.node_mut(i).unwrap().store_mut().clear();
            }
        }
    }

    #[test]
    fn lookups_return_stored_descriptor_within_hop_bound() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(64).unwrap();
        let mut net = ring(space, ids, 5);
        let key = space.hash_label("skill_05");
        net.put(3, key, desc(3, net.now()));
        net.run_until(net.now() + 20.0);
        let mut answered = 0;
        for q in 0..64u32 {
            let before = net.ledger().query_messages(q);
            assert_eq!(before, 0);
            net.get(q, q, key, 1);
            for (_, n) in net.run_until(net.now() + 30.0) {
                if let Notification::Get(out) = n {
                    let hops = out.hops.expect("stable lookup answered");
                    assert!(hops <= 16);
                    assert_eq!(out.descriptors.len(), 1);
                    let msgs = net.ledger().query_messages(q);
                    let expected = if hops == 0 {
                        0
                    } else {
                        2 * u64::from(hops) + 1
                    };
                    assert_eq!(msgs, expected, "query {q}");
                    answered += 1;
                }
            }
        }
        assert_eq!(answered, 64);
    }

    #[test]
    fn replica_survives_root_death() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(32).unwrap();
        let mut net = ring(space, ids.clone(), 6);
        let key = NodeId(12345);
        net.put(0, key, desc(0, net.now()));
        net.run_until(net.now() + 20.0);
        let owner = oracle_successor(space, &ids, key);
        let owner_idx = ids.iter().position(|i| *i == owner).unwrap() as u32;
        net.kill(owner_idx);
        let origin = (owner_idx + 5) % 32;
        net.get(origin, 0, key, 1);
        let got: Vec<_> = net
            .run_until(net.now() + 200.0)
            .into_iter()
            .filter_map(|(_, n)| match n {
                Notification::Get(o) => Some(o),
                _ => None,
            })
            .collect();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].descriptors.len(), 1);
    }

    #[test]
    fn reconverges_after_simultaneous_departures() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(64).unwrap();
        let mut net = ring(space, ids, 7);
        for i in [3u32, 4, 5, 20, 33, 34, 50, 61] {
            net.kill(i);
        }
        net.run_until(net.now() + 10.0 * STABILIZE_PERIOD);
        check_ring(&net);
    }

    #[test]
    fn stable_ring_is_a_fixpoint() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(16).unwrap();
        let mut net = ring(space, ids, 8);
        let snapshot: Vec<_> = (0..16u32)
            .map(|i| {
                let n = net.node(i).unwrap();
                (n.predecessor(), n.successors().to_vec())
            })
            .collect();
        let before = net.messages_sent();
        net.run_until(net.now() + 20.0);
        let per_tick = (net.messages_sent() - before) as f64 / 10.0;
        for i in 0..16u32 {
            let n = net.node(i).unwrap();
            assert_eq!(
                (n.predecessor(), n.successors().to_vec()),
                snapshot[i as usize]
            );
        }
        assert!(per_tick > 0.0 && per_tick < 16.0 * 8.0);
        check_ring(&net);
    }
}
