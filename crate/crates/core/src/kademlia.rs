//! Kademlia: k-buckets in least-recently-seen order, round-based iterative
//! lookups with α parallel probes, FIND_VALUE short-circuit and r-wide store.

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
    Get {
        query: QueryId,
        limit: usize,
    },
    Put(AgentDescriptor),
    Join,
    JoinRefresh,
    Refresh,
    /// Plain FIND_NODE whose result is kept for inspection.
    Probe,
}

impl Purpose {
    fn tag(&self) -> Tag {
        match self {
            Purpose::Get { query, .. } => Tag::get(Some(*query)),
            Purpose::Put(_) => Tag::PUT,
            Purpose::Join | Purpose::JoinRefresh => Tag::JOIN,
            Purpose::Refresh | Purpose::Probe => Tag::MAINTENANCE,
        }
    }
}

#[derive(Clone, Debug)]
pub enum KadMsg {
    FindNode {
        rpc: u64,
        key: NodeId,
        tag: Tag,
    },
    FindValue {
        rpc: u64,
        key: NodeId,
        limit: usize,
        tag: Tag,
    },
    Nodes {
        rpc: u64,
        nodes: Vec<Peer>,
    },
    Value {
        rpc: u64,
        descriptors: Vec<AgentDescriptor>,
    },
    Store {
        key: NodeId,
        d: AgentDescriptor,
    },
    Ping {
        rpc: u64,
    },
    Pong {
        rpc: u64,
    },
}

#[derive(Clone, Debug)]
pub enum KadTimer {
    Rpc(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CandState {
    Unqueried,
    InFlight,
    Responded,
    Failed,
}

struct LookupState {
    key: NodeId,
    purpose: Purpose,
    /// Candidates keyed by XOR distance to `key` (unique per identifier).
    shortlist: BTreeMap<u64, (Peer, CandState)>,
    rounds: u32,
    in_flight: usize,
    best_at_round_start: u64,
    final_round: bool,
}

enum Rpc {
    Lookup { lookup: u64, peer: Peer },
    Evict { bucket: usize, peer: Peer },
}

pub struct Kademlia {
    me: Peer,
    space: IdSpace,
    params: OverlayParams,
    joined: bool,
    buckets: Vec<Vec<Peer>>,
    /// Newcomer waiting on the eviction ping of its bucket's stalest entry.
    evicting: Vec<Option<Peer>>,
    last_lookup: Vec<Time>,
    next_refresh: usize,
    store: DescriptorStore,
    next_id: u64,
    lookups: BTreeMap<u64, LookupState>,
    rpcs: BTreeMap<u64, Rpc>,
    probe_results: Vec<(NodeId, Vec<Peer>)>,
}

impl Kademlia {
    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    fn timeout(&self) -> Time {
        4.0 * self.params.latency
    }

    pub fn buckets(&self) -> &[Vec<Peer>] {
        &self.buckets
    }

    /// Results of finished [`Kademlia::find_node`] probes, oldest first.
    pub fn take_probe_results(&mut self) -> Vec<(NodeId, Vec<Peer>)> {
        std::mem::take(&mut self.probe_results)
    }

    fn bucket_of(&self, id: NodeId) -> Option<usize> {
        self.space.bucket_index(self.me.id, id)
    }

    /// Canonical bucket update on contact with `p`.
    fn observe(&mut self, ctx: &mut OverlayCtx<'_, Self>, p: Peer) {
        let Some(b) = self.bucket_of(p.id) else {
            return;
        };
        let bucket = &mut self.buckets[b];
        if let Some(pos) = bucket.iter().position(|q| q.id == p.id) {
            let q = bucket.remove(pos);
            bucket.push(Peer { idx: p.idx, ..q });
            return;
        }
        if bucket.len() < self.params.k {
            bucket.push(p);
            return;
        }
        if self.evicting[b].is_some() {
            return;
        }
        let stalest = bucket[0];
        self.evicting[b] = Some(p);
        let rpc = self.fresh_id();
        self.rpcs.insert(
            rpc,
            Rpc::Evict {
                bucket: b,
                peer: stalest,
            },
        );
        ctx.send(stalest, KadMsg::Ping { rpc }, Tag::MAINTENANCE);
        ctx.set_timer(self.timeout(), KadTimer::Rpc(rpc));
    }

    fn evict(&mut self, p: Peer) {
        if let Some(b) = self.bucket_of(p.id) {
            self.buckets[b].retain(|q| q.id != p.id);
        }
    }

    /// The `k` closest peers to `key` in the routing table.
    /// The `n` known peers closest to `key`. Buckets are visited in XOR
    /// order: the key's own bucket, then all nearer buckets together, then
    /// the farther ones one by one.
    fn closest(&self, key: NodeId, n: usize, exclude: Option<Peer>) -> Vec<Peer> {
        let space = self.space;
        let mut out = Vec::with_capacity(n);
        let take = |group: &mut Vec<Peer>, out: &mut Vec<Peer>| {
            group.retain(|p| Some(*p) != exclude);
            group.sort_unstable_by_key(|p| space.xor_distance(p.id, key));
            let room = n - out.len();
            out.extend(group.iter().take(room).copied());
        };
        let start = match self.bucket_of(key) {
            Some(j) => {
                let mut own = self.buckets[j].clone();
                take(&mut own, &mut out);
                if out.len() < n {
                    let mut nearer: Vec<Peer> =
                        self.buckets[..j].iter().flatten().copied().collect();
                    take(&mut nearer, &mut out);
                }
                j + 1
            }
            None => 0,
        };
        for bucket in &self.buckets[start..] {
            if out.len() >= n {
                break;
            }
            let mut group = bucket.clone();
            take(&mut group, &mut out);
        }
        out
    }

    fn touch_bucket(&mut self, key: NodeId, now: Time) {
        if let Some(b) = self.bucket_of(key) {
            self.last_lookup[b] = now;
        }
    }

    pub fn find_node(&mut self, ctx: &mut OverlayCtx<'_, Self>, key: NodeId) {
        self.start_lookup(ctx, key, Purpose::Probe);
    }

    fn start_lookup(&mut self, ctx: &mut OverlayCtx<'_, Self>, key: NodeId, purpose: Purpose) {
        self.touch_bucket(key, ctx.now);
        let space = self.space;
        let shortlist: BTreeMap<u64, (Peer, CandState)> = self
            .closest(key, self.params.k, None)
            .into_iter()
            .map(|p| (space.xor_distance(p.id, key), (p, CandState::Unqueried)))
            .collect();
        let id = self.fresh_id();
        let state = LookupState {
            key,
            purpose,
            shortlist,
            rounds: 0,
            in_flight: 0,
            best_at_round_start: u64::MAX,
            final_round: false,
        };
        self.lookups.insert(id, state);
        self.next_round(ctx, id);
    }

    /// Starts the next round of `id`, or finishes the lookup.
    fn next_round(&mut self, ctx: &mut OverlayCtx<'_, Self>, id: u64) {
        let k = self.params.k;
        let alpha = self.params.alpha;
        let Some(l) = self.lookups.get_mut(&id) else {
            return;
        };
        let best = l
            .shortlist
            .iter()
            .find(|(_, (_, s))| *s != CandState::Failed)
            .map(|(d, _)| *d)
            .unwrap_or(u64::MAX);
        let improved = best < l.best_at_round_start;
        let window: Vec<(u64, Peer)> = l
            .shortlist
            .iter()
            .filter(|(_, (_, s))| *s != CandState::Failed)
            .take(k)
            .filter(|(_, (_, s))| *s == CandState::Unqueried)
            .map(|(d, (p, _))| (*d, *p))
            .collect();
        if window.is_empty() {
            self.finish(ctx, id);
            return;
        }
        let batch: Vec<(u64, Peer)> = if l.rounds == 0 || improved {
            l.final_round = false;
            window.into_iter().take(alpha).collect()
        } else if !l.final_round {
            l.final_round = true;
            window
        } else {
            self.finish(ctx, id);
            return;
        };
        let l = self.lookups.get_mut(&id).expect("lookup present");
        l.best_at_round_start = best;
        l.rounds += 1;
        l.in_flight = batch.len();
        let (key, tag, purpose) = (l.key, l.purpose.tag(), l.purpose.clone());
        for (d, _) in &batch {
            l.shortlist.get_mut(d).expect("candidate").1 = CandState::InFlight;
        }
        for (_, peer) in batch {
            let rpc = self.fresh_id();
            self.rpcs.insert(rpc, Rpc::Lookup { lookup: id, peer });
            let msg = match purpose {
                Purpose::Get { limit, .. } => KadMsg::FindValue {
                    rpc,
                    key,
                    limit,
                    tag,
                },
                _ => KadMsg::FindNode { rpc, key, tag },
            };
            ctx.send(peer, msg, tag);
            ctx.set_timer(self.timeout(), KadTimer::Rpc(rpc));
        }
    }

    /// One probe of lookup `id` finished (reply or timeout).
    fn probe_done(
        &mut self,
        ctx: &mut OverlayCtx<'_, Self>,
        id: u64,
        peer: Peer,
        nodes: Option<Vec<Peer>>,
    ) {
        let me = self.me;
        let space = self.space;
        let Some(l) = self.lookups.get_mut(&id) else {
            return;
        };
        let d = space.xor_distance(peer.id, l.key);
        let state = if nodes.is_some() {
            CandState::Responded
        } else {
            CandState::Failed
        };
        if let Some(c) = l.shortlist.get_mut(&d) {
            c.1 = state;
        }
        for p in nodes.unwrap_or_default() {
            if p.id == me.id {
                continue;
            }
            l.shortlist
                .entry(space.xor_distance(p.id, l.key))
                .or_insert((p, CandState::Unqueried));
        }
        l.in_flight -= 1;
        if l.in_flight == 0 {
            self.next_round(ctx, id);
        }
    }

    fn finish(&mut self, ctx: &mut OverlayCtx<'_, Self>, id: u64) {
        let Some(l) = self.lookups.remove(&id) else {
            return;
        };
        let space = self.space;
        let responded: Vec<Peer> = l
            .shortlist
            .values()
            .filter(|(_, s)| *s == CandState::Responded)
            .map(|(p, _)| *p)
            .collect();
        let mut result = responded.clone();
        result.push(self.me);
        result.sort_by_key(|p| space.xor_distance(p.id, l.key));
        result.truncate(self.params.k);
        match l.purpose {
            Purpose::Get { query, .. } => ctx.notify(Notification::Get(GetOutcome {
                query,
                descriptors: Vec::new(),
                hops: (!responded.is_empty()).then_some(l.rounds),
            })),
            Purpose::Put(d) => {
                for (i, p) in result.iter().take(self.params.replication).enumerate() {
                    let d = d.with_replica(i as u8);
                    if p.idx == self.me.idx {
                        self.store.put(l.key, d);
                    } else {
                        ctx.send(*p, KadMsg::Store { key: l.key, d }, Tag::PUT);
                    }
                }
            }
            Purpose::Join => {
                self.joined = true;
                for t in self.last_lookup.iter_mut() {
                    *t = ctx.now;
                }
                ctx.notify(Notification::Joined);
                let nearest = self
                    .buckets
                    .iter()
                    .position(|b| !b.is_empty())
                    .unwrap_or(self.buckets.len());
                for b in (nearest + 1)..self.buckets.len() {
                    let key = self.random_in_bucket(ctx, b);
                    self.start_lookup(ctx, key, Purpose::JoinRefresh);
                }
            }
            Purpose::Probe => self.probe_results.push((l.key, result)),
            Purpose::JoinRefresh | Purpose::Refresh => {}
        }
    }

    fn random_in_bucket(&self, ctx: &mut OverlayCtx<'_, Self>, b: usize) -> NodeId {
        let low = if b == 0 {
            0
        } else {
            ctx.rng.next_u64() & ((1u64 << b) - 1)
        };
        NodeId((self.me.id.0 ^ (1u64 << b) ^ low) & self.space.mask())
    }

    /// Value found by a FIND_VALUE probe: the lookup completes at once.
    fn value_found(
        &mut self,
        ctx: &mut OverlayCtx<'_, Self>,
        id: u64,
        descriptors: Vec<AgentDescriptor>,
    ) {
        let Some(l) = self.lookups.remove(&id) else {
            return;
        };
        if let Purpose::Get { query, .. } = l.purpose {
            ctx.notify(Notification::Get(GetOutcome {
                query,
                descriptors,
                hops: Some(l.rounds),
            }));
        }
    }
}

impl Overlay for Kademlia {
    type Msg = KadMsg;
    type Timer = KadTimer;

    const PROTOCOL: Protocol = Protocol::Kademlia;

    fn new(me: Peer, space: IdSpace, params: &OverlayParams) -> Self {
        let m = space.bits() as usize;
        Self {
            me,
            space,
            params: params.clone(),
            joined: false,
            buckets: vec![Vec::new(); m],
            evicting: vec![None; m],
            last_lookup: vec![0.0; m],
            next_refresh: 0,
            store: DescriptorStore::new(),
            next_id: 0,
            lookups: BTreeMap::new(),
            rpcs: BTreeMap::new(),
            probe_results: Vec::new(),
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
        for t in self.last_lookup.iter_mut() {
            *t = ctx.now;
        }
        ctx.notify(Notification::Joined);
    }

    fn join(&mut self, ctx: &mut OverlayCtx<'_, Self>, contact: Peer) {
        if let Some(b) = self.bucket_of(contact.id) {
            self.buckets[b].push(contact);
        }
        let me = self.me.id;
        self.start_lookup(ctx, me, Purpose::Join);
    }

    fn on_message(&mut self, ctx: &mut OverlayCtx<'_, Self>, from: Peer, msg: KadMsg) {
        self.observe(ctx, from);
        match msg {
            KadMsg::FindNode { rpc, key, tag } => {
                let nodes = self.closest(key, self.params.k, Some(from));
                ctx.send(from, KadMsg::Nodes { rpc, nodes }, tag);
            }
            KadMsg::FindValue {
                rpc,
                key,
                limit,
                tag,
            } => {
                let descriptors = self.store.get(key, ctx.now, limit);
                if descriptors.is_empty() {
                    let nodes = self.closest(key, self.params.k, Some(from));
                    ctx.send(from, KadMsg::Nodes { rpc, nodes }, tag);
                } else {
                    ctx.send(from, KadMsg::Value { rpc, descriptors }, tag);
                }
            }
            KadMsg::Nodes { rpc, nodes } => {
                if let Some(Rpc::Lookup { lookup, peer }) = self.rpcs.remove(&rpc) {
                    self.probe_done(ctx, lookup, peer, Some(nodes));
                }
            }
            KadMsg::Value { rpc, descriptors } => {
                if let Some(Rpc::Lookup { lookup, .. }) = self.rpcs.remove(&rpc) {
                    self.value_found(ctx, lookup, descriptors);
                }
            }
            KadMsg::Store { key, d } => self.store.put(key, d),
            KadMsg::Ping { rpc } => ctx.send(from, KadMsg::Pong { rpc }, Tag::MAINTENANCE),
            KadMsg::Pong { rpc } => {
                if let Some(Rpc::Evict { bucket, .. }) = self.rpcs.remove(&rpc) {
                    // The stalest entry answered and was refreshed by
                    // `observe`; the newcomer is dropped.
                    self.evicting[bucket] = None;
                }
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut OverlayCtx<'_, Self>, timer: KadTimer) {
        let KadTimer::Rpc(rpc) = timer;
        match self.rpcs.remove(&rpc) {
            Some(Rpc::Lookup { lookup, peer }) => {
                self.evict(peer);
                self.probe_done(ctx, lookup, peer, None);
            }
            Some(Rpc::Evict { bucket, peer }) => {
                self.buckets[bucket].retain(|q| q.id != peer.id);
                if let Some(newcomer) = self.evicting[bucket].take() {
                    if self.buckets[bucket].len() < self.params.k {
                        self.buckets[bucket].push(newcomer);
                    }
                }
            }
            None => {}
        }
    }

    fn maintenance_tick(&mut self, ctx: &mut OverlayCtx<'_, Self>) {
        let m = self.buckets.len();
        let b = self.next_refresh;
        self.next_refresh = (b + 1) % m;
        if ctx.now - self.last_lookup[b] >= self.params.refresh_window {
            let key = self.random_in_bucket(ctx, b);
            self.start_lookup(ctx, key, Purpose::Refresh);
        }
    }

    fn get(&mut self, ctx: &mut OverlayCtx<'_, Self>, query: QueryId, key: NodeId, limit: usize) {
        let local = self.store.get(key, ctx.now, limit);
        if !local.is_empty() {
            ctx.notify(Notification::Get(GetOutcome {
                query,
                descriptors: local,
                hops: Some(0),
            }));
            return;
        }
        self.start_lookup(ctx, key, Purpose::Get { query, limit });
    }

    fn put(&mut self, ctx: &mut OverlayCtx<'_, Self>, key: NodeId, d: AgentDescriptor) {
        self.start_lookup(ctx, key, Purpose::Put(d));
    }

    fn store(&self) -> &DescriptorStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut DescriptorStore {
        &mut self.store
    }

    fn routing_entries(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_network, Network};
    use crate::overlay::{Action, Ctx};
    use crate::sim::RngStream;
    use crate::store::SkillId;

    const TICK: Time = 2.0;

    fn net(space: IdSpace, ids: Vec<NodeId>, seed: u64) -> Network<Kademlia, ()> {
        build_network::<Kademlia>(space, ids, OverlayParams::default(), TICK, seed, 0.5, 40.0)
    }

    fn xor_rank(space: IdSpace, ids: &[NodeId], key: NodeId) -> Vec<NodeId> {
        let mut v = ids.to_vec();
        v.sort_by_key(|id| space.xor_distance(*id, key));
        v
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

    fn holders(net: &Network<Kademlia, ()>, key: NodeId) -> Vec<NodeId> {
        let now = net.now();
        let mut v: Vec<NodeId> = (0..net.len() as u32)
            .filter(|&i| net.node(i).is_some_and(|n| n.store().has_live(key, now)))
            .map(|i| net.peer(i).id)
            .collect();
        v.sort();
        v
    }

    fn check_buckets(node: &Kademlia, space: IdSpace, k: usize) {
        let me = node.me().id;
        let mut seen = std::collections::BTreeSet::new();
        for (i, b) in node.buckets().iter().enumerate() {
            assert!(b.len() <= k);
            for p in b {
                assert_eq!(space.bucket_index(me, p.id), Some(i));
                assert!(seen.insert(p.id), "{} in two buckets", p.id);
            }
        }
    }

    fn sends(actions: &[Action<KadMsg, KadTimer>]) -> Vec<(Peer, KadMsg)> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Send { to, msg, .. } => Some((*to, msg.clone())),
                _ => None,
            })
            .collect()
    }

    /// A lone node with k = 2 and a full bucket 15 holding `a`, `b`.
    fn full_bucket() -> (Kademlia, IdSpace, [Peer; 3]) {
        let space = IdSpace::new(16).unwrap();
        let params = OverlayParams {
            k: 2,
            ..OverlayParams::default()
        };
        let me = Peer {
            idx: 0,
            id: NodeId(0),
        };
        let mut node = Kademlia::new(me, space, &params);
        let a = Peer {
            idx: 1,
            id: NodeId(0x8001),
        };
        let b = Peer {
            idx: 2,
            id: NodeId(0x8002),
        };
        let c = Peer {
            idx: 3,
            id: NodeId(0x8003),
        };
        let mut rng = RngStream::new(1, "t");
        let mut ctx = Ctx::new(0.0, me, space, &mut rng);
        node.observe(&mut ctx, a);
        node.observe(&mut ctx, b);
        assert!(ctx.into_actions().is_empty());
        (node, space, [a, b, c])
    }

    #[test]
    fn observing_twice_keeps_one_entry_at_the_tail() {
        let (mut node, space, [a, b, _]) = full_bucket();
        let mut rng = RngStream::new(1, "t");
        let mut ctx = Ctx::new(1.0, node.me(), space, &mut rng);
        node.observe(&mut ctx, a);
        node.observe(&mut ctx, a);
        assert_eq!(node.buckets()[15], vec![b, a]);
    }

    #[test]
    fn dead_head_is_evicted_for_the_newcomer() {
        let (mut node, space, [a, b, c]) = full_bucket();
        let mut rng = RngStream::new(1, "t");
        let mut ctx = Ctx::new(1.0, node.me(), space, &mut rng);
        node.observe(&mut ctx, c);
        let out = sends(&ctx.into_actions());
        let [(to, KadMsg::Ping { rpc })] = out.as_slice() else {
            panic!("expected one ping, got {out:?}");
        };
        assert_eq!(*to, a);
        let mut ctx = Ctx::new(5.0, node.me(), space, &mut rng);
        node.on_timer(&mut ctx, KadTimer::Rpc(*rpc));
        assert_eq!(node.buckets()[15], vec![b, c]);
    }

    #[test]
    fn live_head_is_kept_and_newcomer_dropped() {
        let (mut node, space, [a, b, c]) = full_bucket();
        let mut rng = RngStream::new(1, "t");
        let mut ctx = Ctx::new(1.0, node.me(), space, &mut rng);
        node.observe(&mut ctx, c);
        let out = sends(&ctx.into_actions());
        let KadMsg::Ping { rpc } = out[0].1 else {
            panic!("expected ping");
        };
        let mut ctx = Ctx::new(3.0, node.me(), space, &mut rng);
        node.on_message(&mut ctx, a, KadMsg::Pong { rpc });
        assert_eq!(node.buckets()[15], vec![b, a]);
        // The stale timeout that follows has nothing left to do.
        node.on_timer(&mut ctx, KadTimer::Rpc(rpc));
        assert_eq!(node.buckets()[15], vec![b, a]);
    }

    #[test]
    fn singleton_stores_and_hits_locally() {
        let space = IdSpace::new(16).unwrap();
        let mut n = net(space, vec![NodeId(77)], 1);
        let key = NodeId(77);
        n.put(0, key, desc(0, n.now()));
        n.run_until(n.now() + 10.0);
        assert_eq!(holders(&n, key), vec![NodeId(77)]);
        n.get(0, 4, key, 1);
        let notes = n.run_until(n.now() + 1.0);
        let hit = notes.iter().find_map(|(_, note)| match note {
            Notification::Get(o) => Some(o.clone()),
            _ => None,
        });
        let hit = hit.expect("local get answered");
        assert_eq!(hit.hops, Some(0));
        assert_eq!(hit.descriptors.len(), 1);
    }

    #[test]
    fn buckets_respect_ranges_after_joins() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(64).unwrap();
        let n = net(space, ids, 2);
        for i in n.joined() {
            check_buckets(n.node(i).unwrap(), space, 20);
        }
        assert_eq!(n.joined().len(), 64);
    }

    #[test]
    fn find_node_matches_xor_oracle() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(64).unwrap();
        let mut n = net(space, ids.clone(), 3);
        let mut rng = RngStream::new(3, "keys");
        let mut issued = Vec::new();
        for _ in 0..1000 {
            let key = NodeId(rng.next_u64() & space.mask());
            let origin = rng.below(64) as u32;
            n.with_node(origin, |node, ctx| node.find_node(ctx, key));
            issued.push((origin, key));
        }
        n.run_until(n.now() + 40.0);
        let mut results = BTreeMap::new();
        for i in 0..64u32 {
            for (key, found) in n.node_mut(i).unwrap().take_probe_results() {
                results.insert((i, key), found);
            }
        }
        let mut agree = 0;
        for (origin, key) in issued {
            let got = results.get(&(origin, key)).expect("probe finished");
            let mut got: Vec<NodeId> = got.iter().map(|p| p.id).collect();
            got.sort();
            let mut want: Vec<NodeId> = xor_rank(space, &ids, key).into_iter().take(20).collect();
            want.sort();
            if got == want {
                agree += 1;
            }
        }
        assert_eq!(agree, 1000);
    }

    #[test]
    fn puts_land_on_xor_closest_nodes() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(64).unwrap();
        let mut n = net(space, ids.clone(), 4);
        let mut rng = RngStream::new(4, "keys");
        let mut keys = Vec::new();
        for k in 0..1000u32 {
            let key = NodeId(rng.next_u64() & space.mask());
            let origin = rng.below(64) as u32;
            n.put(origin, key, desc(k, n.now()));
            keys.push(key);
        }
        n.run_until(n.now() + 40.0);
        for key in keys {
            let mut want: Vec<NodeId> = xor_rank(space, &ids, key).into_iter().take(3).collect();
            want.sort();
            assert_eq!(holders(&n, key), want, "key {key}");
        }
    }

    #[test]
    fn gets_find_stored_values_from_every_node() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(64).unwrap();
        let mut n = net(space, ids, 5);
        let key = space.hash_label("skill_07");
        n.put(11, key, desc(11, n.now()));
        n.run_until(n.now() + 30.0);
        for q in 0..64u32 {
            n.get(q, q, key, 1);
            let mut outcome = None;
            for (_, note) in n.run_until(n.now() + 40.0) {
                if let Notification::Get(o) = note {
                    outcome = Some(o);
                }
            }
            let o = outcome.expect("get answered");
            assert_eq!(o.descriptors.len(), 1, "query from {q}");
            let rounds = o.hops.unwrap();
            assert!(rounds <= 4, "{rounds} rounds");
            // Request plus reply per probe; at most α probes per round
            // except a closing round over the whole k-window.
            let msgs = n.ledger().query_messages(q);
            if rounds == 0 {
                assert_eq!(msgs, 0);
            } else {
                assert!(
                    msgs >= 2 && msgs <= 2 * (3 * u64::from(rounds) + 20),
                    "{msgs} msgs"
                );
            }
        }
    }

    #[test]
    fn refresh_tick_is_silent_when_buckets_are_fresh() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(16).unwrap();
        let mut n = net(space, ids, 6);
        let now = n.now();
        let mut quiet = 0;
        n.with_node(3, |node, ctx| {
            for t in node.last_lookup.iter_mut() {
                *t = now;
            }
            let before = node.lookups.len();
            for _ in 0..16 {
                node.maintenance_tick(ctx);
            }
            quiet = node.lookups.len() - before;
        });
        assert_eq!(quiet, 0);
    }

    #[test]
    fn idle_bucket_triggers_one_lookup() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(16).unwrap();
        let mut n = net(space, ids, 7);
        let now = n.now();
        let mut started = 0;
        n.with_node(3, |node, ctx| {
            for t in node.last_lookup.iter_mut() {
                *t = now;
            }
            node.next_refresh = 15;
            node.last_lookup[15] = now - 31.0;
            let before = node.lookups.len();
            node.maintenance_tick(ctx);
            started = node.lookups.len() - before;
        });
        assert_eq!(started, 1);
    }

    #[test]
    fn refreshing_an_empty_range_completes_and_stays_empty() {
        let space = IdSpace::new(16).unwrap();
        let ids = space.assign_node_ids(64).unwrap();
        let mut n = net(space, ids, 8);
        let empty = n
            .node(5)
            .unwrap()
            .buckets()
            .iter()
            .position(Vec::is_empty)
            .unwrap();
        let now = n.now();
        n.with_node(5, |node, ctx| {
            node.next_refresh = empty;
            node.last_lookup[empty] = now - 100.0;
            node.maintenance_tick(ctx);
        });
        n.run_until(n.now() + 30.0);
        let node = n.node(5).unwrap();
        assert!(node
            .lookups
            .values()
            .all(|l| node.bucket_of(l.key) != Some(empty)));
        assert!(node.buckets()[empty].is_empty());
    }
}
