//! The interface every overlay node implements, and the context through which
//! it talks to the simulated network.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::id::{IdSpace, NodeId};
use crate::metrics::Tag;
use crate::sim::{RngStream, Time};
use crate::store::{AgentDescriptor, DescriptorStore};

pub type QueryId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Chord,
    Pastry,
    Kademlia,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Chord, Protocol::Pastry, Protocol::Kademlia];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Chord => "chord",
            Protocol::Pastry => "pastry",
            Protocol::Kademlia => "kademlia",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "chord" => Ok(Protocol::Chord),
            "pastry" => Ok(Protocol::Pastry),
            "kademlia" | "kad" => Ok(Protocol::Kademlia),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

/// A node as other nodes know it: simulator index plus overlay identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Peer {
    pub idx: u32,
    pub id: NodeId,
}

/// Tuning knobs shared by the three overlays; each reads only its own.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlayParams {
    pub replication: usize,
    pub latency: Time,
    pub successor_list: usize,
    pub pastry_b: u32,
    pub leaf_set: usize,
    pub k: usize,
    pub alpha: usize,
    pub refresh_window: Time,
}

impl Default for OverlayParams {
    fn default() -> Self {
        Self {
            replication: 3,
            latency: 1.0,
            successor_list: 4,
            pastry_b: 4,
            leaf_set: 16,
            k: 20,
            alpha: 3,
            refresh_window: 30.0,
        }
    }
}

/// Outcome of a lookup issued through [`Overlay::get`].
#[derive(Clone, Debug, PartialEq)]
pub struct GetOutcome {
    pub query: QueryId,
    /// Descriptors returned by the responsible node (empty on failure or miss).
    pub descriptors: Vec<AgentDescriptor>,
    /// Forwarding hops or lookup rounds; `None` if no responsible node answered.
    pub hops: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Notification {
    Joined,
    JoinFailed,
    Get(GetOutcome),
}

#[derive(Debug)]
pub enum Action<M, T> {
    Send { to: Peer, msg: M, tag: Tag },
    Timer { delay: Time, timer: T },
    Notify(Notification),
}

/// Per-event handle a node uses to emit messages, timers and notifications.
/// The driver applies the buffered actions after the handler returns.
pub struct Ctx<'a, M, T> {
    pub now: Time,
    pub me: Peer,
    pub space: IdSpace,
    pub rng: &'a mut RngStream,
    actions: Vec<Action<M, T>>,
}

impl<'a, M, T> Ctx<'a, M, T> {
    pub fn new(now: Time, me: Peer, space: IdSpace, rng: &'a mut RngStream) -> Self {
        Self {
            now,
            me,
            space,
            rng,
            actions: Vec::new(),
        }
    }

    pub fn send(&mut self, to: Peer, msg: M, tag: Tag) {
        debug_assert_ne!(to.idx, self.me.idx, "node sent a message to itself");
        self.actions.push(Action::Send { to, msg, tag });
    }

    pub fn set_timer(&mut self, delay: Time, timer: T) {
        self.actions.push(Action::Timer { delay, timer });
    }

    pub fn notify(&mut self, n: Notification) {
        self.actions.push(Action::Notify(n));
    }

    pub fn into_actions(self) -> Vec<Action<M, T>> {
        self.actions
    }
}

pub type OverlayCtx<'a, O> = Ctx<'a, <O as Overlay>::Msg, <O as Overlay>::Timer>;

/// One overlay node's state machine.
pub trait Overlay: Sized {
    type Msg: Clone + fmt::Debug;
    type Timer: Clone + fmt::Debug;

    const PROTOCOL: Protocol;

    fn new(me: Peer, space: IdSpace, params: &OverlayParams) -> Self;

    fn me(&self) -> Peer;

    fn is_joined(&self) -> bool;

    /// First node of the network: joined immediately with no peers.
    fn bootstrap_alone(&mut self, ctx: &mut OverlayCtx<'_, Self>);

    /// Starts the join procedure through `contact`; completion is signalled
    /// with [`Notification::Joined`] or [`Notification::JoinFailed`].
    fn join(&mut self, ctx: &mut OverlayCtx<'_, Self>, contact: Peer);

    fn on_message(&mut self, ctx: &mut OverlayCtx<'_, Self>, from: Peer, msg: Self::Msg);

    fn on_timer(&mut self, ctx: &mut OverlayCtx<'_, Self>, timer: Self::Timer);

    /// Periodic stabilization, leaf-set probing or bucket refresh.
    fn maintenance_tick(&mut self, ctx: &mut OverlayCtx<'_, Self>);

    /// Discovery lookup for `key`; always ends with a [`Notification::Get`].
    fn get(&mut self, ctx: &mut OverlayCtx<'_, Self>, query: QueryId, key: NodeId, limit: usize);

    /// Places `d` on the `replication` nodes responsible for `key`.
    fn put(&mut self, ctx: &mut OverlayCtx<'_, Self>, key: NodeId, d: AgentDescriptor);

    fn store(&self) -> &DescriptorStore;

    fn store_mut(&mut self) -> &mut DescriptorStore;

    /// Distinct peers held in routing state.
    fn routing_entries(&self) -> usize;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_names_round_trip() {
        for p in Protocol::ALL {
            assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
        }
        assert!("tapestry".parse::<Protocol>().is_err());
    }
}
