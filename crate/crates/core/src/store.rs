//! Agent descriptors and the TTL-governed store every overlay node keeps.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::id::NodeId;
use crate::sim::Time;

/// Index into the skill catalog; label `skill_NN`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SkillId(pub u16);

impl SkillId {
    pub fn label(&self) -> String {
        format!("skill_{:02}", self.0)
    }
}

/// A published record binding one agent to one skill.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgentDescriptor {
    /// Node index of the publishing agent.
    pub agent: u32,
    pub agent_id: NodeId,
    pub skill: SkillId,
    pub publish_time: Time,
    pub ttl: Time,
    pub replica_index: u8,
}

impl AgentDescriptor {
    pub fn expires_at(&self) -> Time {
        self.publish_time + self.ttl
    }

    pub fn is_live(&self, now: Time) -> bool {
        now < self.expires_at()
    }

    pub fn with_replica(&self, replica_index: u8) -> Self {
        Self {
            replica_index,
            ..self.clone()
        }
    }
}

/// Descriptors keyed by `(lookup key, agent index)`. Reads filter expired
/// entries themselves, so correctness never depends on when
/// [`DescriptorStore::expire_sweep`] runs.
#[derive(Clone, Debug, Default)]
pub struct DescriptorStore {
    entries: BTreeMap<(NodeId, u32), AgentDescriptor>,
}

impl DescriptorStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or refreshes the entry for `(key, d.agent)`. An older copy
    /// arriving late never rolls back a newer publish time.
    pub fn put(&mut self, key: NodeId, d: AgentDescriptor) {
        match self.entries.get_mut(&(key, d.agent)) {
            Some(existing) if existing.publish_time > d.publish_time => {}
            Some(existing) => *existing = d,
            None => {
                self.entries.insert((key, d.agent), d);
            }
        }
    }

    /// Up to `limit` live descriptors stored under `key`, ordered by agent.
    pub fn get(&self, key: NodeId, now: Time, limit: usize) -> Vec<AgentDescriptor> {
        self.entries
            .range((key, 0)..=(key, u32::MAX))
            .map(|(_, d)| d)
            .filter(|d| d.is_live(now))
            .take(limit)
            .cloned()
            .collect()
    }

    pub fn has_live(&self, key: NodeId, now: Time) -> bool {
        self.entries
            .range((key, 0)..=(key, u32::MAX))
            .any(|(_, d)| d.is_live(now))
    }

    /// Removes entries with `publish_time + ttl <= now`; returns how many.
    pub fn expire_sweep(&mut self, now: Time) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, d| d.is_live(now));
        before - self.entries.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(agent: u32, publish_time: Time) -> AgentDescriptor {
        AgentDescriptor {
            agent,
            agent_id: NodeId(u64::from(agent) * 7),
            skill: SkillId(5),
            publish_time,
            ttl: 60.0,
            replica_index: 0,
        }
    }

    #[test]
    fn put_then_get_before_ttl() {
        let mut s = DescriptorStore::new();
        s.put(NodeId(9), desc(1, 0.0));
        assert_eq!(s.get(NodeId(9), 59.9, 10).len(), 1);
        assert!(s.get(NodeId(8), 1.0, 10).is_empty());
    }

    #[test]
    fn expires_exactly_at_ttl() {
        let mut s = DescriptorStore::new();
        s.put(NodeId(9), desc(1, 0.0));
        assert!(s.get(NodeId(9), 60.0, 10).is_empty());
        assert!(!s.has_live(NodeId(9), 60.0));
    }

    #[test]
    fn republish_refreshes_expiry() {
        let mut s = DescriptorStore::new();
        s.put(NodeId(9), desc(1, 0.0));
        s.put(NodeId(9), desc(1, 20.0));
        assert_eq!(s.len(), 1);
        assert_eq!(s.get(NodeId(9), 70.0, 10).len(), 1);
        assert!(s.get(NodeId(9), 80.0, 10).is_empty());
    }

    #[test]
    fn stale_copy_does_not_roll_back() {
        let mut s = DescriptorStore::new();
        s.put(NodeId(9), desc(1, 20.0));
        s.put(NodeId(9), desc(1, 0.0));
        assert_eq!(s.get(NodeId(9), 70.0, 10).len(), 1);
    }

    #[test]
    fn sweep_counts() {
        let mut s = DescriptorStore::new();
        assert_eq!(s.expire_sweep(100.0), 0);
        s.put(NodeId(1), desc(1, 0.0));
        s.put(NodeId(1), desc(2, 30.0));
        s.put(NodeId(2), desc(3, 30.0));
        assert_eq!(s.expire_sweep(60.0), 1);
        assert_eq!(s.len(), 2);
        assert_eq!(s.expire_sweep(60.0), 0);
    }

    #[test]
    fn get_respects_limit_and_key() {
        let mut s = DescriptorStore::new();
        for a in 0..5 {
            s.put(NodeId(3), desc(a, 1.0));
        }
        s.put(NodeId(4), desc(9, 1.0));
        let got = s.get(NodeId(3), 2.0, 2);
        assert_eq!(got.iter().map(|d| d.agent).collect::<Vec<_>>(), vec![0, 1]);
    }
}
