//! Deterministic discrete-event engine: virtual clock, event queue, network
//! model and named random streams.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::id::fnv1a64;

/// Virtual time units. Continuous, never quantized.
pub type Time = f64;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("exponential mean must be positive and finite, got {0}")]
    NonPositiveMean(f64),
    #[error("loss probability must lie in [0, 1], got {0}")]
    Loss(f64),
    #[error("per-message latency must be positive and finite, got {0}")]
    Latency(f64),
}

/// A timestamped unit of work. `(fire_time, seq)` totally orders every event
/// ever scheduled on one queue.
#[derive(Debug)]
pub struct SimEvent<P> {
    pub fire_time: Time,
    pub seq: u64,
    pub payload: P,
}

impl<P> PartialEq for SimEvent<P> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<P> Eq for SimEvent<P> {}

impl<P> PartialOrd for SimEvent<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for SimEvent<P> {
    // Reversed so that `BinaryHeap` pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_time
            .total_cmp(&self.fire_time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Handle returned by [`EventQueue::schedule_at`]; used to cancel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

pub struct EventQueue<P> {
    now: Time,
    next_seq: u64,
    heap: BinaryHeap<SimEvent<P>>,
    cancelled: HashSet<u64>,
    executed: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self {
            now: 0.0,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            executed: 0,
        }
    }

    pub fn now(&self) -> Time {
        self.now
    }

    /// Events handed out by [`EventQueue::pop_until`] so far.
    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    /// Schedules `payload` at absolute time `fire_time`.
    ///
    /// # Panics
    ///
    /// Scheduling into the past breaks causality and panics.
    pub fn schedule_at(&mut self, fire_time: Time, payload: P) -> EventHandle {
        assert!(
            fire_time >= self.now && fire_time.is_finite(),
            "event scheduled into the past: fire_time {fire_time} < clock {}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent {
            fire_time,
            seq,
            payload,
        });
        EventHandle(seq)
    }

    pub fn schedule_in(&mut self, delay: Time, payload: P) -> EventHandle {
        self.schedule_at(self.now + delay, payload)
    }

    /// Cancelled events are discarded when they reach the head of the queue.
    pub fn cancel(&mut self, handle: EventHandle) {
        if handle.0 < self.next_seq {
            self.cancelled.insert(handle.0);
        }
    }

    /// Fire time of the next live event, if any.
    pub fn peek_time(&mut self) -> Option<Time> {
        self.skip_cancelled();
        self.heap.peek().map(|e| e.fire_time)
    }

    fn skip_cancelled(&mut self) {
        while let Some(head) = self.heap.peek() {
            if self.cancelled.remove(&head.seq) {
                self.heap.pop();
            } else {
                break;
            }
        }
    }

    /// Pops the next live event with `fire_time <= end`, advancing the clock.
    pub fn pop_until(&mut self, end: Time) -> Option<SimEvent<P>> {
        self.skip_cancelled();
        if self.heap.peek()?.fire_time > end {
            return None;
        }
        let ev = self.heap.pop()?;
        self.now = ev.fire_time;
        self.executed += 1;
        Some(ev)
    }

    /// Moves the clock forward to `t` without executing anything.
    pub fn advance_to(&mut self, t: Time) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Executes every event with `fire_time <= end` in `(fire_time, seq)`
    /// order; the handler may schedule further events, including at the
    /// current instant. The clock reads `end` afterwards.
    pub fn run_until<F>(&mut self, end: Time, mut handler: F)
    where
        F: FnMut(&mut Self, SimEvent<P>),
    {
        while let Some(ev) = self.pop_until(end) {
            handler(self, ev);
        }
        self.advance_to(end);
    }
}

/// A reproducible random stream identified by `(seed, label)`. Every consumer
/// owns its own stream so adding one never perturbs another.
#[derive(Clone, Debug)]
pub struct RngStream {
    label: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mixed = splitmix64(seed ^ fnv1a64(label.as_bytes()));
        Self {
            label: label.to_string(),
            rng: ChaCha8Rng::seed_from_u64(mixed),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        self.rng.gen_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One draw from `Exp(mean)` by inversion; always strictly positive.
pub fn sample_exponential(rng: &mut RngStream, mean: Time) -> Result<Time, SimError> {
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(SimError::NonPositiveMean(mean));
    }
    Ok(-mean * rng.uniform_open().ln())
}

/// Uniform per-message delay plus independent loss.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    pub latency: Time,
    pub loss: f64,
}

impl NetworkModel {
    pub fn new(latency: Time, loss: f64) -> Result<Self, SimError> {
        if !(latency > 0.0 && latency.is_finite()) {
            return Err(SimError::Latency(latency));
        }
        if !(0.0..=1.0).contains(&loss) {
            return Err(SimError::Loss(loss));
        }
        Ok(Self { latency, loss })
    }

    /// Delay for one message, or `None` if it is lost. The loss stream is
    /// only consumed when loss is possible.
    pub fn transit(&self, loss_rng: &mut RngStream) -> Option<Time> {
        if self.loss > 0.0 && (self.loss >= 1.0 || loss_rng.bernoulli(self.loss)) {
            None
        } else {
            Some(self.latency)
        }
    }
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self {
            latency: 1.0,
            loss: 0.0,
        }
    }
}

/// Undirected Erdos-Renyi underlay over node indices. Only used to pick
/// bootstrap contacts.
#[derive(Clone, Debug)]
pub struct Underlay {
    adjacency: Vec<Vec<u32>>,
}

impl Underlay {
    /// `G(n, p)` with `p = avg_degree / (n - 1)`.
    pub fn erdos_renyi(n: usize, avg_degree: f64, rng: &mut RngStream) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        if n > 1 {
            let p = (avg_degree / (n - 1) as f64).clamp(0.0, 1.0);
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.uniform() < p {
                        adjacency[i].push(j as u32);
                        adjacency[j].push(i as u32);
                    }
                }
            }
        }
        Self { adjacency }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.adjacency[node]
    }

    pub fn average_degree(&self) -> f64 {
        if self.adjacency.is_empty() {
            return 0.0;
        }
        let total: usize = self.adjacency.iter().map(Vec::len).sum();
        total as f64 / self.adjacency.len() as f64
    }
}
