//! Identifier space shared by the three overlays.
//!
//! Identifiers are `m`-bit unsigned integers stored in a `u64`. Chord reads
//! them as points on a ring, Pastry as strings of base-`2^b` digits and
//! Kademlia as leaves of a binary trie ordered by XOR distance.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Offset basis of the 64-bit FNV-1a hash.
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
/// Prime of the 64-bit FNV-1a hash.
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Standard 64-bit FNV-1a digest.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// MurmurHash3 64-bit finalizer: a bijection with full avalanche.
pub fn fmix64(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^ (x >> 33)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdError {
    #[error("identifier width must be in 1..=64 bits, got {0}")]
    Width(u32),
    #[error("digit width {digit_bits} does not divide identifier width {bits}")]
    DigitWidth { bits: u32, digit_bits: u32 },
    #[error("cannot place {nodes} distinct identifiers in a {bits}-bit space")]
    SpaceFull { nodes: usize, bits: u32 },
}

/// An overlay identifier. Only meaningful together with the [`IdSpace`] that
/// produced it.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
pub struct NodeId(pub u64);

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IdSpace {
    bits: u32,
}

impl IdSpace {
    pub fn new(bits: u32) -> Result<Self, IdError> {
        if bits == 0 || bits > 64 {
            return Err(IdError::Width(bits));
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn mask(&self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    /// Number of identifiers, `2^m`, as a `u128` so that `m = 64` fits.
    pub fn size(&self) -> u128 {
        1u128 << self.bits
    }

    pub fn id(&self, raw: u64) -> NodeId {
        NodeId(raw & self.mask())
    }

    /// Key for a skill or agent label: top `m` bits of the FNV-1a digest
    /// after [`fmix64`]. FNV-1a alone leaves labels that differ only in their
    /// last characters clustered in the top bits.
    pub fn hash_label(&self, label: &str) -> NodeId {
        let digest = fmix64(fnv1a64(label.as_bytes()));
        NodeId(digest >> (64 - self.bits))
    }

    /// `a + delta` on the ring.
    pub fn add(&self, a: NodeId, delta: u64) -> NodeId {
        NodeId(a.0.wrapping_add(delta) & self.mask())
    }

    /// Clockwise distance from `a` to `b`: `(b - a) mod 2^m`.
    pub fn ring_distance(&self, a: NodeId, b: NodeId) -> u64 {
        b.0.wrapping_sub(a.0) & self.mask()
    }

    /// Shorter of the two ring distances; Pastry's numeric closeness.
    pub fn circular_distance(&self, a: NodeId, b: NodeId) -> u64 {
        self.ring_distance(a, b).min(self.ring_distance(b, a))
    }

    pub fn xor_distance(&self, a: NodeId, b: NodeId) -> u64 {
        a.0 ^ b.0
    }

    /// `x` lies strictly inside the clockwise arc `(a, b)`. When `a == b` the
    /// arc is the whole ring minus `a`.
    pub fn in_open(&self, x: NodeId, a: NodeId, b: NodeId) -> bool {
        let dx = self.ring_distance(a, x);
        if a == b {
            return dx != 0;
        }
        dx != 0 && dx < self.ring_distance(a, b)
    }

    /// `x` lies in the clockwise arc `(a, b]`. When `a == b` every point does.
    pub fn in_half_open(&self, x: NodeId, a: NodeId, b: NodeId) -> bool {
        if a == b {
            return true;
        }
        let dx = self.ring_distance(a, x);
        dx != 0 && dx <= self.ring_distance(a, b)
    }

    pub fn check_digits(&self, digit_bits: u32) -> Result<(), IdError> {
        if digit_bits == 0 || digit_bits > 16 || !self.bits.is_multiple_of(digit_bits) {
            return Err(IdError::DigitWidth {
                bits: self.bits,
                digit_bits,
            });
        }
        Ok(())
    }

    pub fn digit_count(&self, digit_bits: u32) -> usize {
        (self.bits / digit_bits) as usize
    }

    /// Digit `i` (0 = most significant) in base `2^digit_bits`.
    pub fn digit(&self, id: NodeId, i: usize, digit_bits: u32) -> usize {
        let shift = self.bits - (i as u32 + 1) * digit_bits;
        ((id.0 >> shift) & ((1u64 << digit_bits) - 1)) as usize
    }

    pub fn digits(&self, id: NodeId, digit_bits: u32) -> Vec<u8> {
        (0..self.digit_count(digit_bits))
            .map(|i| self.digit(id, i, digit_bits) as u8)
            .collect()
    }

    pub fn from_digits(&self, digits: &[u8], digit_bits: u32) -> NodeId {
        let raw = digits
            .iter()
            .fold(0u64, |acc, &d| (acc << digit_bits) | u64::from(d));
        self.id(raw)
    }

    /// Number of leading base-`2^digit_bits` digits on which `a` and `b` agree.
    pub fn shared_prefix_len(&self, a: NodeId, b: NodeId, digit_bits: u32) -> usize {
        let diff = a.0 ^ b.0;
        if diff == 0 {
            return self.digit_count(digit_bits);
        }
        let leading = diff.leading_zeros() - (64 - self.bits);
        (leading / digit_bits) as usize
    }

    /// Kademlia bucket holding `b` from `a`'s point of view: the `i` with
    /// `2^i <= a ^ b < 2^(i+1)`. `None` for `a == b`.
    pub fn bucket_index(&self, a: NodeId, b: NodeId) -> Option<usize> {
        let d = a.0 ^ b.0;
        if d == 0 {
            None
        } else {
            Some(63 - d.leading_zeros() as usize)
        }
    }

    /// Identifiers for `n` agents, derived from the labels `agent_0000`,
    /// `agent_0001`, ... Collisions (only plausible for small `m`) are resolved
    /// by stepping clockwise to the next free identifier.
    pub fn assign_node_ids(&self, n: usize) -> Result<Vec<NodeId>, IdError> {
        if (n as u128) > self.size() {
            return Err(IdError::SpaceFull {
                nodes: n,
                bits: self.bits,
            });
        }
        let mut taken = std::collections::HashSet::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        for i in 0..n {
            let mut id = self.hash_label(&agent_label(i));
            while !taken.insert(id) {
                id = self.add(id, 1);
            }
            ids.push(id);
        }
        Ok(ids)
    }
}

pub fn agent_label(index: usize) -> String {
    format!("agent_{index:04}")
}
