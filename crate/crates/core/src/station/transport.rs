//! Classical channels between stations.
//!
//! A transport must be reliable and keep per-sender FIFO order. Delivery
//! order across different senders is unspecified.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::message::Role;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub from: Role,
    pub to: Role,
    pub bytes: Vec<u8>,
}

pub trait Transport {
    fn send(&mut self, envelope: Envelope);
    /// Next envelope to deliver, or `None` when nothing is in flight.
    fn deliver(&mut self) -> Option<Envelope>;
}

/// In-process FIFO queue; delivers in global send order.
#[derive(Debug, Default)]
pub struct FifoTransport {
    queue: VecDeque<Envelope>,
}

impl FifoTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Transport for FifoTransport {
    fn send(&mut self, envelope: Envelope) {
        self.queue.push_back(envelope);
    }

    fn deliver(&mut self) -> Option<Envelope> {
        self.queue.pop_front()
    }
}

/// Keeps one queue per sender and picks which sender to serve next with a
/// seeded generator, so different seeds exercise different interleavings.
#[derive(Debug)]
pub struct InterleavingTransport {
    queues: BTreeMap<Role, VecDeque<Envelope>>,
    rng: ChaCha8Rng,
}

impl InterleavingTransport {
    pub fn new(seed: u64) -> Self {
        InterleavingTransport {
            queues: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Transport for InterleavingTransport {
    fn send(&mut self, envelope: Envelope) {
        self.queues.entry(envelope.from).or_default().push_back(envelope);
    }

    fn deliver(&mut self) -> Option<Envelope> {
        let ready: Vec<Role> = self
            .queues
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .map(|(r, _)| *r)
            .collect();
        if ready.is_empty() {
            return None;
        }
        let pick = ready[self.rng.random_range(0..ready.len())];
        self.queues.get_mut(&pick).and_then(VecDeque::pop_front)
    }
}
