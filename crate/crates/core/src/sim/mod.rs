//! Deterministic in-process network of nodes.
//!
//! One event loop owns every node. Events are delivered in `(deliver_at, seq)`
//! order, so a given [`SimConfig`] plus the same sequence of scripted calls
//! always produces the same trace.
//!
//! Randomness comes from Xoshiro256++ seeded with `SimConfig::seed` through
//! SplitMix64 (`rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64`). Latencies
//! are `min + next_u64() % (max - min + 1)` milliseconds, and bootstrap peers
//! are chosen with a partial Fisher-Yates shuffle driven by `next_u64() % n`,
//! so results do not depend on `rand`'s range-sampling internals.

mod ops;
mod scenario;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::net::Ipv4Addr;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::cid::{Cid, Digest};
use crate::clock::{hours, SimTime};
use crate::dag::DagError;
use crate::exchange::{merge_reports, BandwidthSample, Envelope, MessageKind};
use crate::node::{Node, NodeConfig, DEFAULT_GC_TTL};
use crate::peer::PeerId;

pub use ops::{LookupReport, RETRY_INTERVAL};
pub use scenario::{run_scenario, ScenarioReport, ScenarioSummary, SCENARIO_PAYLOAD};

/// Index of a node inside a [`Simulation`].
pub type NodeIdx = usize;

pub const DEFAULT_PORT: u16 = 4001;

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub node_count: usize,
    pub seed: u64,
    /// Inclusive per-message latency bounds in milliseconds.
    pub latency_ms: (u64, u64),
    pub bootstrap_fanout: usize,
    pub gc_ttl: Duration,
    /// Period of the automatic garbage collection pass run by [`Simulation::advance`].
    pub gc_interval: Option<Duration>,
    /// How long a requester waits for any single reply.
    pub rpc_timeout: Duration,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            node_count: 1,
            seed: 0,
            latency_ms: (5, 50),
            bootstrap_fanout: 4,
            gc_ttl: DEFAULT_GC_TTL,
            gc_interval: Some(hours(1)),
            rpc_timeout: Duration::from_secs(1),
        }
    }
}

impl SimConfig {
    pub fn new(node_count: usize, seed: u64) -> Self {
        SimConfig {
            node_count,
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("{0} could not be found on any reachable peer")]
    NotFoundAnywhere(Cid),
    #[error("peer {peer} returned corrupt bytes for {cid}")]
    IntegrityError { cid: Cid, peer: PeerId },
    #[error("no DHT server reachable to store provider record for {0}")]
    NoServersReachable(Cid),
    #[error("peer {0} is unreachable")]
    Unreachable(PeerId),
    #[error(transparent)]
    Dag(#[from] DagError),
}

#[derive(Debug, Clone)]
enum Payload {
    Connect,
    Message(Vec<u8>),
}

#[derive(Debug, Clone)]
struct Event {
    at: SimTime,
    seq: u64,
    from: NodeIdx,
    to: NodeIdx,
    payload: Payload,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// Replies a requester is still waiting for: (requester, responder, key, request kind).
type Outstanding = (NodeIdx, NodeIdx, [u8; 34], MessageKind);

#[derive(Debug, Clone)]
struct Reply {
    to: NodeIdx,
    from: NodeIdx,
    env: Envelope,
}

#[derive(Debug, Clone, Default)]
struct Faults {
    drop_next_message: bool,
    corrupt_next_block: bool,
}

/// Run totals reported by `sim run`.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct SimStats {
    pub events: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub dropped: u64,
}

pub struct Simulation {
    config: SimConfig,
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Reverse<Event>>,
    nodes: Vec<Node>,
    index: HashMap<PeerId, NodeIdx>,
    rng: Xoshiro256PlusPlus,
    trace: Sha256,
    processed: u64,
    dropped: u64,
    last_processed_at: SimTime,
    outstanding: HashSet<Outstanding>,
    inbox: Vec<Reply>,
    faults: Faults,
    next_gc: Option<SimTime>,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("now", &self.now)
            .field("nodes", &self.nodes.len())
            .field("pending", &self.queue.len())
            .finish()
    }
}

/// Identity seed of node `i` in a simulation seeded with `seed`.
pub fn node_seed(seed: u64, i: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"farmledger/sim/node");
    h.update(seed.to_be_bytes());
    h.update((i as u64).to_be_bytes());
    h.finalize().into()
}

fn node_ip(i: usize) -> Ipv4Addr {
    Ipv4Addr::new(10, (i >> 16) as u8, (i >> 8) as u8, i as u8)
}

impl Simulation {
    /// Builds `node_count` nodes; each node after the first dials
    /// `min(bootstrap_fanout, i)` randomly chosen earlier nodes.
    /// Returns once every bootstrap connection is established.
    pub fn build(config: SimConfig) -> Self {
        assert!(config.node_count >= 1, "need at least one node");
        assert!(
            config.latency_ms.0 <= config.latency_ms.1,
            "latency min exceeds max"
        );
        let rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
        let next_gc = config.gc_interval.map(|d| SimTime::ZERO + d);
        let mut sim = Simulation {
            config: config.clone(),
            now: SimTime::ZERO,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes: Vec::with_capacity(config.node_count),
            index: HashMap::new(),
            rng,
            trace: Sha256::new(),
            processed: 0,
            dropped: 0,
            last_processed_at: SimTime::ZERO,
            outstanding: HashSet::new(),
            inbox: Vec::new(),
            faults: Faults::default(),
            next_gc,
        };
        for i in 0..config.node_count {
            let mut nc = NodeConfig::new(node_seed(config.seed, i), node_ip(i), DEFAULT_PORT);
            nc.gc_ttl = config.gc_ttl;
            let fanout = config.bootstrap_fanout.min(i);
            let chosen = sim.sample_prior(i, fanout);
            nc.bootstrap = chosen.iter().map(|j| sim.nodes[*j].addr()).collect();
            let node = Node::new(nc);
            sim.index.insert(node.id(), i);
            sim.nodes.push(node);
            for j in chosen {
                sim.enqueue_connect(i, j);
            }
        }
        sim.drain();
        sim
    }

    fn sample_prior(&mut self, n: usize, k: usize) -> Vec<NodeIdx> {
        let mut pool: Vec<NodeIdx> = (0..n).collect();
        for slot in 0..k {
            let remaining = (n - slot) as u64;
            let pick = slot + (self.rng.next_u64() % remaining) as usize;
            pool.swap(slot, pick);
        }
        pool.truncate(k);
        pool
    }

    fn latency(&mut self) -> Duration {
        let (lo, hi) = self.config.latency_ms;
        Duration::from_millis(lo + self.rng.next_u64() % (hi - lo + 1))
    }

    fn push(&mut self, at: SimTime, from: NodeIdx, to: NodeIdx, payload: Payload) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Event {
            at,
            seq,
            from,
            to,
            payload,
        }));
    }

    fn enqueue_connect(&mut self, from: NodeIdx, to: NodeIdx) -> SimTime {
        let at = self.now + self.latency();
        self.push(at, from, to, Payload::Connect);
        at
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, idx: NodeIdx) -> &Node {
        &self.nodes[idx]
    }

    pub fn node_mut(&mut self, idx: NodeIdx) -> &mut Node {
        &mut self.nodes[idx]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn peer_ids(&self) -> Vec<PeerId> {
        self.nodes.iter().map(Node::id).collect()
    }

    pub fn idx_of(&self, peer: &PeerId) -> Option<NodeIdx> {
        self.index.get(peer).copied()
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Total events processed so far.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Sends an envelope from one node to another with the normal latency model.
    pub(crate) fn send(&mut self, from: NodeIdx, to: NodeIdx, env: Envelope) {
        let latency = self.latency();
        self.send_with_latency(from, to, env, latency);
    }

    /// Sends an envelope with an explicit latency. Intended for tests of the
    /// event loop itself.
    pub fn send_with_latency(
        &mut self,
        from: NodeIdx,
        to: NodeIdx,
        env: Envelope,
        latency: Duration,
    ) {
        let mut env = env;
        if env.kind == MessageKind::HaveBlock && self.faults.corrupt_next_block {
            self.faults.corrupt_next_block = false;
            match env.payload.last_mut() {
                Some(byte) => *byte ^= 0xff,
                None => env.payload.push(0xff),
            }
        }
        let bytes = env.encode();
        let to_id = self.nodes[to].id();
        self.nodes[from]
            .ledger
            .record_sent(to_id, bytes.len() as u64, self.now);
        if self.faults.drop_next_message {
            self.faults.drop_next_message = false;
            self.dropped += 1;
            return;
        }
        let at = self.now + latency;
        self.push(at, from, to, Payload::Message(bytes));
    }

    /// Fault hook: the next message sent is lost in transit.
    pub fn inject_drop_next_message(&mut self) {
        self.faults.drop_next_message = true;
    }

    /// Fault hook: the next block sent in reply to a want has a corrupted byte.
    pub fn inject_corrupt_next_block(&mut self) {
        self.faults.corrupt_next_block = true;
    }

    fn log(&mut self, ev: &Event, kind: u8, size: u64) {
        let from = self.nodes[ev.from].id().to_raw();
        let to = self.nodes[ev.to].id().to_raw();
        self.trace.update(ev.at.as_millis().to_be_bytes());
        self.trace.update(from);
        self.trace.update(to);
        self.trace.update([kind]);
        self.trace.update(size.to_be_bytes());
    }

    /// Processes the earliest pending event. Returns false when none remain.
    fn step(&mut self) -> bool {
        let Some(Reverse(ev)) = self.queue.pop() else {
            return false;
        };
        debug_assert!(ev.at >= self.last_processed_at, "clock went backwards");
        self.now = self.now.max(ev.at);
        self.last_processed_at = ev.at;
        self.processed += 1;
        match &ev.payload {
            Payload::Connect => {
                self.log(&ev, 0, 0);
                if self.nodes[ev.to].is_online() && self.nodes[ev.from].is_online() {
                    let (from_addr, to_addr) =
                        (self.nodes[ev.from].addr(), self.nodes[ev.to].addr());
                    let now = self.now;
                    self.nodes[ev.from].on_connected(to_addr, false, now);
                    self.nodes[ev.to].on_connected(from_addr, true, now);
                }
            }
            Payload::Message(bytes) => {
                self.log(&ev, bytes[0], bytes.len() as u64);
                if !self.nodes[ev.to].is_online() {
                    self.dropped += 1;
                    return true;
                }
                let from_id = self.nodes[ev.from].id();
                self.nodes[ev.to]
                    .ledger
                    .record_received(from_id, bytes.len() as u64, self.now);
                let Ok(env) = Envelope::decode(bytes) else {
                    return true;
                };
                if env.kind.is_request() {
                    let from_addr = self.nodes[ev.from].addr();
                    let now = self.now;
                    if let Some(reply) = self.nodes[ev.to].handle_request(from_addr, &env, now) {
                        self.send(ev.to, ev.from, reply);
                    }
                } else {
                    self.route_reply(ev.from, ev.to, env);
                }
            }
        }
        true
    }

    fn route_reply(&mut self, from: NodeIdx, to: NodeIdx, env: Envelope) {
        let request = match env.kind {
            MessageKind::HaveBlock | MessageKind::DontHave => MessageKind::Want,
            MessageKind::AddProviderAck => MessageKind::AddProvider,
            MessageKind::Peers => {
                if self
                    .outstanding
                    .contains(&(to, from, env.key, MessageKind::FindProviders))
                {
                    MessageKind::FindProviders
                } else {
                    MessageKind::FindNode
                }
            }
            _ => return,
        };
        // Replies nobody is waiting for any more are discarded.
        if self.outstanding.remove(&(to, from, env.key, request)) {
            self.inbox.push(Reply { to, from, env });
        }
    }

    /// Processes every event due at or before `until`, then sets the clock to `until`.
    fn run_until(&mut self, until: SimTime) {
        while let Some(Reverse(ev)) = self.queue.peek() {
            if ev.at > until {
                break;
            }
            self.step();
        }
        self.now = self.now.max(until);
    }

    /// Processes every pending event regardless of time.
    pub fn drain(&mut self) -> u64 {
        let before = self.processed;
        while self.step() {}
        self.processed - before
    }

    /// Steps until `done` holds or no event is due before `deadline`.
    /// On timeout the clock is moved to `deadline`.
    fn wait_until<F>(&mut self, deadline: SimTime, mut done: F) -> bool
    where
        F: FnMut(&Simulation) -> bool,
    {
        loop {
            if done(self) {
                return true;
            }
            match self.queue.peek() {
                Some(Reverse(ev)) if ev.at <= deadline => {
                    self.step();
                }
                _ => {
                    self.now = self.now.max(deadline);
                    return done(self);
                }
            }
        }
    }

    /// Connects `from` to each target, in parallel. Returns the targets that
    /// ended up connected.
    fn dial_many(&mut self, from: NodeIdx, targets: &[NodeIdx]) -> Vec<NodeIdx> {
        let mut waiting = Vec::new();
        let mut offline_until = self.now;
        for &to in targets {
            if to == from || self.nodes[from].is_connected(&self.nodes[to].id()) {
                continue;
            }
            if self.nodes[to].is_online() {
                waiting.push(self.enqueue_connect(from, to));
            } else {
                // A dial to a dead peer still burns one latency sample.
                let t = self.now + self.latency();
                offline_until = offline_until.max(t);
            }
        }
        if let Some(&last) = waiting.iter().max() {
            self.run_until(last);
        }
        if offline_until > self.now {
            self.run_until(offline_until);
        }
        let from_node = &self.nodes[from];
        targets
            .iter()
            .copied()
            .filter(|&to| to == from || from_node.is_connected(&self.nodes[to].id()))
            .collect()
    }

    pub fn dial(&mut self, from: NodeIdx, to: NodeIdx) -> Result<(), SimError> {
        if self.dial_many(from, &[to]).is_empty() {
            Err(SimError::Unreachable(self.nodes[to].id()))
        } else {
            Ok(())
        }
    }

    fn take_reply(&mut self, to: NodeIdx, from: NodeIdx, key: &[u8; 34]) -> Option<Envelope> {
        let pos = self
            .inbox
            .iter()
            .position(|r| r.to == to && r.from == from && &r.env.key == key)?;
        Some(self.inbox.remove(pos).env)
    }

    fn has_reply(&self, to: NodeIdx, from: NodeIdx, key: &[u8; 34]) -> bool {
        self.inbox
            .iter()
            .any(|r| r.to == to && r.from == from && &r.env.key == key)
    }

    fn request(&mut self, from: NodeIdx, to: NodeIdx, env: Envelope) {
        self.outstanding.insert((from, to, env.key, env.kind));
        self.send(from, to, env);
    }

    fn abandon(&mut self, from: NodeIdx, to: NodeIdx, key: &[u8; 34], kind: MessageKind) {
        self.outstanding.remove(&(from, to, *key, kind));
    }

    /// Advances simulated time, processing due events and periodic work
    /// (garbage collection, provider republishing). Returns the number of
    /// events processed.
    pub fn advance(&mut self, duration: Duration) -> u64 {
        let before = self.processed;
        let target = self.now + duration;
        loop {
            let next_event = self.queue.peek().map(|Reverse(e)| e.at);
            let next_timer = self.next_timer();
            match (next_event, next_timer) {
                (Some(e), t) if e <= target && t.map_or(true, |(t, _)| e <= t) => {
                    self.step();
                }
                (_, Some((t, timer))) if t <= target => {
                    self.now = self.now.max(t);
                    self.fire(timer);
                }
                _ => break,
            }
        }
        self.now = self.now.max(target);
        self.processed - before
    }

    fn next_timer(&self) -> Option<(SimTime, Timer)> {
        let gc = self.next_gc.map(|t| (t, Timer::Gc));
        let republish = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_online())
            .filter_map(|(i, n)| n.next_republish.map(|t| (t, Timer::Republish(i))))
            .min();
        match (gc, republish) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn fire(&mut self, timer: Timer) {
        match timer {
            Timer::Gc => {
                let now = self.now;
                for node in self.nodes.iter_mut().filter(|n| n.is_online()) {
                    node.run_gc(now);
                    node.providers.prune(now);
                }
                self.next_gc = self.config.gc_interval.map(|d| now + d);
            }
            Timer::Republish(idx) => {
                self.nodes[idx].next_republish = None;
                self.republish(idx);
            }
        }
    }

    /// Garbage-collects one node at the current time.
    pub fn run_gc(&mut self, idx: NodeIdx) -> Vec<Cid> {
        let now = self.now;
        self.nodes[idx].run_gc(now)
    }

    /// Takes a node off the network. In-flight traffic is delivered first and
    /// all of its connections are closed.
    pub fn leave(&mut self, idx: NodeIdx) {
        self.drain();
        self.nodes[idx].online = false;
        let id = self.nodes[idx].id();
        let peers: Vec<PeerId> = self.nodes[idx].connections().copied().collect();
        for p in peers {
            if let Some(j) = self.idx_of(&p) {
                self.nodes[j].on_disconnected(&id);
            }
            self.nodes[idx].on_disconnected(&p);
        }
    }

    /// SHA-256 over the ordered log of processed events.
    pub fn trace_hash(&self) -> Digest {
        Digest::from_bytes(self.trace.clone().finalize().into())
    }

    pub fn stats(&self) -> SimStats {
        SimStats {
            events: self.processed,
            bytes_sent: self.nodes.iter().map(|n| n.ledger().total_sent()).sum(),
            bytes_received: self.nodes.iter().map(|n| n.ledger().total_received()).sum(),
            dropped: self.dropped,
        }
    }

    /// Bandwidth of every node summed per second, from 0 through the current second.
    pub fn bandwidth_report(&self) -> Vec<BandwidthSample> {
        let end = self.now.as_secs() + 1;
        let reports: Vec<Vec<BandwidthSample>> = self
            .nodes
            .iter()
            .map(|n| n.ledger().report(0..end))
            .collect();
        merge_reports(reports.iter().map(Vec::as_slice))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Timer {
    Gc,
    Republish(NodeIdx),
}

/// Free-function form of [`Simulation::trace_hash`].
pub fn trace_hash(sim: &Simulation) -> Digest {
    sim.trace_hash()
}
