//! Kademlia-style routing state: keys, xor distance, k-buckets, provider
//! records, the Client/Server role rule and the iterative lookup driver.
//!
//! Message transport lives in [`crate::sim`]; this module is pure state.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Duration;

use serde::Serialize;

use crate::cid::{digest, Cid};
use crate::clock::{hours, SimTime};
use crate::peer::{Multiaddr, PeerId};

/// Bucket capacity and replication factor.
pub const K: usize = 20;
/// Lookup parallelism.
pub const ALPHA: usize = 3;
/// Distinct inbound peers needed before a node serves the DHT.
pub const SERVER_THRESHOLD: usize = 4;
pub const PROVIDER_TTL: Duration = hours(24);
pub const REPUBLISH_INTERVAL: Duration = hours(12);
pub const BUCKETS: usize = 256;

/// 256-bit position in the keyspace.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct DhtKey(pub [u8; 32]);

impl DhtKey {
    pub fn for_cid(cid: &Cid) -> Self {
        DhtKey(*digest(&cid.to_raw()).as_bytes())
    }

    pub fn for_peer(peer: &PeerId) -> Self {
        DhtKey(*digest(&peer.to_raw()).as_bytes())
    }
}

/// Xor distance, ordered as a big-endian unsigned integer.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Distance(pub [u8; 32]);

impl Distance {
    pub const ZERO: Distance = Distance([0; 32]);

    /// Number of leading zero bits (256 for zero distance).
    pub fn leading_zeros(&self) -> usize {
        for (i, byte) in self.0.iter().enumerate() {
            if *byte != 0 {
                return i * 8 + byte.leading_zeros() as usize;
            }
        }
        256
    }
}

pub fn xor_distance(a: &DhtKey, b: &DhtKey) -> Distance {
    let mut out = [0u8; 32];
    for (o, (x, y)) in out.iter_mut().zip(a.0.iter().zip(b.0.iter())) {
        *o = x ^ y;
    }
    Distance(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingEntry {
    pub addr: Multiaddr,
    pub last_seen: SimTime,
}

impl RoutingEntry {
    pub fn peer(&self) -> PeerId {
        self.addr.peer
    }
}

/// k-bucket routing table indexed by shared-prefix length with the owner.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    owner: PeerId,
    owner_key: DhtKey,
    buckets: Vec<Vec<RoutingEntry>>,
}

impl RoutingTable {
    pub fn new(owner: PeerId) -> Self {
        RoutingTable {
            owner,
            owner_key: DhtKey::for_peer(&owner),
            buckets: vec![Vec::new(); BUCKETS],
        }
    }

    pub fn owner(&self) -> PeerId {
        self.owner
    }

    pub fn bucket_index(&self, peer: &PeerId) -> usize {
        xor_distance(&self.owner_key, &DhtKey::for_peer(peer))
            .leading_zeros()
            .min(BUCKETS - 1)
    }

    /// Inserts or refreshes a peer. A full bucket drops its least recently
    /// seen entry. Returns false only for the owner itself.
    pub fn insert(&mut self, addr: Multiaddr, now: SimTime) -> bool {
        if addr.peer == self.owner {
            return false;
        }
        let idx = self.bucket_index(&addr.peer);
        let bucket = &mut self.buckets[idx];
        if let Some(pos) = bucket.iter().position(|e| e.peer() == addr.peer) {
            bucket.remove(pos);
        } else if bucket.len() >= K {
            // Entries are kept oldest first.
            bucket.remove(0);
        }
        bucket.push(RoutingEntry {
            addr,
            last_seen: now,
        });
        true
    }

    pub fn remove(&mut self, peer: &PeerId) {
        let idx = self.bucket_index(peer);
        self.buckets[idx].retain(|e| e.peer() != *peer);
    }

    pub fn contains(&self, peer: &PeerId) -> bool {
        self.buckets[self.bucket_index(peer)]
            .iter()
            .any(|e| e.peer() == *peer)
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> impl Iterator<Item = &RoutingEntry> {
        self.buckets.iter().flatten()
    }

    /// `(bucket index, entry)` pairs as stored.
    pub fn placements(&self) -> impl Iterator<Item = (usize, &RoutingEntry)> {
        self.buckets
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.iter().map(move |e| (i, e)))
    }

    /// The `n` known peers nearest `key`, ascending by distance, ties by id bytes.
    pub fn closest_peers(&self, key: &DhtKey, n: usize) -> Vec<Multiaddr> {
        closest_peers(self, key, n)
    }
}

pub fn closest_peers(table: &RoutingTable, key: &DhtKey, n: usize) -> Vec<Multiaddr> {
    let mut ranked: Vec<(Distance, [u8; 34], Multiaddr)> = table
        .entries()
        .map(|e| {
            let d = xor_distance(key, &DhtKey::for_peer(&e.peer()));
            (d, e.peer().to_raw(), e.addr)
        })
        .collect();
    ranked.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    ranked.truncate(n);
    ranked.into_iter().map(|(_, _, addr)| addr).collect()
}

/// Client/Server role with the inbound-connection upgrade rule.
#[derive(Debug, Clone, Default)]
pub struct DhtRole {
    inbound: BTreeSet<PeerId>,
    server: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    Client,
    Server,
}

impl DhtRole {
    pub fn new() -> Self {
        Self::default()
    }

    /// Notes an inbound connection. Upgrades are permanent.
    pub fn record_inbound(&mut self, from: PeerId) -> Role {
        self.inbound.insert(from);
        if self.inbound.len() >= SERVER_THRESHOLD {
            self.server = true;
        }
        self.role()
    }

    pub fn role(&self) -> Role {
        if self.server {
            Role::Server
        } else {
            Role::Client
        }
    }

    pub fn is_server(&self) -> bool {
        self.server
    }

    pub fn inbound_count(&self) -> usize {
        self.inbound.len()
    }

    /// Test fixture hook: promote without inbound connections.
    pub fn force_server(&mut self) {
        self.server = true;
    }
}

/// Free-function form of [`DhtRole::record_inbound`].
pub fn record_inbound(mut role: DhtRole, from: PeerId) -> DhtRole {
    role.record_inbound(from);
    role
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProviderRecord {
    pub cid: Cid,
    pub provider: PeerId,
    #[serde(serialize_with = "ser_addr")]
    pub addr: Multiaddr,
    #[serde(serialize_with = "ser_time")]
    pub published_at: SimTime,
    #[serde(serialize_with = "ser_ttl")]
    pub ttl: Duration,
}

fn ser_addr<S: serde::Serializer>(a: &Multiaddr, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&a.render())
}

fn ser_time<S: serde::Serializer>(t: &SimTime, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(t.as_millis())
}

fn ser_ttl<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(d.as_millis() as u64)
}

impl ProviderRecord {
    pub fn expires_at(&self) -> SimTime {
        self.published_at + self.ttl
    }

    pub fn is_expired(&self, now: SimTime) -> bool {
        now > self.expires_at()
    }
}

/// Provider records held by a server node.
#[derive(Debug, Clone, Default)]
pub struct ProviderStore {
    records: HashMap<Cid, BTreeMap<PeerId, ProviderRecord>>,
}

impl ProviderStore {
    pub fn insert(&mut self, rec: ProviderRecord) {
        self.records
            .entry(rec.cid)
            .or_default()
            .insert(rec.provider, rec);
    }

    /// Unexpired records for `cid`, ordered by provider id.
    pub fn get(&self, cid: &Cid, now: SimTime) -> Vec<ProviderRecord> {
        self.records
            .get(cid)
            .map(|m| m.values().filter(|r| !r.is_expired(now)).copied().collect())
            .unwrap_or_default()
    }

    pub fn prune(&mut self, now: SimTime) {
        self.records.retain(|_, m| {
            m.retain(|_, r| !r.is_expired(now));
            !m.is_empty()
        });
    }

    /// Total stored records, including expired ones not yet pruned.
    pub fn len(&self) -> usize {
        self.records.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum QueryState {
    NotQueried,
    InFlight,
    Responded,
    Failed,
}

#[derive(Debug, Clone)]
struct Candidate {
    addr: Multiaddr,
    state: QueryState,
    role: Option<Role>,
}

/// Iterative lookup toward a key.
///
/// Each round queries up to α of the k closest unqueried candidates. When a
/// round learns nothing closer than the best distance already known, the next
/// round queries every remaining unqueried candidate among the k closest. The
/// lookup ends once all of the k closest live candidates have responded.
#[derive(Debug, Clone)]
pub struct Lookup {
    target: DhtKey,
    origin: PeerId,
    candidates: BTreeMap<(Distance, [u8; 34]), Candidate>,
    best: Option<Distance>,
    best_before_round: Option<Distance>,
    rounds: usize,
    records: BTreeMap<PeerId, ProviderRecord>,
}

impl Lookup {
    pub fn new(origin: PeerId, target: DhtKey, seeds: impl IntoIterator<Item = Multiaddr>) -> Self {
        let mut lookup = Lookup {
            target,
            origin,
            candidates: BTreeMap::new(),
            best: None,
            best_before_round: None,
            rounds: 0,
            records: BTreeMap::new(),
        };
        for addr in seeds {
            lookup.learn(addr);
        }
        lookup
    }

    fn slot(&self, peer: &PeerId) -> (Distance, [u8; 34]) {
        (
            xor_distance(&self.target, &DhtKey::for_peer(peer)),
            peer.to_raw(),
        )
    }

    fn learn(&mut self, addr: Multiaddr) {
        if addr.peer == self.origin {
            return;
        }
        let slot = self.slot(&addr.peer);
        self.candidates.entry(slot).or_insert(Candidate {
            addr,
            state: QueryState::NotQueried,
            role: None,
        });
        if self.best.map_or(true, |b| slot.0 < b) {
            self.best = Some(slot.0);
        }
    }

    fn live_closest(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates
            .values()
            .filter(|c| c.state != QueryState::Failed)
            .take(K)
    }

    /// Peers to query next; empty when the lookup has converged.
    pub fn next_batch(&mut self) -> Vec<Multiaddr> {
        let in_flight = self
            .candidates
            .values()
            .any(|c| c.state == QueryState::InFlight);
        assert!(!in_flight, "previous round still in flight");
        let pending: Vec<Multiaddr> = self
            .live_closest()
            .filter(|c| c.state == QueryState::NotQueried)
            .map(|c| c.addr)
            .collect();
        if pending.is_empty() {
            return pending;
        }
        let improved = self.rounds == 0 || self.best < self.best_before_round;
        let batch: Vec<Multiaddr> = if improved {
            pending.into_iter().take(ALPHA).collect()
        } else {
            pending
        };
        for addr in &batch {
            let slot = self.slot(&addr.peer);
            self.candidates.get_mut(&slot).expect("candidate").state = QueryState::InFlight;
        }
        self.best_before_round = self.best;
        self.rounds += 1;
        batch
    }

    pub fn on_reply(
        &mut self,
        from: &PeerId,
        role: Role,
        closer: impl IntoIterator<Item = Multiaddr>,
        records: impl IntoIterator<Item = ProviderRecord>,
    ) {
        let slot = self.slot(from);
        if let Some(c) = self.candidates.get_mut(&slot) {
            c.state = QueryState::Responded;
            c.role = Some(role);
        }
        for addr in closer {
            self.learn(addr);
        }
        for rec in records {
            self.add_record(rec);
        }
    }

    /// Keeps the newest record per provider; records for other keys are ignored.
    pub fn add_record(&mut self, rec: ProviderRecord) {
        if DhtKey::for_cid(&rec.cid) != self.target {
            return;
        }
        match self.records.get(&rec.provider) {
            Some(existing) if existing.published_at >= rec.published_at => {}
            _ => {
                self.records.insert(rec.provider, rec);
            }
        }
    }

    pub fn on_failure(&mut self, peer: &PeerId) {
        let slot = self.slot(peer);
        if let Some(c) = self.candidates.get_mut(&slot) {
            c.state = QueryState::Failed;
        }
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Up to `n` responders that reported the Server role, closest first.
    pub fn closest_servers(&self, n: usize) -> Vec<Multiaddr> {
        self.candidates
            .values()
            .filter(|c| c.state == QueryState::Responded && c.role == Some(Role::Server))
            .take(n)
            .map(|c| c.addr)
            .collect()
    }

    /// Every responder, closest first.
    pub fn responders(&self) -> Vec<Multiaddr> {
        self.candidates
            .values()
            .filter(|c| c.state == QueryState::Responded)
            .map(|c| c.addr)
            .collect()
    }

    pub fn into_records(self) -> Vec<ProviderRecord> {
        self.records.into_values().collect()
    }

    pub fn records(&self) -> impl Iterator<Item = &ProviderRecord> {
        self.records.values()
    }

    pub fn target(&self) -> DhtKey {
        self.target
    }
}
