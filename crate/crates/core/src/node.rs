//! A single peer's local state: blocks, pins, DHT tables, bandwidth.
//!
//! Everything here is synchronous and network-free. Operations that need
//! other peers (publishing, fetching) are driven by [`crate::sim::Simulation`],
//! which calls into the request handler below when messages arrive.

use std::collections::{BTreeSet, HashSet};
use std::net::Ipv4Addr;
use std::time::Duration;

use crate::cid::Cid;
use crate::clock::{hours, SimTime};
use crate::dag::{self, build_dag, Block, BlockStore, Dag, DagError, DagNode};
use crate::dht::{
    DhtKey, DhtRole, ProviderRecord, ProviderStore, Role, RoutingTable, K, PROVIDER_TTL,
};
use crate::exchange::{BandwidthLedger, Envelope, MessageKind, WantList};
use crate::peer::{Multiaddr, PeerId};
use crate::wire::PeersReply;

pub const DEFAULT_GC_TTL: Duration = hours(12);

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub seed: [u8; 32],
    pub ip: Ipv4Addr,
    pub port: u16,
    pub gc_ttl: Duration,
    pub bootstrap: Vec<Multiaddr>,
}

impl NodeConfig {
    pub fn new(seed: [u8; 32], ip: Ipv4Addr, port: u16) -> Self {
        NodeConfig {
            seed,
            ip,
            port,
            gc_ttl: DEFAULT_GC_TTL,
            bootstrap: Vec::new(),
        }
    }

    pub fn listen(&self) -> Multiaddr {
        Multiaddr::new(self.ip, self.port, PeerId::from_seed(&self.seed))
    }
}

/// Pinned roots plus every block reachable from them.
#[derive(Debug, Clone, Default)]
pub struct PinSet {
    pinned: BTreeSet<Cid>,
    closure: HashSet<Cid>,
}

impl PinSet {
    pub fn is_pinned_root(&self, cid: &Cid) -> bool {
        self.pinned.contains(cid)
    }

    /// True when `cid` is a pinned root or linked from one.
    pub fn protects(&self, cid: &Cid) -> bool {
        self.closure.contains(cid)
    }

    pub fn roots(&self) -> impl Iterator<Item = &Cid> {
        self.pinned.iter()
    }

    fn recompute(&mut self, store: &BlockStore) {
        self.closure = self
            .pinned
            .iter()
            .flat_map(|root| dag::closure(root, store))
            .collect();
    }
}

#[derive(Debug)]
pub struct Node {
    id: PeerId,
    addr: Multiaddr,
    gc_ttl: Duration,
    bootstrap: Vec<Multiaddr>,
    pub(crate) store: BlockStore,
    pub(crate) pins: PinSet,
    pub(crate) table: RoutingTable,
    pub(crate) role: DhtRole,
    pub(crate) providers: ProviderStore,
    pub(crate) ledger: BandwidthLedger,
    pub(crate) wants: WantList,
    pub(crate) connections: BTreeSet<PeerId>,
    /// Blocks this node announces as a provider.
    pub(crate) provided: BTreeSet<Cid>,
    pub(crate) next_republish: Option<SimTime>,
    pub(crate) online: bool,
}

impl Node {
    pub fn new(config: NodeConfig) -> Self {
        assert!(!config.gc_ttl.is_zero(), "gc ttl must be positive");
        let addr = config.listen();
        Node {
            id: addr.peer,
            addr,
            gc_ttl: config.gc_ttl,
            bootstrap: config.bootstrap,
            store: BlockStore::new(),
            pins: PinSet::default(),
            table: RoutingTable::new(addr.peer),
            role: DhtRole::new(),
            providers: ProviderStore::default(),
            ledger: BandwidthLedger::default(),
            wants: WantList::default(),
            connections: BTreeSet::new(),
            provided: BTreeSet::new(),
            next_republish: None,
            online: true,
        }
    }

    pub fn id(&self) -> PeerId {
        self.id
    }

    pub fn addr(&self) -> Multiaddr {
        self.addr
    }

    pub fn bootstrap(&self) -> &[Multiaddr] {
        &self.bootstrap
    }

    pub fn gc_ttl(&self) -> Duration {
        self.gc_ttl
    }

    pub fn set_gc_ttl(&mut self, ttl: Duration) {
        assert!(!ttl.is_zero(), "gc ttl must be positive");
        self.gc_ttl = ttl;
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub fn pins(&self) -> &PinSet {
        &self.pins
    }

    pub fn table(&self) -> &RoutingTable {
        &self.table
    }

    pub fn role(&self) -> Role {
        self.role.role()
    }

    pub fn dht_role(&self) -> &DhtRole {
        &self.role
    }

    /// Test fixture hook: make this node a DHT server regardless of inbound count.
    pub fn force_server(&mut self) {
        self.role.force_server();
    }

    pub fn provider_store(&self) -> &ProviderStore {
        &self.providers
    }

    pub fn ledger(&self) -> &BandwidthLedger {
        &self.ledger
    }

    pub fn connections(&self) -> impl Iterator<Item = &PeerId> {
        self.connections.iter()
    }

    pub fn is_connected(&self, peer: &PeerId) -> bool {
        self.connections.contains(peer)
    }

    pub fn is_online(&self) -> bool {
        self.online
    }

    pub fn provided(&self) -> impl Iterator<Item = &Cid> {
        self.provided.iter()
    }

    /// Builds and stores the DAG for `data` and pins its root.
    pub fn add_local(&mut self, data: &[u8], now: SimTime) -> Result<Dag, DagError> {
        let dag = build_dag(data)?;
        for block in &dag.blocks {
            self.store.put_block(block.clone(), now);
        }
        self.pins.pinned.insert(dag.root);
        self.pins.recompute(&self.store);
        Ok(dag)
    }

    /// Reassembles locally held content, refreshing access times.
    pub fn cat_local(&self, root: &Cid, now: SimTime) -> Result<Vec<u8>, DagError> {
        for cid in dag::closure(root, &self.store) {
            if self.store.has(&cid) {
                self.store.get(&cid, now)?;
            }
        }
        dag::assemble(root, &self.store)
    }

    /// Children of `root` that are not stored here. `None` if the root itself is absent.
    pub fn missing_children(&self, root: &Cid) -> Option<Vec<Cid>> {
        let block = self.store.peek(root)?;
        match DagNode::decode(block.data()) {
            Ok(DagNode::Branch { links, .. }) => Some(
                links
                    .iter()
                    .map(|l| l.cid)
                    .filter(|c| !self.store.has(c))
                    .collect(),
            ),
            _ => Some(Vec::new()),
        }
    }

    /// Pins a DAG that is already fully present.
    pub fn pin_local(&mut self, root: &Cid) -> Result<(), DagError> {
        match self.missing_children(root) {
            None => return Err(DagError::MissingBlock(*root)),
            Some(missing) if !missing.is_empty() => return Err(DagError::MissingBlock(missing[0])),
            Some(_) => {}
        }
        self.pins.pinned.insert(*root);
        self.pins.recompute(&self.store);
        Ok(())
    }

    pub fn unpin(&mut self, root: &Cid) {
        if self.pins.pinned.remove(root) {
            self.pins.recompute(&self.store);
        }
    }

    /// Deletes unpinned blocks idle for longer than the gc ttl.
    pub fn run_gc(&mut self, now: SimTime) -> Vec<Cid> {
        let ttl = self.gc_ttl;
        let pins = &self.pins;
        let evicted = self
            .store
            .retain_by(|cid, last| !pins.protects(cid) && now.saturating_since(last) > ttl);
        for cid in &evicted {
            self.provided.remove(cid);
        }
        evicted
    }

    pub fn store_provider(&mut self, rec: ProviderRecord) -> bool {
        if !self.role.is_server() {
            return false;
        }
        self.providers.insert(rec);
        true
    }

    pub fn local_providers(&self, cid: &Cid, now: SimTime) -> Vec<ProviderRecord> {
        self.providers.get(cid, now)
    }

    /// Answers a want: the block if held here, otherwise a refusal.
    pub fn serve_want(&self, cid: &Cid, now: SimTime) -> Envelope {
        match self.store.get(cid, now) {
            Ok(block) => Envelope::have_block(cid, block.into_data()),
            Err(_) => Envelope::dont_have(cid),
        }
    }

    pub(crate) fn cache_block(&mut self, block: Block, now: SimTime) {
        self.store.put_block(block, now);
        // A new branch can complete the closure of an existing pin.
        if !self.pins.pinned.is_empty() {
            self.pins.recompute(&self.store);
        }
    }

    pub(crate) fn on_connected(&mut self, peer: Multiaddr, inbound: bool, now: SimTime) {
        self.connections.insert(peer.peer);
        self.table.insert(peer, now);
        if inbound {
            self.role.record_inbound(peer.peer);
        }
    }

    pub(crate) fn on_disconnected(&mut self, peer: &PeerId) {
        self.connections.remove(peer);
        self.table.remove(peer);
    }

    /// Handles an incoming request and produces the reply, if any.
    pub(crate) fn handle_request(
        &mut self,
        from: Multiaddr,
        env: &Envelope,
        now: SimTime,
    ) -> Option<Envelope> {
        self.table.insert(from, now);
        let cid = env.cid()?;
        match env.kind {
            MessageKind::Want => Some(self.serve_want(&cid, now)),
            MessageKind::FindNode | MessageKind::FindProviders => {
                let key = DhtKey::for_cid(&cid);
                let closer = self
                    .table
                    .closest_peers(&key, K)
                    .into_iter()
                    .filter(|a| a.peer != from.peer)
                    .collect();
                let providers = if env.kind == MessageKind::FindProviders {
                    self.local_providers(&cid, now)
                } else {
                    Vec::new()
                };
                let reply = PeersReply {
                    role: self.role(),
                    closer,
                    providers,
                };
                Some(Envelope::new(MessageKind::Peers, &cid, reply.encode()))
            }
            MessageKind::AddProvider => {
                let accepted = Multiaddr::from_wire(&env.payload).is_some_and(|addr| {
                    self.store_provider(ProviderRecord {
                        cid,
                        provider: addr.peer,
                        addr,
                        published_at: now,
                        ttl: PROVIDER_TTL,
                    })
                });
                Some(Envelope::new(
                    MessageKind::AddProviderAck,
                    &cid,
                    vec![accepted as u8],
                ))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::peer::generate_peer;

    fn node() -> Node {
        Node::new(NodeConfig::new([1; 32], Ipv4Addr::LOCALHOST, 4001))
    }

    const SECOND: Duration = Duration::from_secs(1);

    #[test]
    fn add_then_local_cat() {
        let mut n = node();
        let data = vec![9u8; 600_000];
        let dag = n.add_local(&data, SimTime::ZERO).unwrap();
        assert_eq!(n.cat_local(&dag.root, SimTime::ZERO).unwrap(), data);
        assert!(n.pins().is_pinned_root(&dag.root));
        for b in &dag.blocks {
            assert!(n.pins().protects(&b.cid()));
        }
        assert_eq!(n.add_local(&data, SimTime::ZERO).unwrap().root, dag.root);
    }

    #[test]
    fn gc_threshold_is_strict() {
        let mut n = node();
        let block = Block::new(b"cached".to_vec());
        let cid = block.cid();
        n.cache_block(block, SimTime::ZERO);
        let limit = SimTime::ZERO + DEFAULT_GC_TTL;
        assert!(n
            .run_gc(SimTime::from_hours(11) + Duration::from_secs(59 * 60))
            .is_empty());
        assert!(n.run_gc(limit).is_empty());
        assert_eq!(n.run_gc(limit + SECOND), vec![cid]);
        assert!(!n.store().has(&cid));
    }

    #[test]
    fn pinned_content_survives_gc() {
        let mut n = node();
        let dag = n.add_local(&vec![3u8; 700_000], SimTime::ZERO).unwrap();
        assert!(n.run_gc(SimTime::from_hours(1000)).is_empty());
        n.unpin(&dag.root);
        n.unpin(&dag.root);
        let evicted = n.run_gc(SimTime::from_hours(1000));
        let distinct: std::collections::BTreeSet<_> = dag.blocks.iter().map(|b| b.cid()).collect();
        assert_eq!(evicted.len(), distinct.len());
    }

    #[test]
    fn unpin_unknown_is_noop() {
        let mut n = node();
        n.unpin(&Cid::from_bytes(b"never"));
        assert_eq!(n.pins().roots().count(), 0);
    }

    #[test]
    fn pin_requires_local_dag() {
        let mut n = node();
        assert!(matches!(
            n.pin_local(&Cid::from_bytes(b"nope")),
            Err(DagError::MissingBlock(_))
        ));
        let dag = build_dag(&vec![1u8; 600_000]).unwrap();
        n.cache_block(dag.blocks.last().unwrap().clone(), SimTime::ZERO);
        assert_eq!(
            n.pin_local(&dag.root),
            Err(DagError::MissingBlock(dag.blocks[0].cid()))
        );
    }

    #[test]
    fn access_refresh_defers_eviction() {
        let mut n = node();
        let block = Block::new(b"touch".to_vec());
        let cid = block.cid();
        n.cache_block(block, SimTime::ZERO);
        n.cat_local(&cid, SimTime::from_hours(10)).ok();
        assert!(n.run_gc(SimTime::from_hours(13)).is_empty());
        assert_eq!(n.run_gc(SimTime::from_hours(22) + SECOND), vec![cid]);
    }

    #[test]
    fn clients_refuse_provider_records() {
        let mut n = node();
        let p = generate_peer(&[2; 32]);
        let rec = ProviderRecord {
            cid: Cid::from_bytes(b"c"),
            provider: p,
            addr: Multiaddr::new(Ipv4Addr::LOCALHOST, 1, p),
            published_at: SimTime::ZERO,
            ttl: PROVIDER_TTL,
        };
        assert!(!n.store_provider(rec));
        assert!(n.local_providers(&rec.cid, SimTime::ZERO).is_empty());
        n.force_server();
        assert!(n.store_provider(rec));
        assert_eq!(n.local_providers(&rec.cid, SimTime::ZERO), vec![rec]);
    }

    #[test]
    fn serve_want_answers() {
        let mut n = node();
        let dag = n.add_local(b"block bytes", SimTime::ZERO).unwrap();
        let have = n.serve_want(&dag.root, SimTime::ZERO);
        assert_eq!(have.kind, MessageKind::HaveBlock);
        assert_eq!(have.payload, dag.blocks[0].data());
        let absent = n.serve_want(&Cid::from_bytes(b"absent"), SimTime::ZERO);
        assert_eq!(absent.kind, MessageKind::DontHave);
    }
}
