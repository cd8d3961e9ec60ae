//! Multi-peer operations: DHT lookups, provider publishing, block fetching
//! and the node-level add / cat / pin built on them.

use std::collections::BTreeSet;
use std::time::Duration;

use super::{NodeIdx, SimError, Simulation};
use crate::cid::Cid;
use crate::dag::{self, Block, DagNode};
use crate::dht::{xor_distance, DhtKey, Lookup, ProviderRecord, Role, K, REPUBLISH_INTERVAL};
use crate::exchange::{Envelope, MessageKind};
use crate::peer::{Multiaddr, PeerId};
use crate::wire::PeersReply;

/// Pause between provider searches while a fetch keeps coming up empty.
pub const RETRY_INTERVAL: Duration = Duration::from_secs(2);

/// Outcome of an iterative lookup.
#[derive(Debug, Clone)]
pub struct LookupReport {
    pub rounds: usize,
    /// Responders that reported the Server role, closest first.
    pub servers: Vec<Multiaddr>,
    pub records: Vec<ProviderRecord>,
}

impl Simulation {
    fn idx_of_addr(&self, addr: &Multiaddr) -> Option<NodeIdx> {
        self.idx_of(&addr.peer)
    }

    /// Runs an iterative lookup for `cid` from `origin`, asking each peer
    /// either for closer peers or for provider records.
    fn run_lookup(&mut self, origin: NodeIdx, cid: &Cid, kind: MessageKind) -> Lookup {
        let key = DhtKey::for_cid(cid);
        let seeds = self.nodes[origin].table().closest_peers(&key, K);
        let mut lookup = Lookup::new(self.nodes[origin].id(), key, seeds);
        if kind == MessageKind::FindProviders {
            let now = self.now;
            for rec in self.nodes[origin].local_providers(cid, now) {
                lookup.add_record(rec);
            }
        }
        loop {
            let batch = lookup.next_batch();
            if batch.is_empty() {
                break;
            }
            let mut targets = Vec::new();
            for addr in &batch {
                match self.idx_of_addr(addr) {
                    Some(i) => targets.push(i),
                    None => lookup.on_failure(&addr.peer),
                }
            }
            let connected = self.dial_many(origin, &targets);
            for &t in &targets {
                if !connected.contains(&t) {
                    lookup.on_failure(&self.nodes[t].id());
                }
            }
            let raw = cid.to_raw();
            for &t in &connected {
                self.request(origin, t, Envelope::new(kind, cid, Vec::new()));
            }
            let deadline = self.now + self.config.rpc_timeout;
            self.wait_until(deadline, |s| {
                connected.iter().all(|&t| s.has_reply(origin, t, &raw))
            });
            for &t in &connected {
                let peer = self.nodes[t].id();
                match self
                    .take_reply(origin, t, &raw)
                    .and_then(|e| PeersReply::decode(&e.payload, *cid))
                {
                    Some(reply) => {
                        lookup.on_reply(&peer, reply.role, reply.closer, reply.providers)
                    }
                    None => {
                        self.abandon(origin, t, &raw, kind);
                        lookup.on_failure(&peer);
                    }
                }
            }
        }
        lookup
    }

    /// Lookup for provider records, with round statistics.
    pub fn lookup(&mut self, origin: NodeIdx, cid: &Cid) -> LookupReport {
        let lookup = self.run_lookup(origin, cid, MessageKind::FindProviders);
        let now = self.now;
        LookupReport {
            rounds: lookup.rounds(),
            servers: lookup.closest_servers(K),
            records: lookup
                .into_records()
                .into_iter()
                .filter(|r| !r.is_expired(now))
                .collect(),
        }
    }

    /// Announces `origin` as a provider of `cid` on the k closest DHT servers.
    /// Returns the peers that stored the record.
    pub fn provide(&mut self, origin: NodeIdx, cid: &Cid) -> Result<Vec<PeerId>, SimError> {
        let lookup = self.run_lookup(origin, cid, MessageKind::FindNode);
        let key = DhtKey::for_cid(cid);
        let origin_addr = self.nodes[origin].addr();
        let mut ranked: Vec<Multiaddr> = lookup.closest_servers(K);
        if self.nodes[origin].role() == Role::Server {
            ranked.push(origin_addr);
            ranked.sort_by_key(|a| {
                (
                    xor_distance(&key, &DhtKey::for_peer(&a.peer)),
                    a.peer.to_raw(),
                )
            });
            ranked.truncate(K);
        }
        if ranked.is_empty() {
            return Err(SimError::NoServersReachable(*cid));
        }

        let now = self.now;
        let mut stored_at = Vec::new();
        let mut remote = Vec::new();
        for addr in &ranked {
            if addr.peer == origin_addr.peer {
                let rec = ProviderRecord {
                    cid: *cid,
                    provider: origin_addr.peer,
                    addr: origin_addr,
                    published_at: now,
                    ttl: crate::dht::PROVIDER_TTL,
                };
                if self.nodes[origin].store_provider(rec) {
                    stored_at.push(origin_addr.peer);
                }
            } else if let Some(i) = self.idx_of_addr(addr) {
                remote.push(i);
            }
        }
        let connected = self.dial_many(origin, &remote);
        let raw = cid.to_raw();
        for &t in &connected {
            let payload = origin_addr.to_wire().to_vec();
            self.request(
                origin,
                t,
                Envelope::new(MessageKind::AddProvider, cid, payload),
            );
        }
        let deadline = self.now + self.config.rpc_timeout;
        self.wait_until(deadline, |s| {
            connected.iter().all(|&t| s.has_reply(origin, t, &raw))
        });
        for &t in &connected {
            match self.take_reply(origin, t, &raw) {
                Some(ack) if ack.payload.first() == Some(&1) => stored_at.push(self.nodes[t].id()),
                Some(_) => {}
                None => self.abandon(origin, t, &raw, MessageKind::AddProvider),
            }
        }
        if stored_at.is_empty() {
            return Err(SimError::NoServersReachable(*cid));
        }
        let node = &mut self.nodes[origin];
        node.provided.insert(*cid);
        if node.next_republish.is_none() {
            node.next_republish = Some(self.now + REPUBLISH_INTERVAL);
        }
        Ok(stored_at)
    }

    /// Every unexpired provider record for `cid` reachable from `origin`.
    pub fn find_providers(&mut self, origin: NodeIdx, cid: &Cid) -> Vec<ProviderRecord> {
        self.lookup(origin, cid).records
    }

    pub(super) fn republish(&mut self, idx: NodeIdx) {
        let cids: Vec<Cid> = self.nodes[idx]
            .provided
            .iter()
            .copied()
            .filter(|c| self.nodes[idx].store().has(c))
            .collect();
        self.nodes[idx].provided.retain(|c| cids.contains(c));
        for cid in cids {
            // A transient lack of servers is retried at the next interval.
            let _ = self.provide(idx, &cid);
        }
        if self.nodes[idx].next_republish.is_none() && !self.nodes[idx].provided.is_empty() {
            self.nodes[idx].next_republish = Some(self.now + REPUBLISH_INTERVAL);
        }
    }

    /// Sends a want for `cid` to each of `peers` and waits for the first
    /// verified block. Peers that send corrupt bytes are added to `bad`.
    fn want_from(
        &mut self,
        origin: NodeIdx,
        cid: &Cid,
        peers: &[NodeIdx],
        deadline: crate::clock::SimTime,
        bad: &mut BTreeSet<NodeIdx>,
    ) -> Option<Block> {
        let raw = cid.to_raw();
        let mut waiting: Vec<NodeIdx> = Vec::new();
        for &p in peers {
            if self
                .outstanding
                .contains(&(origin, p, raw, MessageKind::Want))
            {
                continue;
            }
            self.request(origin, p, Envelope::want(cid));
            waiting.push(p);
        }
        let reply_deadline = deadline.min(self.now + self.config.rpc_timeout);
        let mut found = None;
        while !waiting.is_empty() && found.is_none() {
            let arrived = self.wait_until(reply_deadline, |s| {
                waiting.iter().any(|&p| s.has_reply(origin, p, &raw))
            });
            if !arrived {
                break;
            }
            let ready: Vec<NodeIdx> = waiting
                .iter()
                .copied()
                .filter(|&p| self.has_reply(origin, p, &raw))
                .collect();
            for p in ready {
                waiting.retain(|&w| w != p);
                let env = self.take_reply(origin, p, &raw).expect("reply present");
                if env.kind != MessageKind::HaveBlock || found.is_some() {
                    continue;
                }
                match Block::verified(*cid, env.payload) {
                    Ok(block) => found = Some(block),
                    Err(_) => {
                        bad.insert(p);
                    }
                }
            }
        }
        for p in waiting {
            self.abandon(origin, p, &raw, MessageKind::Want);
        }
        found
    }

    /// Obtains one block: local store, then connected peers, then providers
    /// found through the DHT. Fetched blocks are cached unpinned.
    pub fn fetch_block(
        &mut self,
        origin: NodeIdx,
        cid: &Cid,
        deadline: Duration,
    ) -> Result<Block, SimError> {
        let now = self.now;
        if let Ok(block) = self.nodes[origin].store().get(cid, now) {
            return Ok(block);
        }
        let deadline_at = self.now + deadline;
        self.nodes[origin].wants.insert(*cid, deadline_at);
        let result = self.fetch_remote(origin, cid, deadline_at);
        self.nodes[origin].wants.remove(cid);
        let block = result?;
        let now = self.now;
        self.nodes[origin].cache_block(block.clone(), now);
        Ok(block)
    }

    fn fetch_remote(
        &mut self,
        origin: NodeIdx,
        cid: &Cid,
        deadline_at: crate::clock::SimTime,
    ) -> Result<Block, SimError> {
        let mut bad = BTreeSet::new();
        let mut asked = BTreeSet::new();

        let connected: Vec<NodeIdx> = self.nodes[origin]
            .connections()
            .filter_map(|p| self.idx_of(p))
            .collect();
        asked.extend(connected.iter().copied());
        if let Some(block) = self.want_from(origin, cid, &connected, deadline_at, &mut bad) {
            return Ok(block);
        }

        while self.now < deadline_at {
            let providers: Vec<NodeIdx> = self
                .find_providers(origin, cid)
                .iter()
                .filter_map(|r| self.idx_of(&r.provider))
                .filter(|&i| i != origin && !bad.contains(&i) && !asked.contains(&i))
                .collect();
            for p in providers {
                if self.now >= deadline_at {
                    break;
                }
                asked.insert(p);
                if self.dial(origin, p).is_err() {
                    continue;
                }
                if let Some(block) = self.want_from(origin, cid, &[p], deadline_at, &mut bad) {
                    return Ok(block);
                }
            }
            let resume = deadline_at.min(self.now + RETRY_INTERVAL);
            self.run_until(resume);
        }
        match bad.iter().next() {
            Some(&p) => Err(SimError::IntegrityError {
                cid: *cid,
                peer: self.nodes[p].id(),
            }),
            None => Err(SimError::NotFoundAnywhere(*cid)),
        }
    }

    /// Stores `data` on `origin`, pins it and announces every block.
    ///
    /// A network without reachable DHT servers does not fail the add; the
    /// content stays local and is announced at the next republish.
    pub fn add(&mut self, origin: NodeIdx, data: &[u8]) -> Result<Cid, SimError> {
        let now = self.now;
        let dag = self.nodes[origin].add_local(data, now)?;
        self.announce(origin, dag.blocks.iter().map(Block::cid));
        Ok(dag.root)
    }

    fn announce(&mut self, origin: NodeIdx, cids: impl IntoIterator<Item = Cid>) {
        let mut cids: Vec<Cid> = cids.into_iter().collect();
        // Root first: it is what retrievers look up.
        cids.reverse();
        for cid in cids {
            if self.provide(origin, &cid).is_err() {
                let node = &mut self.nodes[origin];
                node.provided.insert(cid);
                if node.next_republish.is_none() {
                    node.next_republish = Some(self.now + REPUBLISH_INTERVAL);
                }
            }
        }
    }

    /// Retrieves and verifies the content under `root`. Content fetched from
    /// the network is cached unpinned and this node then announces itself as
    /// a provider of every block it fetched.
    pub fn cat(
        &mut self,
        origin: NodeIdx,
        root: &Cid,
        deadline: Duration,
    ) -> Result<Vec<u8>, SimError> {
        let now = self.now;
        if self.nodes[origin]
            .missing_children(root)
            .is_some_and(|m| m.is_empty())
        {
            return Ok(self.nodes[origin].cat_local(root, now)?);
        }
        let deadline_at = self.now + deadline;
        let mut fetched = Vec::new();
        if !self.nodes[origin].store().has(root) {
            self.fetch_block(origin, root, deadline)?;
            fetched.push(*root);
        }
        let block = self.nodes[origin]
            .store()
            .peek(root)
            .ok_or(SimError::NotFoundAnywhere(*root))?;
        if let DagNode::Branch { links, .. } =
            DagNode::decode(block.data()).map_err(SimError::Dag)?
        {
            for link in links {
                if self.nodes[origin].store().has(&link.cid) {
                    continue;
                }
                let remaining = deadline_at.saturating_since(self.now);
                if remaining.is_zero() {
                    return Err(SimError::NotFoundAnywhere(link.cid));
                }
                self.fetch_block(origin, &link.cid, remaining)?;
                fetched.push(link.cid);
            }
        }
        let now = self.now;
        let data = self.nodes[origin].cat_local(root, now)?;
        self.announce(origin, fetched.into_iter().rev());
        Ok(data)
    }

    /// Pins `root` on `origin`, fetching the DAG first when needed.
    pub fn pin(&mut self, origin: NodeIdx, root: &Cid, deadline: Duration) -> Result<(), SimError> {
        if !self.nodes[origin]
            .missing_children(root)
            .is_some_and(|m| m.is_empty())
        {
            self.cat(origin, root, deadline)?;
        }
        self.nodes[origin].pin_local(root)?;
        Ok(())
    }

    pub fn unpin(&mut self, origin: NodeIdx, root: &Cid) {
        self.nodes[origin].unpin(root);
    }

    /// True when `origin` holds `root` and everything it links to.
    pub fn has_dag(&self, origin: NodeIdx, root: &Cid) -> bool {
        self.nodes[origin]
            .missing_children(root)
            .is_some_and(|m| m.is_empty())
    }

    /// Local reassembly only, without touching the network.
    pub fn read_local(&self, origin: NodeIdx, root: &Cid) -> Option<Vec<u8>> {
        dag::assemble(root, self.nodes[origin].store()).ok()
    }
}
