//! Fixed-size chunking, the canonical node encoding and the block store.
//!
//! Content is split into 256 KiB chunks. A single chunk becomes one leaf
//! block; anything larger becomes a set of leaves plus one branch node
//! linking them in order. Only one level of branching is supported.
//!
//! Node encoding:
//!
//! ```text
//! leaf:   0x00 <raw bytes>
//! branch: 0x01 <u32 link count> { <34-byte cid> <u64 child size> }* <u64 total size>
//! ```
//!
//! All integers are big-endian.

use std::collections::HashMap;

use parking_lot::RwLock;
use thiserror::Error;

use crate::cid::{Cid, MULTIHASH_LEN};
use crate::clock::SimTime;

pub const DEFAULT_CHUNK_SIZE: usize = 262_144;
/// Maximum number of leaves under one branch node.
pub const MAX_LINKS: usize = 174;
/// Largest object [`build_dag`] accepts.
pub const MAX_OBJECT_SIZE: usize = DEFAULT_CHUNK_SIZE * MAX_LINKS;

const LEAF_TAG: u8 = 0x00;
const BRANCH_TAG: u8 = 0x01;
const LINK_LEN: usize = MULTIHASH_LEN + 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("object of {size} bytes exceeds the {max}-byte limit")]
    TooLarge { size: usize, max: usize },
    #[error("block {0} not found")]
    NotFound(Cid),
    #[error("block {0} missing while assembling")]
    MissingBlock(Cid),
    #[error("block {0} failed integrity check")]
    IntegrityError(Cid),
    #[error("malformed node encoding: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub cid: Cid,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DagNode {
    Leaf(Vec<u8>),
    Branch { links: Vec<Link>, total_size: u64 },
}

impl DagNode {
    pub fn branch(links: Vec<Link>) -> Self {
        let total_size = links.iter().map(|l| l.size).sum();
        DagNode::Branch { links, total_size }
    }

    pub fn total_size(&self) -> u64 {
        match self {
            DagNode::Leaf(data) => data.len() as u64,
            DagNode::Branch { total_size, .. } => *total_size,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            DagNode::Leaf(data) => {
                let mut out = Vec::with_capacity(1 + data.len());
                out.push(LEAF_TAG);
                out.extend_from_slice(data);
                out
            }
            DagNode::Branch { links, total_size } => {
                let mut out = Vec::with_capacity(1 + 4 + links.len() * LINK_LEN + 8);
                out.push(BRANCH_TAG);
                out.extend_from_slice(&(links.len() as u32).to_be_bytes());
                for link in links {
                    out.extend_from_slice(&link.cid.to_raw());
                    out.extend_from_slice(&link.size.to_be_bytes());
                }
                out.extend_from_slice(&total_size.to_be_bytes());
                out
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DagError> {
        let (&tag, rest) = bytes
            .split_first()
            .ok_or(DagError::Malformed("empty node"))?;
        match tag {
            LEAF_TAG => Ok(DagNode::Leaf(rest.to_vec())),
            BRANCH_TAG => {
                if rest.len() < 12 {
                    return Err(DagError::Malformed("truncated branch"));
                }
                let count = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
                let body = &rest[4..];
                if body.len() != count * LINK_LEN + 8 {
                    return Err(DagError::Malformed("branch length mismatch"));
                }
                let links = body[..count * LINK_LEN]
                    .chunks_exact(LINK_LEN)
                    .map(|chunk| {
                        let cid = Cid::from_raw(&chunk[..MULTIHASH_LEN])
                            .map_err(|_| DagError::Malformed("bad link cid"))?;
                        let size = u64::from_be_bytes(chunk[MULTIHASH_LEN..].try_into().unwrap());
                        Ok(Link { cid, size })
                    })
                    .collect::<Result<Vec<_>, DagError>>()?;
                let total_size = u64::from_be_bytes(body[count * LINK_LEN..].try_into().unwrap());
                if links.iter().map(|l| l.size).sum::<u64>() != total_size {
                    return Err(DagError::Malformed("total size does not match links"));
                }
                Ok(DagNode::Branch { links, total_size })
            }
            _ => Err(DagError::Malformed("unknown node tag")),
        }
    }
}

/// A stored unit of content, addressed by the hash of its bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    cid: Cid,
    data: Vec<u8>,
}

impl Block {
    pub fn new(data: Vec<u8>) -> Self {
        Block {
            cid: Cid::from_bytes(&data),
            data,
        }
    }

    /// Wraps bytes received for `cid`, rejecting them if they do not hash to it.
    pub fn verified(cid: Cid, data: Vec<u8>) -> Result<Self, DagError> {
        if cid.verifies(&data) {
            Ok(Block { cid, data })
        } else {
            Err(DagError::IntegrityError(cid))
        }
    }

    pub fn cid(&self) -> Cid {
        self.cid
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Splits `data` into `chunk_size` pieces. Empty input yields one empty chunk.
pub fn chunk(data: &[u8], chunk_size: usize) -> Vec<&[u8]> {
    assert!(chunk_size >= 1, "chunk size must be at least one byte");
    if data.is_empty() {
        return vec![data];
    }
    data.chunks(chunk_size).collect()
}

/// Output of [`build_dag`]: root identifier plus every block, root last.
#[derive(Debug, Clone)]
pub struct Dag {
    pub root: Cid,
    pub blocks: Vec<Block>,
}

pub fn build_dag(data: &[u8]) -> Result<Dag, DagError> {
    if data.len() > MAX_OBJECT_SIZE {
        return Err(DagError::TooLarge {
            size: data.len(),
            max: MAX_OBJECT_SIZE,
        });
    }
    let leaves: Vec<Block> = chunk(data, DEFAULT_CHUNK_SIZE)
        .into_iter()
        .map(|piece| Block::new(DagNode::Leaf(piece.to_vec()).encode()))
        .collect();
    if leaves.len() == 1 {
        let root = leaves[0].cid();
        return Ok(Dag {
            root,
            blocks: leaves,
        });
    }
    let links = leaves
        .iter()
        .map(|b| Link {
            cid: b.cid(),
            size: (b.len() - 1) as u64,
        })
        .collect();
    let root_block = Block::new(DagNode::branch(links).encode());
    let root = root_block.cid();
    let mut blocks = leaves;
    blocks.push(root_block);
    Ok(Dag { root, blocks })
}

/// Anything blocks can be read from during reassembly.
pub trait BlockSource {
    /// Raw bytes claimed to belong to `cid`, unverified.
    fn fetch(&self, cid: &Cid) -> Option<Vec<u8>>;
}

impl BlockSource for HashMap<Cid, Vec<u8>> {
    fn fetch(&self, cid: &Cid) -> Option<Vec<u8>> {
        self.get(cid).cloned()
    }
}

/// Reassembles the content under `root`, verifying every block.
pub fn assemble<S: BlockSource + ?Sized>(root: &Cid, source: &S) -> Result<Vec<u8>, DagError> {
    match fetch_node(root, source)? {
        DagNode::Leaf(data) => Ok(data),
        DagNode::Branch { links, total_size } => {
            let mut out = Vec::with_capacity(total_size as usize);
            for link in &links {
                match fetch_node(&link.cid, source)? {
                    DagNode::Leaf(data) => out.extend_from_slice(&data),
                    DagNode::Branch { .. } => return Err(DagError::Malformed("nested branch")),
                }
            }
            Ok(out)
        }
    }
}

fn fetch_node<S: BlockSource + ?Sized>(cid: &Cid, source: &S) -> Result<DagNode, DagError> {
    let bytes = source.fetch(cid).ok_or(DagError::MissingBlock(*cid))?;
    let block = Block::verified(*cid, bytes)?;
    DagNode::decode(block.data())
}

/// Identifiers of `root` and every block it links to, from local bytes only.
/// Missing children are skipped.
pub fn closure<S: BlockSource + ?Sized>(root: &Cid, source: &S) -> Vec<Cid> {
    let mut out = vec![*root];
    if let Some(bytes) = source.fetch(root) {
        if let Ok(DagNode::Branch { links, .. }) = DagNode::decode(&bytes) {
            out.extend(links.iter().map(|l| l.cid));
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Entry {
    block: Block,
    last_access: SimTime,
}

/// Thread-safe map of blocks with last-access times.
#[derive(Debug, Default)]
pub struct BlockStore {
    inner: RwLock<HashMap<Cid, Entry>>,
}

impl BlockStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&self, data: Vec<u8>, now: SimTime) -> Cid {
        self.put_block(Block::new(data), now)
    }

    pub fn put_block(&self, block: Block, now: SimTime) -> Cid {
        let cid = block.cid();
        let mut map = self.inner.write();
        map.entry(cid)
            .and_modify(|e| e.last_access = e.last_access.max(now))
            .or_insert(Entry {
                block,
                last_access: now,
            });
        cid
    }

    /// Reads a block and refreshes its access time.
    pub fn get(&self, cid: &Cid, now: SimTime) -> Result<Block, DagError> {
        let mut map = self.inner.write();
        let entry = map.get_mut(cid).ok_or(DagError::NotFound(*cid))?;
        entry.last_access = entry.last_access.max(now);
        Ok(entry.block.clone())
    }

    /// Reads a block without touching its access time.
    pub fn peek(&self, cid: &Cid) -> Option<Block> {
        self.inner.read().get(cid).map(|e| e.block.clone())
    }

    pub fn has(&self, cid: &Cid) -> bool {
        self.inner.read().contains_key(cid)
    }

    pub fn delete(&self, cid: &Cid) {
        self.inner.write().remove(cid);
    }

    pub fn len(&self) -> usize {
        self.inner.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.read().is_empty()
    }

    pub fn last_access(&self, cid: &Cid) -> Option<SimTime> {
        self.inner.read().get(cid).map(|e| e.last_access)
    }

    /// All stored identifiers, sorted.
    pub fn cids(&self) -> Vec<Cid> {
        let mut cids: Vec<Cid> = self.inner.read().keys().copied().collect();
        cids.sort();
        cids
    }

    /// Drops every block for which `evict` returns true; returns them sorted.
    pub fn retain_by<F>(&self, mut evict: F) -> Vec<Cid>
    where
        F: FnMut(&Cid, SimTime) -> bool,
    {
        let mut map = self.inner.write();
        let mut gone: Vec<Cid> = map
            .iter()
            .filter(|(cid, e)| evict(cid, e.last_access))
            .map(|(cid, _)| *cid)
            .collect();
        gone.sort();
        for cid in &gone {
            map.remove(cid);
        }
        gone
    }
}

impl BlockSource for BlockStore {
    fn fetch(&self, cid: &Cid) -> Option<Vec<u8>> {
        self.peek(cid).map(Block::into_data)
    }
}
