//! Want/block exchange messages and per-peer bandwidth accounting.
//!
//! Every simulated message, DHT traffic included, travels in one envelope:
//!
//! ```text
//! <1-byte kind> <34-byte cid or peer id> <u64 BE payload length> <payload>
//! ```

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::cid::{Cid, MULTIHASH_LEN};
use crate::clock::SimTime;
use crate::peer::PeerId;

/// Bytes of framing around every payload.
pub const ENVELOPE_OVERHEAD: usize = 1 + MULTIHASH_LEN + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[repr(u8)]
pub enum MessageKind {
    Want = 0x01,
    HaveBlock = 0x02,
    DontHave = 0x03,
    FindNode = 0x10,
    FindProviders = 0x11,
    AddProvider = 0x12,
    Peers = 0x13,
    AddProviderAck = 0x14,
}

impl MessageKind {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        use MessageKind::*;
        Some(match tag {
            0x01 => Want,
            0x02 => HaveBlock,
            0x03 => DontHave,
            0x10 => FindNode,
            0x11 => FindProviders,
            0x12 => AddProvider,
            0x13 => Peers,
            0x14 => AddProviderAck,
            _ => return None,
        })
    }

    /// Requests are answered by the receiving node's handler; everything
    /// else is a reply routed back to the waiting operation.
    pub fn is_request(self) -> bool {
        matches!(
            self,
            MessageKind::Want
                | MessageKind::FindNode
                | MessageKind::FindProviders
                | MessageKind::AddProvider
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvelopeError {
    #[error("envelope shorter than its {ENVELOPE_OVERHEAD}-byte header")]
    Truncated,
    #[error("unknown message kind {0:#04x}")]
    UnknownKind(u8),
    #[error("payload length field {declared} does not match {actual} bytes present")]
    LengthMismatch { declared: u64, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub kind: MessageKind,
    /// Raw multihash of the cid (or peer id) the message is about.
    pub key: [u8; MULTIHASH_LEN],
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn new(kind: MessageKind, cid: &Cid, payload: Vec<u8>) -> Self {
        Envelope {
            kind,
            key: cid.to_raw(),
            payload,
        }
    }

    pub fn want(cid: &Cid) -> Self {
        Envelope::new(MessageKind::Want, cid, Vec::new())
    }

    pub fn have_block(cid: &Cid, data: Vec<u8>) -> Self {
        Envelope::new(MessageKind::HaveBlock, cid, data)
    }

    pub fn dont_have(cid: &Cid) -> Self {
        Envelope::new(MessageKind::DontHave, cid, Vec::new())
    }

    pub fn cid(&self) -> Option<Cid> {
        Cid::from_raw(&self.key).ok()
    }

    pub fn wire_len(&self) -> usize {
        ENVELOPE_OVERHEAD + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.push(self.kind.tag());
        out.extend_from_slice(&self.key);
        out.extend_from_slice(&(self.payload.len() as u64).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        if bytes.len() < ENVELOPE_OVERHEAD {
            return Err(EnvelopeError::Truncated);
        }
        let kind = MessageKind::from_tag(bytes[0]).ok_or(EnvelopeError::UnknownKind(bytes[0]))?;
        let mut key = [0u8; MULTIHASH_LEN];
        key.copy_from_slice(&bytes[1..1 + MULTIHASH_LEN]);
        let declared = u64::from_be_bytes(
            bytes[1 + MULTIHASH_LEN..ENVELOPE_OVERHEAD]
                .try_into()
                .unwrap(),
        );
        let payload = &bytes[ENVELOPE_OVERHEAD..];
        if declared != payload.len() as u64 {
            return Err(EnvelopeError::LengthMismatch {
                declared,
                actual: payload.len(),
            });
        }
        Ok(Envelope {
            kind,
            key,
            payload: payload.to_vec(),
        })
    }
}

/// Blocks a node is currently waiting for, with per-entry deadlines.
#[derive(Debug, Clone, Default)]
pub struct WantList {
    wanted: BTreeMap<Cid, SimTime>,
}

impl WantList {
    pub fn insert(&mut self, cid: Cid, deadline: SimTime) {
        self.wanted.insert(cid, deadline);
    }

    pub fn remove(&mut self, cid: &Cid) {
        self.wanted.remove(cid);
    }

    pub fn contains(&self, cid: &Cid) -> bool {
        self.wanted.contains_key(cid)
    }

    /// Drops entries whose deadline has passed and returns them.
    pub fn expire(&mut self, now: SimTime) -> Vec<Cid> {
        let gone: Vec<Cid> = self
            .wanted
            .iter()
            .filter(|(_, d)| **d < now)
            .map(|(c, _)| *c)
            .collect();
        for cid in &gone {
            self.wanted.remove(cid);
        }
        gone
    }

    pub fn len(&self) -> usize {
        self.wanted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wanted.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PeerTraffic {
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

/// One row of a bandwidth report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BandwidthSample {
    pub bucket_start_s: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
}

pub const BANDWIDTH_BUCKET: Duration = Duration::from_secs(1);

/// Per-peer byte counters plus totals bucketed by simulated second.
#[derive(Debug, Clone, Default)]
pub struct BandwidthLedger {
    peers: HashMap<PeerId, PeerTraffic>,
    buckets: BTreeMap<u64, (u64, u64)>,
}

impl BandwidthLedger {
    pub fn record_sent(&mut self, to: PeerId, bytes: u64, at: SimTime) {
        self.peers.entry(to).or_default().bytes_sent += bytes;
        self.buckets.entry(at.as_secs()).or_default().1 += bytes;
    }

    pub fn record_received(&mut self, from: PeerId, bytes: u64, at: SimTime) {
        self.peers.entry(from).or_default().bytes_received += bytes;
        self.buckets.entry(at.as_secs()).or_default().0 += bytes;
    }

    pub fn peer(&self, peer: &PeerId) -> PeerTraffic {
        self.peers.get(peer).copied().unwrap_or_default()
    }

    pub fn total_sent(&self) -> u64 {
        self.peers.values().map(|t| t.bytes_sent).sum()
    }

    pub fn total_received(&self) -> u64 {
        self.peers.values().map(|t| t.bytes_received).sum()
    }

    /// Last second with any traffic, if any.
    pub fn last_bucket(&self) -> Option<u64> {
        self.buckets.keys().next_back().copied()
    }

    /// Zero-filled per-second totals for the buckets in `window` (seconds).
    pub fn report(&self, window: Range<u64>) -> Vec<BandwidthSample> {
        window
            .map(|s| {
                let (bytes_in, bytes_out) = self.buckets.get(&s).copied().unwrap_or_default();
                BandwidthSample {
                    bucket_start_s: s,
                    bytes_in,
                    bytes_out,
                }
            })
            .collect()
    }
}

pub fn bandwidth_report(ledger: &BandwidthLedger, window: Range<u64>) -> Vec<BandwidthSample> {
    ledger.report(window)
}

/// Sums several reports bucket by bucket. All inputs must share a window.
pub fn merge_reports<'a, I>(reports: I) -> Vec<BandwidthSample>
where
    I: IntoIterator<Item = &'a [BandwidthSample]>,
{
    let mut out: Vec<BandwidthSample> = Vec::new();
    for report in reports {
        if out.is_empty() {
            out = report.to_vec();
            continue;
        }
        for (acc, s) in out.iter_mut().zip(report) {
            debug_assert_eq!(acc.bucket_start_s, s.bucket_start_s);
            acc.bytes_in += s.bytes_in;
            acc.bytes_out += s.bytes_out;
        }
    }
    out
}

/// CSV rendering with the `bucket_start_s,bytes_in,bytes_out` header.
pub fn report_csv(samples: &[BandwidthSample]) -> String {
    let mut out = String::from("bucket_start_s,bytes_in,bytes_out\n");
    for s in samples {
        out.push_str(&format!(
            "{},{},{}\n",
            s.bucket_start_s, s.bytes_in, s.bytes_out
        ));
    }
    out
}
