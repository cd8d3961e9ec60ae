//! Payload codecs for DHT messages carried inside an [`crate::exchange::Envelope`].
//!
//! ```text
//! Peers:          <role u8> <u32 n> { <multiaddr 40> }* <u32 m> { <multiaddr 40> <u64 published ms> <u64 ttl ms> }*
//! AddProvider:    <multiaddr 40>
//! AddProviderAck: <accepted u8>
//! ```
//!
//! Multiaddresses use the fixed 40-byte form of [`Multiaddr::to_wire`].

use std::time::Duration;

use crate::cid::Cid;
use crate::clock::SimTime;
use crate::dht::{ProviderRecord, Role};
use crate::peer::{Multiaddr, MULTIADDR_WIRE_LEN};

const RECORD_LEN: usize = MULTIADDR_WIRE_LEN + 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeersReply {
    pub role: Role,
    pub closer: Vec<Multiaddr>,
    pub providers: Vec<ProviderRecord>,
}

impl PeersReply {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            9 + self.closer.len() * MULTIADDR_WIRE_LEN + self.providers.len() * RECORD_LEN,
        );
        out.push(match self.role {
            Role::Client => 0,
            Role::Server => 1,
        });
        out.extend_from_slice(&(self.closer.len() as u32).to_be_bytes());
        for a in &self.closer {
            out.extend_from_slice(&a.to_wire());
        }
        out.extend_from_slice(&(self.providers.len() as u32).to_be_bytes());
        for r in &self.providers {
            out.extend_from_slice(&r.addr.to_wire());
            out.extend_from_slice(&r.published_at.as_millis().to_be_bytes());
            out.extend_from_slice(&(r.ttl.as_millis() as u64).to_be_bytes());
        }
        out
    }

    /// Records are tagged with `cid`, the key the reply answers.
    pub fn decode(bytes: &[u8], cid: Cid) -> Option<Self> {
        let mut r = Reader(bytes);
        let role = match r.u8()? {
            0 => Role::Client,
            1 => Role::Server,
            _ => return None,
        };
        let n = r.u32()? as usize;
        let closer = (0..n)
            .map(|_| Multiaddr::from_wire(r.take(MULTIADDR_WIRE_LEN)?))
            .collect::<Option<Vec<_>>>()?;
        let m = r.u32()? as usize;
        let providers = (0..m)
            .map(|_| {
                let addr = Multiaddr::from_wire(r.take(MULTIADDR_WIRE_LEN)?)?;
                let published_at = SimTime::from_millis(r.u64()?);
                let ttl = Duration::from_millis(r.u64()?);
                Some(ProviderRecord {
                    cid,
                    provider: addr.peer,
                    addr,
                    published_at,
                    ttl,
                })
            })
            .collect::<Option<Vec<_>>>()?;
        if !r.0.is_empty() {
            return None;
        }
        Some(PeersReply {
            role,
            closer,
            providers,
        })
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.0.len() < n {
            return None;
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Some(head)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_be_bytes(b.try_into().unwrap()))
    }
}
