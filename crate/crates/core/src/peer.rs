//! Peer identities and `/ip4/<ip>/tcp/<port>/p2p/<id>` multiaddresses.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::cid::{digest, CidError, Multihash, MULTIHASH_LEN};

/// Identity of a peer: the sha2-256 multihash of its identity seed.
///
/// Shares the text encoding with [`crate::Cid`] but is a distinct type.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PeerId(Multihash);

impl PeerId {
    pub fn from_seed(seed: &[u8; 32]) -> Self {
        PeerId(Multihash::from_bytes(&multihash_of(seed)).expect("well-formed multihash"))
    }

    pub fn to_raw(&self) -> [u8; MULTIHASH_LEN] {
        self.0.to_bytes()
    }

    pub fn from_raw(bytes: &[u8]) -> Result<Self, CidError> {
        Multihash::from_bytes(bytes).map(PeerId)
    }

    pub fn parse(text: &str) -> Result<Self, CidError> {
        Multihash::parse(text).map(PeerId)
    }

    pub fn render(&self) -> String {
        self.0.render()
    }
}

fn multihash_of(seed: &[u8]) -> [u8; MULTIHASH_LEN] {
    let mut out = [0u8; MULTIHASH_LEN];
    out[0] = crate::cid::SHA2_256_CODE;
    out[1] = crate::cid::SHA2_256_LEN;
    out[2..].copy_from_slice(digest(seed).as_bytes());
    out
}

/// Derives a peer identity from a 32-byte seed.
pub fn generate_peer(seed: &[u8; 32]) -> PeerId {
    PeerId::from_seed(seed)
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl fmt::Debug for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = self.render();
        write!(f, "PeerId({}…)", &text[..10])
    }
}

impl FromStr for PeerId {
    type Err = CidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PeerId::parse(s)
    }
}

impl Serialize for PeerId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for PeerId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        PeerId::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed multiaddress {input:?}: {reason}")]
pub struct MalformedMultiaddr {
    pub input: String,
    pub reason: &'static str,
}

/// Location of a peer. Only the ip4 + tcp shape is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Multiaddr {
    pub ip: Ipv4Addr,
    pub port: u16,
    pub peer: PeerId,
}

/// Bytes taken by [`Multiaddr::to_wire`].
pub const MULTIADDR_WIRE_LEN: usize = MULTIHASH_LEN + 4 + 2;

impl Multiaddr {
    pub fn new(ip: Ipv4Addr, port: u16, peer: PeerId) -> Self {
        Multiaddr { ip, port, peer }
    }

    pub fn render(&self) -> String {
        format!("/ip4/{}/tcp/{}/p2p/{}", self.ip, self.port, self.peer)
    }

    pub fn parse(text: &str) -> Result<Self, MalformedMultiaddr> {
        let bad = |reason| MalformedMultiaddr {
            input: text.to_owned(),
            reason,
        };
        let rest = text
            .strip_prefix('/')
            .ok_or_else(|| bad("must start with '/'"))?;
        let parts: Vec<&str> = rest.split('/').collect();
        if parts.len() != 6 {
            return Err(bad("expected /ip4/<ip>/tcp/<port>/p2p/<id>"));
        }
        if parts[0] != "ip4" {
            return Err(bad("unsupported network protocol"));
        }
        if parts[2] != "tcp" {
            return Err(bad("unsupported transport"));
        }
        if parts[4] != "p2p" {
            return Err(bad("missing p2p segment"));
        }
        let ip: Ipv4Addr = parts[1].parse().map_err(|_| bad("invalid ip4 address"))?;
        // Only canonical renderings survive an exact round trip.
        if ip.to_string() != parts[1] {
            return Err(bad("non-canonical ip4 address"));
        }
        let port: u16 = parts[3].parse().map_err(|_| bad("invalid port"))?;
        if port.to_string() != parts[3] {
            return Err(bad("non-canonical port"));
        }
        let peer = PeerId::parse(parts[5]).map_err(|_| bad("invalid peer id"))?;
        Ok(Multiaddr { ip, port, peer })
    }

    /// Fixed-width binary form used inside simulated messages.
    pub fn to_wire(&self) -> [u8; MULTIADDR_WIRE_LEN] {
        let mut out = [0u8; MULTIADDR_WIRE_LEN];
        out[..MULTIHASH_LEN].copy_from_slice(&self.peer.to_raw());
        out[MULTIHASH_LEN..MULTIHASH_LEN + 4].copy_from_slice(&self.ip.octets());
        out[MULTIHASH_LEN + 4..].copy_from_slice(&self.port.to_be_bytes());
        out
    }

    pub fn from_wire(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != MULTIADDR_WIRE_LEN {
            return None;
        }
        let peer = PeerId::from_raw(&bytes[..MULTIHASH_LEN]).ok()?;
        let ip: [u8; 4] = bytes[MULTIHASH_LEN..MULTIHASH_LEN + 4].try_into().ok()?;
        let port = u16::from_be_bytes(bytes[MULTIHASH_LEN + 4..].try_into().ok()?);
        Some(Multiaddr {
            ip: Ipv4Addr::from(ip),
            port,
            peer,
        })
    }
}

pub fn render_multiaddr(m: &Multiaddr) -> String {
    m.render()
}

pub fn parse_multiaddr(s: &str) -> Result<Multiaddr, MalformedMultiaddr> {
    Multiaddr::parse(s)
}

impl fmt::Display for Multiaddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for Multiaddr {
    type Err = MalformedMultiaddr;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Multiaddr::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn peer(n: u8) -> PeerId {
        generate_peer(&[n; 32])
    }

    #[test]
    fn deterministic_and_distinct() {
        assert_eq!(peer(1), peer(1));
        assert_ne!(peer(1), peer(2));
        let text = peer(0).render();
        assert_eq!(text.len(), 46);
        assert!(text.starts_with("Qm"));
    }

    #[test]
    fn multiaddr_round_trip() {
        let text = format!("/ip4/127.0.0.1/tcp/4001/p2p/{}", peer(3));
        let m = parse_multiaddr(&text).unwrap();
        assert_eq!(m.port, 4001);
        assert_eq!(render_multiaddr(&m), text);
        assert_eq!(Multiaddr::from_wire(&m.to_wire()), Some(m));
    }

    #[test]
    fn multiaddr_rejections() {
        let id = peer(4);
        for bad in [
            format!("/ip4/127.0.0.1/udp/4001/p2p/{id}"),
            format!("/ip4/127.0.0.1/tcp/70000/p2p/{id}"),
            format!("/ip4/127.0.0.256/tcp/1/p2p/{id}"),
            format!("/ip4/127.0.0.1/tcp/4001/p2p/{id}/extra"),
            "/ip4/127.0.0.1/tcp/4001/p2p/notapeer".to_owned(),
            format!("/ip6/::1/tcp/4001/p2p/{id}"),
            format!("ip4/127.0.0.1/tcp/4001/p2p/{id}"),
            format!("/ip4/127.0.0.1/tcp/04001/p2p/{id}"),
        ] {
            assert!(parse_multiaddr(&bad).is_err(), "{bad} should fail");
        }
    }

    proptest! {
        #[test]
        fn multiaddr_render_parse(ip in any::<[u8; 4]>(), port in any::<u16>(), seed in any::<[u8; 32]>()) {
            let m = Multiaddr::new(Ipv4Addr::from(ip), port, generate_peer(&seed));
            prop_assert_eq!(parse_multiaddr(&m.render()).unwrap(), m);
        }
    }
}
