//! Content identifiers.
//!
//! A [`Cid`] is a version-0 identifier: the sha2-256 multihash
//! (`0x12 0x20 <32-byte digest>`) of a block, rendered in base58btc.
//! The rendered form is always 46 characters and starts with `Qm`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Multihash code for sha2-256.
pub const SHA2_256_CODE: u8 = 0x12;
/// Digest length prefix for sha2-256.
pub const SHA2_256_LEN: u8 = 0x20;
/// Length of a raw multihash (code + length + digest).
pub const MULTIHASH_LEN: usize = 34;
/// Length of the rendered base58btc text.
pub const CID_TEXT_LEN: usize = 46;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CidError {
    #[error("invalid base58 character {character:?} at index {index}")]
    InvalidCharacter { character: char, index: usize },
    #[error("decoded multihash is {0} bytes, expected 34")]
    InvalidLength(usize),
    #[error("multihash prefix {0:#04x} {1:#04x} is not sha2-256")]
    InvalidPrefix(u8, u8),
}

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest([u8; 32]);

impl Digest {
    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        Digest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

/// SHA-256 of `data`.
pub fn digest(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Raw sha2-256 multihash bytes shared by [`Cid`] and [`crate::peer::PeerId`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct Multihash(Digest);

impl Multihash {
    pub(crate) fn to_bytes(self) -> [u8; MULTIHASH_LEN] {
        let mut out = [0u8; MULTIHASH_LEN];
        out[0] = SHA2_256_CODE;
        out[1] = SHA2_256_LEN;
        out[2..].copy_from_slice(self.0.as_bytes());
        out
    }

    pub(crate) fn from_bytes(bytes: &[u8]) -> Result<Self, CidError> {
        if bytes.len() != MULTIHASH_LEN {
            return Err(CidError::InvalidLength(bytes.len()));
        }
        if bytes[0] != SHA2_256_CODE || bytes[1] != SHA2_256_LEN {
            return Err(CidError::InvalidPrefix(bytes[0], bytes[1]));
        }
        let mut d = [0u8; 32];
        d.copy_from_slice(&bytes[2..]);
        Ok(Multihash(Digest(d)))
    }

    pub(crate) fn render(self) -> String {
        bs58::encode(self.to_bytes()).into_string()
    }

    pub(crate) fn parse(text: &str) -> Result<Self, CidError> {
        let bytes = bs58::decode(text).into_vec().map_err(|e| match e {
            bs58::decode::Error::InvalidCharacter { character, index } => {
                CidError::InvalidCharacter { character, index }
            }
            bs58::decode::Error::NonAsciiCharacter { index } => CidError::InvalidCharacter {
                character: text[index..].chars().next().unwrap_or('\u{fffd}'),
                index,
            },
            // BufferTooSmall and friends cannot happen with into_vec.
            _ => CidError::InvalidLength(0),
        })?;
        Self::from_bytes(&bytes)
    }

    pub(crate) fn digest(self) -> Digest {
        self.0
    }
}

/// Version-0 content identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cid(Multihash);

impl Cid {
    /// Identifier of `data`.
    pub fn from_bytes(data: &[u8]) -> Self {
        Cid::from_digest(digest(data))
    }

    pub fn from_digest(d: Digest) -> Self {
        Cid(Multihash(d))
    }

    pub fn digest(&self) -> Digest {
        self.0.digest()
    }

    /// The 34 raw multihash bytes.
    pub fn to_raw(&self) -> [u8; MULTIHASH_LEN] {
        self.0.to_bytes()
    }

    pub fn from_raw(bytes: &[u8]) -> Result<Self, CidError> {
        Multihash::from_bytes(bytes).map(Cid)
    }

    pub fn parse(text: &str) -> Result<Self, CidError> {
        Multihash::parse(text).map(Cid)
    }

    pub fn render(&self) -> String {
        self.0.render()
    }

    /// True when `data` hashes to this identifier.
    pub fn verifies(&self, data: &[u8]) -> bool {
        digest(data) == self.digest()
    }
}

/// Shorthand for [`Cid::from_bytes`].
pub fn cid_from_bytes(data: &[u8]) -> Cid {
    Cid::from_bytes(data)
}

/// Shorthand for [`Cid::parse`].
pub fn parse_cid(text: &str) -> Result<Cid, CidError> {
    Cid::parse(text)
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl fmt::Debug for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid({})", self.render())
    }
}

impl FromStr for Cid {
    type Err = CidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Cid::parse(s)
    }
}

impl Serialize for Cid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for Cid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Cid::parse(&s).map_err(serde::de::Error::custom)
    }
}
