//! Remote pinning: a node that fetches and pins content on behalf of
//! credential holders, so the content outlives its uploader.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use serde::Serialize;

use crate::cid::Cid;
use crate::clock::SimTime;
use crate::jwt::{issue_jwt, verify_jwt, ApiCredentials, JwtError};
use crate::sim::{NodeIdx, SimError, Simulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PinStatus {
    Fetching,
    Pinned,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PinEntry {
    pub cid: Cid,
    pub owner: String,
    #[serde(rename = "pinned_at_ms", serialize_with = "ser_time")]
    pub pinned_at: SimTime,
    pub status: PinStatus,
}

fn ser_time<S: serde::Serializer>(t: &SimTime, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(t.as_millis())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PinError {
    #[error("authentication failed: {0}")]
    Auth(#[from] JwtError),
    #[error("{0} is not pinned")]
    NotPinned(Cid),
    #[error("{0} is pinned by another key")]
    NotOwner(Cid),
    #[error(transparent)]
    Fetch(SimError),
}

/// Credentials, token verification and the pin table of one service node.
pub struct PinningService {
    node: NodeIdx,
    keys: BTreeMap<String, ApiCredentials>,
    pins: BTreeMap<Cid, BTreeMap<String, PinEntry>>,
    rng: Box<dyn RngCore + Send>,
}

impl std::fmt::Debug for PinningService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PinningService")
            .field("node", &self.node)
            .field("keys", &self.keys.len())
            .field("pins", &self.pins.len())
            .finish()
    }
}

/// Freshly issued credentials and their token.
#[derive(Debug, Clone)]
pub struct IssuedKey {
    pub credentials: ApiCredentials,
    pub jwt: String,
}

impl PinningService {
    pub fn new(node: NodeIdx) -> Self {
        Self::with_rng(node, StdRng::from_entropy())
    }

    pub fn with_rng(node: NodeIdx, rng: impl RngCore + Send + 'static) -> Self {
        PinningService {
            node,
            keys: BTreeMap::new(),
            pins: BTreeMap::new(),
            rng: Box::new(rng),
        }
    }

    pub fn node(&self) -> NodeIdx {
        self.node
    }

    pub fn issue_credentials(&mut self) -> ApiCredentials {
        loop {
            let creds = ApiCredentials::generate(&mut self.rng);
            if !self.keys.contains_key(&creds.api_key) {
                self.keys.insert(creds.api_key.clone(), creds.clone());
                return creds;
            }
        }
    }

    /// New credentials plus a token issued at `iat` (unix seconds).
    pub fn issue_key(&mut self, iat: u64) -> IssuedKey {
        let credentials = self.issue_credentials();
        let jwt = issue_jwt(&credentials, iat);
        IssuedKey { credentials, jwt }
    }

    pub fn register(&mut self, creds: ApiCredentials) {
        self.keys.insert(creds.api_key.clone(), creds);
    }

    /// Deletes a key; its tokens stop verifying.
    pub fn revoke(&mut self, api_key: &str) -> bool {
        self.keys.remove(api_key).is_some()
    }

    pub fn verify_jwt(&self, token: &str) -> Result<String, JwtError> {
        verify_jwt(token, |k| self.keys.get(k))
    }

    /// Fetches and pins `cid` on the service node. Repeating the call for
    /// the same key and cid returns the existing entry.
    pub fn pin_by_hash(
        &mut self,
        sim: &mut Simulation,
        token: &str,
        cid: &Cid,
        deadline: Duration,
    ) -> Result<PinEntry, PinError> {
        let owner = self.verify_jwt(token)?;
        if let Some(e) = self.entry(cid, &owner) {
            if e.status == PinStatus::Pinned {
                return Ok(e.clone());
            }
        }
        let entry = PinEntry {
            cid: *cid,
            owner: owner.clone(),
            pinned_at: sim.now(),
            status: PinStatus::Fetching,
        };
        self.pins
            .entry(*cid)
            .or_default()
            .insert(owner.clone(), entry);
        let result = sim.pin(self.node, cid, deadline);
        let entry = self
            .pins
            .get_mut(cid)
            .and_then(|m| m.get_mut(&owner))
            .expect("entry just inserted");
        match result {
            Ok(()) => {
                entry.status = PinStatus::Pinned;
                entry.pinned_at = sim.now();
                Ok(entry.clone())
            }
            Err(e) => {
                entry.status = PinStatus::Failed;
                Err(PinError::Fetch(e))
            }
        }
    }

    /// Removes the caller's pin. The node pin is released once no key pins
    /// the cid, leaving the blocks to garbage collection.
    pub fn unpin(&mut self, sim: &mut Simulation, token: &str, cid: &Cid) -> Result<(), PinError> {
        let owner = self.verify_jwt(token)?;
        let owners = self.pins.get_mut(cid).ok_or(PinError::NotPinned(*cid))?;
        if owners.remove(&owner).is_none() {
            return Err(PinError::NotOwner(*cid));
        }
        let still_pinned = owners.values().any(|e| e.status == PinStatus::Pinned);
        if owners.is_empty() {
            self.pins.remove(cid);
        }
        if !still_pinned {
            sim.unpin(self.node, cid);
        }
        Ok(())
    }

    pub fn list_pins(&self, token: &str) -> Result<Vec<PinEntry>, PinError> {
        let owner = self.verify_jwt(token)?;
        Ok(self
            .pins
            .values()
            .filter_map(|m| m.get(&owner))
            .cloned()
            .collect())
    }

    fn entry(&self, cid: &Cid, owner: &str) -> Option<&PinEntry> {
        self.pins.get(cid).and_then(|m| m.get(owner))
    }
}
