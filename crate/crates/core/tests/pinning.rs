use std::time::Duration;

use farmledger::{Cid, PinError, PinStatus, PinningService, SimConfig, SimError, Simulation};
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

const DEADLINE: Duration = Duration::from_secs(30);

fn setup() -> (Simulation, PinningService) {
    let sim = Simulation::build(SimConfig::new(20, 42));
    let svc = PinningService::with_rng(5, Xoshiro256PlusPlus::seed_from_u64(7));
    (sim, svc)
}

#[test]
fn pinned_content_survives_uploader_leaving() {
    let (mut sim, mut svc) = setup();
    let key = svc.issue_key(1_700_000_000);
    let data = vec![7u8; 400_000];
    let cid = sim.add(0, &data).unwrap();
    let entry = svc.pin_by_hash(&mut sim, &key.jwt, &cid, DEADLINE).unwrap();
    assert_eq!(entry.status, PinStatus::Pinned);
    sim.leave(0);
    sim.advance(Duration::from_secs(24 * 3600));
    assert_eq!(sim.cat(12, &cid, DEADLINE).unwrap(), data);
}

#[test]
fn bad_token_creates_nothing() {
    let (mut sim, mut svc) = setup();
    let key = svc.issue_key(1);
    let cid = sim.add(0, b"x").unwrap();
    let mut forged = key.jwt.clone();
    forged.pop();
    forged.push(if key.jwt.ends_with('A') { 'B' } else { 'A' });
    assert!(matches!(
        svc.pin_by_hash(&mut sim, &forged, &cid, DEADLINE),
        Err(PinError::Auth(_))
    ));
    assert!(svc.list_pins(&key.jwt).unwrap().is_empty());
    assert!(!sim.node(5).pins().is_pinned_root(&cid));
}

#[test]
fn repeat_pin_is_idempotent() {
    let (mut sim, mut svc) = setup();
    let key = svc.issue_key(1);
    let cid = sim.add(0, b"twice").unwrap();
    let a = svc.pin_by_hash(&mut sim, &key.jwt, &cid, DEADLINE).unwrap();
    sim.advance(Duration::from_secs(60));
    let b = svc.pin_by_hash(&mut sim, &key.jwt, &cid, DEADLINE).unwrap();
    assert_eq!(a, b);
    assert_eq!(svc.list_pins(&key.jwt).unwrap().len(), 1);
}

#[test]
fn unknown_content_fails_entry() {
    let (mut sim, mut svc) = setup();
    let key = svc.issue_key(1);
    let cid = Cid::from_bytes(b"nowhere");
    let err = svc
        .pin_by_hash(&mut sim, &key.jwt, &cid, Duration::from_secs(5))
        .unwrap_err();
    assert_eq!(err, PinError::Fetch(SimError::NotFoundAnywhere(cid)));
    assert_eq!(
        svc.list_pins(&key.jwt).unwrap()[0].status,
        PinStatus::Failed
    );
}

#[test]
fn ownership_rules() {
    let (mut sim, mut svc) = setup();
    let alice = svc.issue_key(1);
    let bob = svc.issue_key(2);
    assert_ne!(alice.credentials.api_key, bob.credentials.api_key);
    let a = sim.add(0, b"alice").unwrap();
    let b = sim.add(1, b"bob").unwrap();
    svc.pin_by_hash(&mut sim, &alice.jwt, &a, DEADLINE).unwrap();
    svc.pin_by_hash(&mut sim, &bob.jwt, &b, DEADLINE).unwrap();
    let mine: Vec<Cid> = svc
        .list_pins(&alice.jwt)
        .unwrap()
        .iter()
        .map(|e| e.cid)
        .collect();
    assert_eq!(mine, vec![a]);
    assert_eq!(
        svc.unpin(&mut sim, &bob.jwt, &a),
        Err(PinError::NotOwner(a))
    );
    assert_eq!(
        svc.unpin(&mut sim, &bob.jwt, &Cid::from_bytes(b"?")),
        Err(PinError::NotPinned(Cid::from_bytes(b"?")))
    );
}

#[test]
fn unpin_releases_to_gc() {
    let (mut sim, mut svc) = setup();
    let key = svc.issue_key(1);
    let cid = sim.add(0, b"temporary").unwrap();
    svc.pin_by_hash(&mut sim, &key.jwt, &cid, DEADLINE).unwrap();
    sim.advance(Duration::from_secs(24 * 3600));
    assert!(sim.node(5).store().has(&cid));
    svc.unpin(&mut sim, &key.jwt, &cid).unwrap();
    sim.advance(Duration::from_secs(12 * 3600 + 3600));
    assert!(!sim.node(5).store().has(&cid));
}

#[test]
fn shared_pin_held_until_last_owner_leaves() {
    let (mut sim, mut svc) = setup();
    let a = svc.issue_key(1);
    let b = svc.issue_key(2);
    let cid = sim.add(0, b"shared").unwrap();
    svc.pin_by_hash(&mut sim, &a.jwt, &cid, DEADLINE).unwrap();
    svc.pin_by_hash(&mut sim, &b.jwt, &cid, DEADLINE).unwrap();
    svc.unpin(&mut sim, &a.jwt, &cid).unwrap();
    assert!(sim.node(5).pins().is_pinned_root(&cid));
    svc.unpin(&mut sim, &b.jwt, &cid).unwrap();
    assert!(!sim.node(5).pins().is_pinned_root(&cid));
}

#[test]
fn revoked_key_stops_verifying() {
    let (_, mut svc) = setup();
    let key = svc.issue_key(1);
    assert!(svc.verify_jwt(&key.jwt).is_ok());
    assert!(svc.revoke(&key.credentials.api_key));
    assert!(svc.verify_jwt(&key.jwt).is_err());
}
