use std::time::Duration;

use farmledger::dht::{xor_distance, DhtKey};
use farmledger::{Cid, DagNode, Role, SimConfig, SimError, Simulation};
use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const DEADLINE: Duration = Duration::from_secs(30);

fn payload(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut v = vec![0u8; len];
    rng.fill_bytes(&mut v);
    v
}

fn sim(n: usize, seed: u64) -> Simulation {
    Simulation::build(SimConfig::new(n, seed))
}

fn provider_set(sim: &mut Simulation, from: usize, cid: &Cid) -> Vec<usize> {
    let mut v: Vec<usize> = sim
        .find_providers(from, cid)
        .iter()
        .filter_map(|r| sim.idx_of(&r.provider))
        .collect();
    v.sort();
    v.dedup();
    v
}

#[test]
fn remote_cat_returns_bytes_and_adds_provider() {
    let mut s = sim(20, 42);
    let data = payload(1 << 20, 1);
    let cid = s.add(0, &data).unwrap();
    assert_eq!(s.cat(7, &cid, DEADLINE).unwrap(), data);
    let providers = provider_set(&mut s, 13, &cid);
    assert!(providers.contains(&0), "{providers:?}");
    assert!(providers.contains(&7), "{providers:?}");
}

#[test]
fn cat_on_uploader_sends_nothing() {
    let mut s = sim(20, 42);
    let cid = s.add(3, b"local").unwrap();
    let before = s.stats();
    assert_eq!(s.cat(3, &cid, DEADLINE).unwrap(), b"local");
    assert_eq!(s.stats().bytes_sent, before.bytes_sent);
}

#[test]
fn unknown_cid_is_not_found_after_deadline() {
    let mut s = sim(12, 5);
    let cid = Cid::from_bytes(b"never added");
    let start = s.now();
    let err = s.cat(2, &cid, Duration::from_secs(10)).unwrap_err();
    assert_eq!(err, SimError::NotFoundAnywhere(cid));
    assert!(s.now().saturating_since(start) >= Duration::from_secs(10));
}

#[test]
fn connected_peer_is_asked_before_the_dht() {
    let mut s = sim(20, 9);
    let cid = s.add(0, b"neighbourly").unwrap();
    let neighbour = s.node(0).connections().next().copied().unwrap();
    let n = s.idx_of(&neighbour).unwrap();
    let peers = s.node(n).connections().count() as u64;
    let events = s.processed();
    let block = s.fetch_block(n, &cid, DEADLINE).unwrap();
    assert_eq!(
        DagNode::decode(block.data()).unwrap(),
        DagNode::Leaf(b"neighbourly".to_vec())
    );
    // Wants and their answers only: no lookups.
    assert!(s.processed() - events <= 2 * peers);
}

#[test]
fn round_trips_between_random_pairs() {
    let mut s = sim(20, 11);
    for (i, len) in [0usize, 1, 4095, 262_144, 262_145, 3 * 1024 * 1024]
        .into_iter()
        .enumerate()
    {
        let data = payload(len, i as u64);
        let from = i % 20;
        let to = (i * 7 + 3) % 20;
        let cid = s.add(from, &data).unwrap();
        assert_eq!(s.cat(to, &cid, DEADLINE).unwrap(), data, "len {len}");
    }
}

#[test]
fn providers_amplify_with_each_retriever() {
    let mut s = sim(20, 42);
    let cid = s.add(0, &payload(10_000, 3)).unwrap();
    for m in 1..=4 {
        s.cat(m * 3, &cid, DEADLINE).unwrap();
        assert!(provider_set(&mut s, 19, &cid).len() > m);
    }
}

#[test]
fn records_land_on_closest_servers() {
    let mut s = sim(20, 42);
    let cid = s.add(4, b"placement").unwrap();
    let key = DhtKey::for_cid(&cid);
    let mut servers: Vec<usize> = (0..s.len())
        .filter(|&i| s.node(i).role() == Role::Server)
        .collect();
    servers.sort_by_key(|&i| {
        (
            xor_distance(&key, &DhtKey::for_peer(&s.node(i).id())),
            s.node(i).id().to_raw(),
        )
    });
    let holders: Vec<usize> = (0..s.len())
        .filter(|&i| !s.node(i).local_providers(&cid, s.now()).is_empty())
        .collect();
    assert!(!holders.is_empty());
    let expected: Vec<usize> = servers.into_iter().take(20).collect();
    for h in holders {
        assert!(expected.contains(&h));
    }
}

#[test]
fn clients_hold_no_records() {
    let mut s = sim(20, 42);
    let data = payload(1 << 20, 1);
    let cid = s.add(0, &data).unwrap();
    s.cat(1, &cid, DEADLINE).unwrap();
    for node in s.nodes() {
        let inbound = node.dht_role().inbound_count();
        match node.role() {
            Role::Client => {
                assert!(inbound <= 3);
                assert_eq!(node.provider_store().len(), 0);
            }
            Role::Server => assert!(inbound >= 4),
        }
    }
}

#[test]
fn lookup_rounds_are_logarithmic() {
    let mut s = sim(256, 77);
    let bound = (256f64).log2().ceil() as usize + 5;
    for i in 0..10 {
        let cid = Cid::from_bytes(&[i as u8; 3]);
        let report = s.lookup(i * 25, &cid);
        assert!(report.rounds <= bound, "rounds {}", report.rounds);
    }
}

#[test]
fn bytes_are_conserved() {
    let mut s = sim(20, 42);
    let cid = s.add(0, &payload(600_000, 8)).unwrap();
    s.cat(5, &cid, DEADLINE).unwrap();
    s.cat(6, &cid, DEADLINE).unwrap();
    s.advance(Duration::from_secs(13 * 3600));
    s.drain();
    let st = s.stats();
    assert!(st.bytes_sent > 0);
    assert_eq!(st.bytes_sent, st.bytes_received);
    let per_peer_sent: u64 = s.nodes().iter().map(|n| n.ledger().total_sent()).sum();
    let per_peer_recv: u64 = s.nodes().iter().map(|n| n.ledger().total_received()).sum();
    assert_eq!(per_peer_sent, per_peer_recv);
}

#[test]
fn corrupt_peer_is_skipped() {
    let mut s = sim(20, 42);
    let cid = s.add(0, b"integrity").unwrap();
    s.cat(9, &cid, DEADLINE).unwrap();
    s.inject_corrupt_next_block();
    // Either a clean provider answers or the corruption is reported.
    match s.cat(15, &cid, DEADLINE) {
        Ok(bytes) => assert_eq!(bytes, b"integrity"),
        Err(SimError::IntegrityError { cid: c, .. }) => assert_eq!(c, cid),
        Err(e) => panic!("{e:?}"),
    }
}

#[test]
fn pinned_content_outlives_uploader() {
    let mut s = sim(20, 42);
    let data = payload(300_000, 4);
    let cid = s.add(0, &data).unwrap();
    s.pin(10, &cid, DEADLINE).unwrap();
    s.leave(0);
    s.advance(Duration::from_secs(24 * 3600));
    assert_eq!(s.cat(17, &cid, DEADLINE).unwrap(), data);
}

#[test]
fn unpinned_cache_expires() {
    let mut s = sim(20, 42);
    let cid = s.add(0, b"cache me").unwrap();
    s.cat(4, &cid, DEADLINE).unwrap();
    assert!(s.node(4).store().has(&cid));
    s.advance(Duration::from_secs(13 * 3600));
    assert!(!s.node(4).store().has(&cid));
    assert!(s.node(0).store().has(&cid));
}

#[test]
fn republish_keeps_records_alive() {
    let mut s = sim(20, 42);
    let cid = s.add(0, b"long lived").unwrap();
    s.advance(Duration::from_secs(48 * 3600));
    assert!(provider_set(&mut s, 12, &cid).contains(&0));
}
