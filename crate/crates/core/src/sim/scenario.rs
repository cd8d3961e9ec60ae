//! The scripted upload-and-retrieve run behind `sim run`.

use std::collections::BTreeSet;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use super::{SimConfig, SimError, Simulation};
use crate::cid::Cid;
use crate::exchange::BandwidthSample;

pub const SCENARIO_PAYLOAD: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioSummary {
    pub trace_hash: String,
    pub events: u64,
    pub bytes_total: u64,
    pub providers_final: usize,
    pub root: Cid,
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub summary: ScenarioSummary,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub bandwidth: Vec<BandwidthSample>,
}

/// Node 0 adds a seeded 1 MiB payload, the middle node retrieves it, then
/// the network runs for `duration`. Providers are counted from the last
/// node at the end.
pub fn run_scenario(config: SimConfig, duration: Duration) -> Result<ScenarioReport, SimError> {
    let mut payload = vec![0u8; SCENARIO_PAYLOAD];
    Xoshiro256PlusPlus::seed_from_u64(config.seed).fill_bytes(&mut payload);
    let mut sim = Simulation::build(config);
    let n = sim.len();
    let root = sim.add(0, &payload)?;
    if n > 1 {
        let retrieved = sim.cat(n / 2, &root, Duration::from_secs(60))?;
        debug_assert_eq!(retrieved, payload);
    }
    sim.advance(duration);
    sim.drain();
    let providers: BTreeSet<_> = sim
        .find_providers(n - 1, &root)
        .into_iter()
        .map(|r| r.provider)
        .collect();
    sim.drain();
    let stats = sim.stats();
    Ok(ScenarioReport {
        summary: ScenarioSummary {
            trace_hash: sim.trace_hash().to_hex(),
            events: stats.events,
            bytes_total: stats.bytes_sent,
            providers_final: providers.len(),
            root,
        },
        bytes_sent: stats.bytes_sent,
        bytes_received: stats.bytes_received,
        bandwidth: sim.bandwidth_report(),
    })
}
