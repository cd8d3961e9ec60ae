//! HTTP surfaces of a node: the RPC API, the content gateway and the
//! remote pinning service, all backed by one in-process network.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use farmledger::sim::NodeIdx;
use farmledger::{Cid, Multiaddr, PinningService, SimConfig, SimError, Simulation};
use parking_lot::Mutex;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

mod error;
pub mod gateway;
pub mod pinsvc;
pub mod rpc;

pub use error::ApiError;

/// Settings for a [`Host`].
#[derive(Debug, Clone)]
pub struct HostConfig {
    pub sim: SimConfig,
    /// Node serving RPC and gateway requests.
    pub node: NodeIdx,
    /// Node holding remote pins.
    pub pin_node: NodeIdx,
    /// Advertised by `/api/v0/id`; defaults to the node's network address.
    pub advertise: Option<(std::net::Ipv4Addr, u16)>,
    pub visualizer_base: String,
    /// Wall-clock budget for resolving content before answering 404.
    pub resolve_timeout: Duration,
    /// Pause between resolution attempts.
    pub retry_every: Duration,
    /// Simulated-time budget of one resolution attempt.
    pub attempt_deadline: Duration,
}

impl Default for HostConfig {
    fn default() -> Self {
        HostConfig {
            sim: SimConfig::new(20, 1),
            node: 0,
            pin_node: 1,
            advertise: None,
            visualizer_base: "http://127.0.0.1:5173".into(),
            resolve_timeout: Duration::from_secs(5),
            retry_every: Duration::from_millis(500),
            attempt_deadline: Duration::from_secs(10),
        }
    }
}

/// Shared state behind all routers. Lock order: pinning service, then
/// simulation.
pub struct Host {
    pub config: HostConfig,
    pub sim: Mutex<Simulation>,
    pub pinsvc: Mutex<PinningService>,
    started: Instant,
}

impl Host {
    pub fn new(config: HostConfig) -> Arc<Self> {
        let sim = Simulation::build(config.sim.clone());
        let pinsvc = PinningService::new(config.pin_node.min(sim.len() - 1));
        Arc::new(Host {
            config,
            sim: Mutex::new(sim),
            pinsvc: Mutex::new(pinsvc),
            started: Instant::now(),
        })
    }

    pub fn node(&self) -> NodeIdx {
        self.config.node
    }

    pub fn advertised_addr(&self) -> Multiaddr {
        let sim = self.sim.lock();
        let mut addr = sim.node(self.config.node).addr();
        if let Some((ip, port)) = self.config.advertise {
            addr.ip = ip;
            addr.port = port;
        }
        addr
    }

    /// Moves simulated time forward to at least the wall time elapsed since
    /// the host started.
    pub fn tick(&self) {
        let mut sim = self.sim.lock();
        let target = self.started.elapsed().as_millis() as u64;
        let now = sim.now().as_millis();
        if target > now {
            sim.advance(Duration::from_millis(target - now));
        }
    }

    /// Retrieves `cid` on the serving node, retrying until the wall-clock
    /// resolve timeout passes.
    pub async fn resolve(self: &Arc<Self>, cid: Cid) -> Result<Vec<u8>, SimError> {
        let start = Instant::now();
        loop {
            let host = self.clone();
            let result = tokio::task::spawn_blocking(move || {
                let mut sim = host.sim.lock();
                sim.cat(host.config.node, &cid, host.config.attempt_deadline)
            })
            .await
            .expect("resolver task panicked");
            match result {
                Err(SimError::NotFoundAnywhere(_)) => {}
                other => return other,
            }
            let elapsed = start.elapsed();
            if elapsed >= self.config.resolve_timeout {
                return result;
            }
            let wait = self
                .config
                .retry_every
                .min(self.config.resolve_timeout - elapsed);
            tokio::time::sleep(wait).await;
        }
    }

    /// Runs `f` against the simulation on the blocking pool.
    pub async fn with_sim<T: Send + 'static>(
        self: &Arc<Self>,
        f: impl FnOnce(&mut Simulation, NodeIdx) -> T + Send + 'static,
    ) -> T {
        let host = self.clone();
        tokio::task::spawn_blocking(move || {
            let mut sim = host.sim.lock();
            f(&mut sim, host.config.node)
        })
        .await
        .expect("simulation task panicked")
    }
}

/// Advances simulated time in the background every `period`.
pub fn spawn_clock(host: Arc<Host>, period: Duration) -> JoinHandle<()> {
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        loop {
            interval.tick().await;
            let h = host.clone();
            let _ = tokio::task::spawn_blocking(move || h.tick()).await;
        }
    })
}

/// Binds `addr` and serves `router` until the task is dropped. Returns the
/// bound address, useful with port 0.
pub async fn serve(
    router: axum::Router,
    addr: SocketAddr,
) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    serve_on(router, TcpListener::bind(addr).await?)
}

/// Serves `router` on an already bound listener.
pub fn serve_on(
    router: axum::Router,
    listener: TcpListener,
) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let local = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        let service = router.into_make_service_with_connect_info::<SocketAddr>();
        if let Err(e) = axum::serve(listener, service).await {
            tracing::error!(error = %e, "server stopped");
        }
    });
    Ok((local, handle))
}
