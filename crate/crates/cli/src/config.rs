use std::net::SocketAddr;
use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:5001";
pub const DEFAULT_GATEWAY_PORT: u16 = 8080;
pub const DEFAULT_PINSVC_PORT: u16 = 3001;

/// Daemon settings, read from a TOML file and overridden by flags.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// RPC API address.
    pub listen: SocketAddr,
    pub gateway_port: u16,
    pub pinsvc_port: u16,
    pub gc_ttl_hours: f64,
    pub visualizer_base: String,
    /// Size of the in-process network, including this node.
    pub nodes: usize,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            listen: DEFAULT_LISTEN.parse().expect("valid default"),
            gateway_port: DEFAULT_GATEWAY_PORT,
            pinsvc_port: DEFAULT_PINSVC_PORT,
            gc_ttl_hours: 12.0,
            visualizer_base: "http://127.0.0.1:5173".into(),
            nodes: 20,
            seed: 1,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Config =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        anyhow::ensure!(cfg.gc_ttl_hours > 0.0, "gc_ttl_hours must be positive");
        anyhow::ensure!(cfg.nodes >= 2, "nodes must be at least 2");
        Ok(cfg)
    }

    pub fn api_url(&self) -> String {
        format!("http://{}", self.listen)
    }

    pub fn pinsvc_url(&self) -> String {
        format!("http://{}:{}", self.listen.ip(), self.pinsvc_port)
    }
}
