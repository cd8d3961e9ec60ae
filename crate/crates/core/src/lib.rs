//! Content-addressed storage and a deterministic peer-to-peer network
//! simulator for farm records.

pub mod analytics;
pub mod cid;
pub mod clock;
pub mod dag;
pub mod dht;
pub mod exchange;
pub mod farm;
pub mod jwt;
pub mod node;
pub mod peer;
pub mod pinning;
pub mod sim;
pub mod wire;

pub use cid::{cid_from_bytes, parse_cid, Cid, CidError};
pub use clock::SimTime;
pub use dag::{build_dag, Block, BlockStore, Dag, DagError, DagNode, Link};
pub use dht::{ProviderRecord, Role};
pub use farm::{
    canonicalize, parse_csv, upload_dataset, Dataset, FarmError, FarmRecord, UploadReceipt,
};
pub use jwt::{issue_jwt, ApiCredentials, JwtError};
pub use node::{Node, NodeConfig};
pub use peer::{generate_peer, parse_multiaddr, render_multiaddr, Multiaddr, PeerId};
pub use pinning::{PinEntry, PinError, PinStatus, PinningService};
pub use sim::{SimConfig, SimError, Simulation};
