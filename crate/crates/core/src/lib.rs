//! Message-level discrete-event simulator of a permissioned BFT blockchain
//! whose consensus protocol (IBFT or BigFoot) is chosen at runtime by a
//! digital twin.
//!
//! The twin observes interval snapshots (transactions, blocks, votes), infers
//! which producers are offline and how slow each node is, simulates the next
//! interval under each protocol, and piggybacks a switch directive on the next
//! block when another protocol promises lower average transaction latency.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod config;
pub mod consensus;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod network;
pub mod runner;
pub mod system;
pub mod twin;
pub mod workload;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use chain::{Block, ProtocolId, Transaction};
pub use config::{Mode, RunConfig};
pub use error::{ConfigError, RunError};
pub use metrics::MetricsReport;
pub use runner::{compare, run, RunOutput};

pub type NodeId = u32;

pub(crate) const STREAM_WORKLOAD: u64 = 1;
pub(crate) const STREAM_NETWORK: u64 = 2;
pub(crate) const STREAM_TWIN: u64 = 4;

/// Independent deterministic random stream `stream` derived from `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
