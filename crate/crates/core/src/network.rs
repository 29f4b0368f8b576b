//! Per-node network state and crash-fault schedule.
//!
//! Every message between two nodes takes `base_latency + size / min(bw_from,
//! bw_to)` seconds. Bandwidth and online status are pure functions of
//! `(node, t)`, so the same model can be shared by any number of engines.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::ConfigError;
use crate::{rng_stream, NodeId, STREAM_NETWORK};

pub trait NetworkModel: Send + Sync {
    /// Bytes per second available to `node` at time `t`.
    fn bandwidth(&self, node: NodeId, t: f64) -> f64;

    fn base_latency(&self) -> f64;

    fn is_online(&self, node: NodeId, t: f64) -> bool;

    /// First instant strictly after `t` at which some node's online status
    /// may change.
    fn next_state_change(&self, t: f64) -> Option<f64>;

    fn message_delay(&self, size: u64, from: NodeId, to: NodeId, t: f64) -> f64 {
        let bw = self.bandwidth(from, t).min(self.bandwidth(to, t));
        self.base_latency() + size as f64 / bw
    }
}

/// Recipients and delivery times for a message sent by `from` at `t`.
///
/// The sender is excluded, as is every peer that will be offline when the
/// message would arrive. An offline sender produces nothing.
pub fn broadcast(
    net: &dyn NetworkModel,
    from: NodeId,
    peers: impl IntoIterator<Item = NodeId>,
    size: u64,
    t: f64,
) -> Vec<(NodeId, f64)> {
    if !net.is_online(from, t) {
        return Vec::new();
    }
    peers
        .into_iter()
        .filter(|&to| to != from)
        .filter_map(|to| {
            let at = t + net.message_delay(size, from, to, t);
            net.is_online(to, at).then_some((to, at))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum FaultPattern {
    /// No node ever goes offline.
    Never,
    /// Faulty nodes are offline during odd-numbered periods of this length.
    OddPeriods { period: f64 },
    /// Explicit half-open offline windows `[start, end)`.
    Intervals(Vec<OfflineWindow>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfflineWindow {
    pub node: NodeId,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSchedule {
    faulty: BTreeSet<NodeId>,
    pattern: FaultPattern,
}

impl FaultSchedule {
    pub fn new(faulty: BTreeSet<NodeId>, pattern: FaultPattern) -> Result<Self, ConfigError> {
        if let FaultPattern::Intervals(windows) = &pattern {
            if let Some(w) = windows.iter().find(|w| !faulty.contains(&w.node)) {
                return Err(ConfigError::Invariant(format!(
                    "faulty: node {} has an offline window but is not in the faulty set",
                    w.node
                )));
            }
            if windows.iter().any(|w| !(w.end > w.start)) {
                return Err(ConfigError::Invariant(
                    "fault windows must have end > start".into(),
                ));
            }
        }
        if let FaultPattern::OddPeriods { period } = pattern {
            if !(period > 0.0) {
                return Err(ConfigError::Invariant(
                    "state_period must be positive".into(),
                ));
            }
        }
        Ok(Self { faulty, pattern })
    }

    pub fn none() -> Self {
        Self {
            faulty: BTreeSet::new(),
            pattern: FaultPattern::Never,
        }
    }

    /// Pick `f` faulty producers from the run seed.
    pub fn random_faulty(producers: &[NodeId], f: usize, seed: u64) -> BTreeSet<NodeId> {
        let mut rng = rng_stream(seed, STREAM_NETWORK + 1);
        producers.choose_multiple(&mut rng, f).copied().collect()
    }

    pub fn faulty(&self) -> &BTreeSet<NodeId> {
        &self.faulty
    }

    pub fn pattern(&self) -> &FaultPattern {
        &self.pattern
    }

    pub fn is_online(&self, node: NodeId, t: f64) -> bool {
        if !self.faulty.contains(&node) {
            return true;
        }
        match &self.pattern {
            FaultPattern::Never => true,
            FaultPattern::OddPeriods { period } => (t / period).floor() as i64 % 2 == 0,
            FaultPattern::Intervals(windows) => !windows
                .iter()
                .any(|w| w.node == node && t >= w.start && t < w.end),
        }
    }

    pub fn next_change(&self, t: f64) -> Option<f64> {
        if self.faulty.is_empty() {
            return None;
        }
        match &self.pattern {
            FaultPattern::Never => None,
            FaultPattern::OddPeriods { period } => Some(((t / period).floor() + 1.0) * period),
            FaultPattern::Intervals(windows) => windows
                .iter()
                .flat_map(|w| [w.start, w.end])
                .filter(|&x| x > t)
                .min_by(f64::total_cmp),
        }
    }
}

/// Bandwidth that is redrawn for every node at each period boundary.
#[derive(Debug, Clone)]
pub struct NetworkSchedule {
    pub base_latency: f64,
    pub period: f64,
    /// `table[k][node]` is the bandwidth during `[k*period, (k+1)*period)`.
    table: Vec<Vec<f64>>,
}

impl NetworkSchedule {
    /// Draw every node's bandwidth uniformly from `levels` at each of the
    /// periods covering `[0, horizon)`.
    pub fn generate(
        nodes: usize,
        levels: &[f64],
        period: f64,
        horizon: f64,
        base_latency: f64,
        seed: u64,
    ) -> Self {
        assert!(!levels.is_empty(), "at least one bandwidth level");
        let periods = ((horizon / period).ceil() as usize).max(1);
        let mut rng: ChaCha8Rng = rng_stream(seed, STREAM_NETWORK);
        let table = (0..periods)
            .map(|_| {
                (0..nodes)
                    .map(|_| *levels.choose(&mut rng).expect("non-empty"))
                    .collect()
            })
            .collect();
        Self {
            base_latency,
            period,
            table,
        }
    }

    pub fn bandwidth(&self, node: NodeId, t: f64) -> f64 {
        let k = ((t.max(0.0) / self.period).floor() as usize).min(self.table.len() - 1);
        self.table[k][node as usize]
    }
}

/// The live network: time-varying bandwidth plus the crash-fault schedule.
#[derive(Debug, Clone)]
pub struct ScheduledNetwork {
    pub schedule: NetworkSchedule,
    pub faults: FaultSchedule,
}

impl NetworkModel for ScheduledNetwork {
    fn bandwidth(&self, node: NodeId, t: f64) -> f64 {
        self.schedule.bandwidth(node, t)
    }

    fn base_latency(&self) -> f64 {
        self.schedule.base_latency
    }

    fn is_online(&self, node: NodeId, t: f64) -> bool {
        self.faults.is_online(node, t)
    }

    fn next_state_change(&self, t: f64) -> Option<f64> {
        self.faults.next_change(t)
    }
}

/// Fixed per-node bandwidths and a fixed offline set. Infinite bandwidth
/// makes every message take exactly `base_latency`.
#[derive(Debug, Clone)]
pub struct StaticNetwork {
    pub base_latency: f64,
    pub bandwidth: Vec<f64>,
    pub offline: BTreeSet<NodeId>,
}

impl StaticNetwork {
    pub fn uniform(nodes: usize, base_latency: f64, bandwidth: f64) -> Self {
        Self {
            base_latency,
            bandwidth: vec![bandwidth; nodes],
            offline: BTreeSet::new(),
        }
    }

    pub fn with_offline(mut self, offline: impl IntoIterator<Item = NodeId>) -> Self {
        self.offline.extend(offline);
        self
    }
}

impl NetworkModel for StaticNetwork {
    fn bandwidth(&self, node: NodeId, _t: f64) -> f64 {
        self.bandwidth[node as usize]
    }

    fn base_latency(&self) -> f64 {
        self.base_latency
    }

    fn is_online(&self, node: NodeId, _t: f64) -> bool {
        !self.offline.contains(&node)
    }

    fn next_state_change(&self, _t: f64) -> Option<f64> {
        None
    }
}
