//! Transaction arrivals for the live system and the twin's scenarios.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::chain::{Transaction, TxId, KB};
use crate::twin::TwinSnapshot;
use crate::{rng_stream, NodeId, STREAM_WORKLOAD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalProcess {
    Poisson,
    /// Evenly spaced arrivals, for debugging.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadConfig {
    /// Mean transactions per second.
    pub tx_rate: f64,
    pub tx_size: u64,
    pub arrival: ArrivalProcess,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            tx_rate: 50.0,
            tx_size: 5 * KB,
            arrival: ArrivalProcess::Poisson,
            seed: 1,
        }
    }
}

/// Live-system arrivals over `[t0, t1)`, ids numbered from zero in creation
/// order. Deterministic in `cfg.seed`.
pub fn generate_arrivals(cfg: &WorkloadConfig, t0: f64, t1: f64) -> Vec<Transaction> {
    let mut rng = rng_stream(cfg.seed, STREAM_WORKLOAD);
    arrivals_from(&mut rng, cfg.tx_rate, cfg.tx_size, cfg.arrival, t0, t1, 0)
}

/// Arrival times over `[t0, t1)` drawn from `rng`.
pub fn arrivals_from(
    rng: &mut ChaCha8Rng,
    rate: f64,
    size: u64,
    process: ArrivalProcess,
    t0: f64,
    t1: f64,
    first_id: u64,
) -> Vec<Transaction> {
    let mut out = Vec::new();
    if !(rate > 0.0) || t1 <= t0 {
        return out;
    }
    let mut push = |t: f64| {
        let id = TxId(first_id + out.len() as u64);
        out.push(Transaction {
            id,
            created_at: t,
            size,
        });
    };
    match process {
        ArrivalProcess::Poisson => {
            let gap = Exp::new(rate).expect("positive rate");
            let mut t = t0 + gap.sample(rng);
            while t < t1 {
                push(t);
                t += gap.sample(rng);
            }
        }
        ArrivalProcess::Uniform => {
            // random phase so consecutive windows do not align
            let step = 1.0 / rate;
            let mut t = t0 + rng.random::<f64>() * step;
            while t < t1 {
                push(t);
                t += step;
            }
        }
    }
    out
}

/// A hypothetical next interval handed to the what-if simulator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub horizon: f64,
    pub rate: f64,
    /// `(offset from interval start, size)`, offsets in `[0, horizon)`.
    pub arrivals: Vec<(f64, u64)>,
    pub offline: BTreeSet<NodeId>,
    pub delays: BTreeMap<NodeId, f64>,
}

/// Persist the last interval's observed state into a forecast for the next
/// one: same arrival rate, same offline set, same per-node delays, and a
/// fresh arrival schedule from the twin's own random stream.
pub fn build_scenario(
    snapshot: &TwinSnapshot,
    interval: f64,
    fallback_size: u64,
    process: ArrivalProcess,
    rng: &mut ChaCha8Rng,
) -> Scenario {
    let observed = snapshot.transactions.len();
    let rate = observed as f64 / interval;
    let size = if observed == 0 {
        fallback_size
    } else {
        snapshot.transactions.iter().map(|t| t.size).sum::<u64>() / observed as u64
    };
    let arrivals = arrivals_from(rng, rate, size, process, 0.0, interval, 0)
        .into_iter()
        .map(|t| (t.created_at, t.size))
        .collect();
    Scenario {
        horizon: interval,
        rate,
        arrivals,
        offline: snapshot.inferred_offline.clone(),
        delays: snapshot.est_delays.clone(),
    }
}
