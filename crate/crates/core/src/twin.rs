//! The digital twin: a monitor, analyse, plan, execute loop over the chain.
//!
//! At every interval boundary the twin ingests the transactions and blocks
//! of the interval just ended, infers which producers are offline (no votes)
//! and how slow each node is (mean vote delay), simulates the next interval
//! once per protocol on a fresh engine, and asks for the protocol with the
//! lowest predicted average transaction latency.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chain::{Block, ProtocolId, Transaction, TxId, MB};
use crate::error::ConfigError;
use crate::metrics;
use crate::network::StaticNetwork;
use crate::system::{
    ChainSummary, IntervalFeed, ProtocolController, SimParams, System, SystemOptions,
};
use crate::workload::{build_scenario, ArrivalProcess, Scenario};
use crate::{rng_stream, NodeId, STREAM_TWIN};

/// Ids given to forecast transactions, far above any live id.
const SCENARIO_TX_BASE: u64 = 1 << 48;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinSchedule {
    /// Seconds between twin updates.
    pub interval: f64,
    /// Seconds between physical state changes.
    pub state_period: f64,
}

impl TwinSchedule {
    pub fn new(interval: f64, state_period: f64) -> Result<Self, ConfigError> {
        if !(interval > 0.0) {
            return Err(ConfigError::Invariant(
                "twin_interval must be positive".into(),
            ));
        }
        let ratio = state_period / interval;
        if !(ratio >= 1.0) || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(ConfigError::Invariant(format!(
                "TS must be integral multiple of TI: state_period = {state_period}, twin_interval = {interval}"
            )));
        }
        Ok(Self {
            interval,
            state_period,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinSnapshot {
    pub interval: u64,
    pub start: f64,
    pub end: f64,
    pub transactions: Vec<Transaction>,
    pub blocks: Vec<Block>,
    pub inferred_offline: BTreeSet<NodeId>,
    /// Mean one-way vote delay per node, seconds.
    pub est_delays: BTreeMap<NodeId, f64>,
    pub current_protocol: ProtocolId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WhatIfResult {
    pub protocol: ProtocolId,
    /// Predicted average transaction latency; infinite when nothing commits.
    pub latency: f64,
    pub blocks: usize,
    pub throughput: f64,
}

/// One line of `decisions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub interval: u64,
    pub t: f64,
    pub inferred_offline: BTreeSet<NodeId>,
    pub est_delays: BTreeMap<NodeId, f64>,
    /// `null` when the protocol cannot commit under the inferred state.
    pub pred_latency_ibft: Option<f64>,
    pub pred_latency_bigfoot: Option<f64>,
    /// Protocol to switch to; `null` keeps the current one.
    pub decision: Option<ProtocolId>,
    pub current: ProtocolId,
    pub observed_blocks: usize,
    pub observed_txs: usize,
}

impl DecisionRecord {
    pub fn prediction(&self, p: ProtocolId) -> Option<f64> {
        match p {
            ProtocolId::Ibft => self.pred_latency_ibft,
            ProtocolId::BigFoot => self.pred_latency_bigfoot,
        }
    }

    /// Protocol with the lowest logged prediction, if any is finite.
    pub fn argmin(&self) -> Option<ProtocolId> {
        ProtocolId::ALL
            .into_iter()
            .filter_map(|p| self.prediction(p).map(|l| (p, l)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(p, _)| p)
    }
}

#[derive(Debug, Clone)]
pub struct TwinConfig {
    pub params: SimParams,
    pub schedule: TwinSchedule,
    pub base_latency: f64,
    /// Assumed bandwidth when no vote delay has ever been observed.
    pub fallback_bandwidth: f64,
    pub fallback_tx_size: u64,
    pub arrival: ArrivalProcess,
    /// Relative latency gain below which the current protocol is kept.
    pub tie_tolerance: f64,
    pub initial_protocol: ProtocolId,
    pub seed: u64,
}

impl TwinConfig {
    pub fn new(params: SimParams, schedule: TwinSchedule, seed: u64) -> Self {
        Self {
            params,
            schedule,
            base_latency: 0.05,
            fallback_bandwidth: MB as f64,
            fallback_tx_size: 5 * crate::chain::KB,
            arrival: ArrivalProcess::Poisson,
            tie_tolerance: 0.05,
            initial_protocol: ProtocolId::BigFoot,
            seed,
        }
    }
}

/// Producers with no vote sent at or after `since`. A block accepted early
/// in the interval may carry votes cast before it; those say nothing about
/// the interval. `None` when no vote is recent enough to judge from.
pub fn infer_offline(
    blocks: &[Block],
    producers: &[NodeId],
    since: f64,
) -> Option<BTreeSet<NodeId>> {
    let voted: BTreeSet<NodeId> = blocks
        .iter()
        .flat_map(|b| b.votes.iter())
        .filter(|v| v.at - v.delay >= since)
        .map(|v| v.node)
        .collect();
    if voted.is_empty() {
        return None;
    }
    Some(
        producers
            .iter()
            .copied()
            .filter(|p| !voted.contains(p))
            .collect(),
    )
}

/// Mean delay of the votes each node sent at or after `since`. The
/// proposer's own vote carries no delay and is skipped.
pub fn estimate_delays(blocks: &[Block], since: f64) -> BTreeMap<NodeId, f64> {
    let mut acc: BTreeMap<NodeId, (f64, usize)> = BTreeMap::new();
    for b in blocks {
        for v in b
            .votes
            .iter()
            .filter(|v| v.node != b.proposer && v.at - v.delay >= since)
        {
            let e = acc.entry(v.node).or_default();
            e.0 += v.delay;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(n, (s, c))| (n, s / c as f64))
        .collect()
}

/// Argmin of the predicted latencies. Returns a protocol only when it
/// differs from `current` and beats it by more than `tolerance` (relative).
pub fn optimize(
    results: &[WhatIfResult],
    current: ProtocolId,
    tolerance: f64,
) -> Option<ProtocolId> {
    let best = results
        .iter()
        .filter(|r| r.latency.is_finite())
        .min_by(|a, b| a.latency.total_cmp(&b.latency));
    let Some(best) = best else {
        log::warn!("no protocol commits under the inferred state; keeping {current}");
        return None;
    };
    if best.protocol == current {
        return None;
    }
    match results.iter().find(|r| r.protocol == current) {
        Some(cur)
            if cur.latency.is_finite() && cur.latency - best.latency <= tolerance * cur.latency =>
        {
            None
        }
        _ => Some(best.protocol),
    }
}

/// Where a forecast starts: the observed tip and the observed backlog.
#[derive(Debug, Clone)]
struct Knowledge {
    tip_height: u64,
    tip_accepted_at: f64,
    tip_round: Option<u64>,
    protocol: ProtocolId,
    pending: BTreeMap<TxId, Transaction>,
}

pub struct Twin {
    cfg: TwinConfig,
    rng: ChaCha8Rng,
    known: Knowledge,
    offline: BTreeSet<NodeId>,
    delays: BTreeMap<NodeId, f64>,
    decisions: Vec<DecisionRecord>,
    last_predictions: Vec<WhatIfResult>,
}

impl Twin {
    pub fn new(cfg: TwinConfig) -> Self {
        let rng = rng_stream(cfg.seed, STREAM_TWIN);
        let known = Knowledge {
            tip_height: 0,
            tip_accepted_at: 0.0,
            tip_round: None,
            protocol: cfg.initial_protocol,
            pending: BTreeMap::new(),
        };
        Self {
            cfg,
            rng,
            known,
            offline: BTreeSet::new(),
            delays: BTreeMap::new(),
            decisions: Vec::new(),
            last_predictions: Vec::new(),
        }
    }

    pub fn decisions(&self) -> &[DecisionRecord] {
        &self.decisions
    }

    pub fn into_decisions(self) -> Vec<DecisionRecord> {
        self.decisions
    }

    pub fn last_predictions(&self) -> &[WhatIfResult] {
        &self.last_predictions
    }

    /// Fold an interval's feed into the twin's knowledge and infer state.
    pub fn ingest(&mut self, feed: IntervalFeed) -> TwinSnapshot {
        for tx in &feed.transactions {
            self.known.pending.insert(tx.id, *tx);
        }
        for b in &feed.blocks {
            for id in b.transactions.iter() {
                self.known.pending.remove(id);
            }
        }
        if let Some(tip) = feed.blocks.last() {
            self.known.tip_height = tip.height;
            self.known.tip_accepted_at = tip.accepted_at;
            self.known.tip_round = Some(tip.round);
            self.known.protocol = tip.next_protocol();
        }
        if let Some(offline) =
            infer_offline(&feed.blocks, &self.cfg.params.system.producers, feed.start)
        {
            self.offline = offline;
            self.delays = estimate_delays(&feed.blocks, feed.start);
        }
        TwinSnapshot {
            interval: feed.interval,
            start: feed.start,
            end: feed.end,
            transactions: feed.transactions,
            blocks: feed.blocks,
            inferred_offline: self.offline.clone(),
            est_delays: self.delays.clone(),
            current_protocol: self.known.protocol,
        }
    }

    fn summary(&self, t: f64) -> ChainSummary {
        let timeout = self.cfg.params.consensus.round_timeout;
        let start_round = self.known.tip_round.map_or(0, |r| r + 1);
        let elapsed = (t - self.known.tip_accepted_at).max(0.0);
        let skipped = (elapsed / timeout).floor();
        ChainSummary {
            tip_height: self.known.tip_height,
            tip_accepted_at: self.known.tip_accepted_at,
            round: start_round + skipped as u64,
            round_timer_remaining: timeout - (elapsed - skipped * timeout),
            backlog: self.known.pending.values().copied().collect(),
        }
    }

    /// Static network implied by the inferred state: per-node bandwidth
    /// backed out of the mean vote delay.
    fn forecast_network(&self, scenario: &Scenario) -> StaticNetwork {
        let base = self.cfg.base_latency;
        let vote = self.cfg.params.msg_overhead as f64;
        let implied: BTreeMap<NodeId, f64> = scenario
            .delays
            .iter()
            .filter(|(_, &d)| d > base)
            .map(|(&n, &d)| (n, vote / (d - base)))
            .collect();
        let default = if implied.is_empty() {
            self.cfg.fallback_bandwidth
        } else {
            implied.values().sum::<f64>() / implied.len() as f64
        };
        let nodes = self.cfg.params.system.nodes;
        StaticNetwork {
            base_latency: base,
            bandwidth: (0..nodes as NodeId)
                .map(|n| implied.get(&n).copied().unwrap_or(default))
                .collect(),
            offline: scenario.offline.clone(),
        }
    }

    /// Simulate the next interval under `protocol` on a fresh engine.
    pub fn what_if(&self, protocol: ProtocolId, scenario: &Scenario, t: f64) -> WhatIfResult {
        what_if(
            &self.cfg.params,
            Arc::new(self.forecast_network(scenario)),
            protocol,
            &self.summary(t),
            scenario,
            t,
        )
    }

    /// The whole loop body for one boundary. Returns the directive, if any.
    pub fn step(&mut self, feed: IntervalFeed) -> Option<ProtocolId> {
        let t = feed.end;
        let snapshot = self.ingest(feed);
        let scenario = build_scenario(
            &snapshot,
            self.cfg.schedule.interval,
            self.cfg.fallback_tx_size,
            self.cfg.arrival,
            &mut self.rng,
        );
        let network = Arc::new(self.forecast_network(&scenario));
        let summary = self.summary(t);
        let params = &self.cfg.params;
        let results: Vec<WhatIfResult> = std::thread::scope(|s| {
            let handles: Vec<_> = ProtocolId::ALL
                .into_iter()
                .map(|p| {
                    let (network, summary, scenario) = (network.clone(), &summary, &scenario);
                    s.spawn(move || what_if(params, network, p, summary, scenario, t))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("what-if simulation panicked"))
                .collect()
        });
        let current = snapshot.current_protocol;
        let decision = optimize(&results, current, self.cfg.tie_tolerance);
        let pred = |p: ProtocolId| {
            results
                .iter()
                .find(|r| r.protocol == p)
                .map(|r| r.latency)
                .filter(|l| l.is_finite())
        };
        log::debug!(
            "twin interval {} at {t}: offline {:?} ibft {:?} bigfoot {:?} -> {:?}",
            snapshot.interval,
            snapshot.inferred_offline,
            pred(ProtocolId::Ibft),
            pred(ProtocolId::BigFoot),
            decision
        );
        self.decisions.push(DecisionRecord {
            interval: snapshot.interval,
            t,
            inferred_offline: snapshot.inferred_offline,
            est_delays: snapshot.est_delays,
            pred_latency_ibft: pred(ProtocolId::Ibft),
            pred_latency_bigfoot: pred(ProtocolId::BigFoot),
            decision,
            current,
            observed_blocks: snapshot.blocks.len(),
            observed_txs: snapshot.transactions.len(),
        });
        self.last_predictions = results;
        decision
    }
}

impl ProtocolController for Twin {
    fn on_interval(&mut self, feed: IntervalFeed) -> Option<ProtocolId> {
        self.step(feed)
    }
}

/// One forecast run: start from `summary` at time `t`, apply the scenario's
/// arrivals, and measure the blocks produced within the horizon.
pub fn what_if(
    params: &SimParams,
    network: Arc<StaticNetwork>,
    protocol: ProtocolId,
    summary: &ChainSummary,
    scenario: &Scenario,
    t: f64,
) -> WhatIfResult {
    let arrivals = scenario
        .arrivals
        .iter()
        .enumerate()
        .map(|(i, &(offset, size))| Transaction {
            id: TxId(SCENARIO_TX_BASE + i as u64),
            created_at: t + offset,
            size,
        })
        .collect();
    let opts = SystemOptions {
        start_time: t,
        twin_interval: None,
        trace: false,
        observations: false,
    };
    let mut sys = System::from_summary(params.clone(), network, protocol, summary, arrivals, opts);
    sys.run_until(t + scenario.horizon, None);
    let blocks = sys.ledger();
    let report = metrics::report(&blocks, sys.tx_times(), scenario.horizon)
        .expect("forecast transactions all have creation times");
    // Waiting already done by the backlog is sunk and identical for every
    // candidate; counting it would only dilute the difference between them.
    let tx_times = sys.tx_times();
    let (mut sum, mut n) = (0.0, 0usize);
    for b in &blocks {
        for id in b.transactions.iter() {
            sum += b.accepted_at - tx_times[id].max(t);
            n += 1;
        }
    }
    let latency = if n > 0 {
        sum / n as f64
    } else if !blocks.is_empty() {
        // nothing to carry: compare on how long empty blocks take to commit
        blocks
            .iter()
            .map(|b| b.accepted_at - b.proposed_at)
            .sum::<f64>()
            / blocks.len() as f64
    } else {
        f64::INFINITY
    };
    WhatIfResult {
        protocol,
        latency,
        blocks: report.blocks,
        throughput: report.throughput,
    }
}
