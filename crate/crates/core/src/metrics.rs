//! Average transaction latency, average inter-block time and throughput.

use std::collections::HashMap;

use serde::Serialize;

use crate::chain::{Block, TxId};
use crate::error::MetricsError;

/// Creation time of every transaction a run has seen.
pub type TxTimes = HashMap<TxId, f64>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockRow {
    pub height: u64,
    pub accepted_at: f64,
    pub n_txs: usize,
    /// Absent for empty blocks.
    pub latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Mean over committed transactions; absent when nothing committed.
    pub avg_tx_latency: Option<f64>,
    /// Mean gap between consecutive blocks; absent below two blocks.
    pub avg_inter_block_time: Option<f64>,
    pub throughput: f64,
    pub blocks: usize,
    pub committed_txs: usize,
    pub runtime: f64,
    #[serde(skip)]
    pub per_block: Vec<BlockRow>,
}

/// Mean of `accepted_at - created_at` over the block's transactions.
/// `None` for an empty block.
pub fn block_latency(block: &Block, tx_times: &TxTimes) -> Result<Option<f64>, MetricsError> {
    Ok(latency_sum(block, tx_times)?.map(|s| s / block.tx_count() as f64))
}

fn latency_sum(block: &Block, tx_times: &TxTimes) -> Result<Option<f64>, MetricsError> {
    if block.tx_count() == 0 {
        return Ok(None);
    }
    let mut sum = 0.0;
    for id in block.transactions.iter() {
        let created = tx_times
            .get(id)
            .ok_or(MetricsError::UnknownTransaction(id.0))?;
        sum += block.accepted_at - created;
    }
    Ok(Some(sum))
}

/// Mean of consecutive acceptance gaps, `blocks` in chain order.
pub fn avg_inter_block_time(blocks: &[Block]) -> Option<f64> {
    if blocks.len() < 2 {
        return None;
    }
    let total: f64 = blocks
        .windows(2)
        .map(|w| w[1].accepted_at - w[0].accepted_at)
        .sum();
    Some(total / (blocks.len() - 1) as f64)
}

pub fn throughput(committed: usize, runtime: f64) -> Result<f64, MetricsError> {
    if !(runtime > 0.0) {
        return Err(MetricsError::ZeroRuntime);
    }
    Ok(committed as f64 / runtime)
}

/// All three metrics over `blocks` (root excluded) for a run of `runtime`
/// seconds. The latency average is weighted by transaction count, which
/// makes it the plain mean over committed transactions.
pub fn report(
    blocks: &[Block],
    tx_times: &TxTimes,
    runtime: f64,
) -> Result<MetricsReport, MetricsError> {
    let mut per_block = Vec::with_capacity(blocks.len());
    let mut sum = 0.0;
    let mut committed = 0;
    for b in blocks {
        let s = latency_sum(b, tx_times)?;
        if let Some(s) = s {
            sum += s;
            committed += b.tx_count();
        }
        per_block.push(BlockRow {
            height: b.height,
            accepted_at: b.accepted_at,
            n_txs: b.tx_count(),
            latency_s: s.map(|s| s / b.tx_count() as f64),
        });
    }
    Ok(MetricsReport {
        avg_tx_latency: (committed > 0).then(|| sum / committed as f64),
        avg_inter_block_time: avg_inter_block_time(blocks),
        throughput: throughput(committed, runtime)?,
        blocks: blocks.len(),
        committed_txs: committed,
        runtime,
        per_block,
    })
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub mode: String,
    pub seed: String,
    pub avg_tx_latency_s: Option<f64>,
    pub avg_inter_block_time_s: Option<f64>,
    pub throughput_tps: f64,
    pub blocks: f64,
    pub committed_txs: f64,
}

impl MetricsRow {
    pub fn new(run_id: impl Into<String>, mode: &str, seed: u64, r: &MetricsReport) -> Self {
        Self {
            run_id: run_id.into(),
            mode: mode.into(),
            seed: seed.to_string(),
            avg_tx_latency_s: r.avg_tx_latency,
            avg_inter_block_time_s: r.avg_inter_block_time,
            throughput_tps: r.throughput,
            blocks: r.blocks as f64,
            committed_txs: r.committed_txs as f64,
        }
    }

    /// Column-wise mean of `rows`; absent values are skipped.
    pub fn mean(run_id: impl Into<String>, mode: &str, rows: &[MetricsRow]) -> Self {
        fn avg(v: impl Iterator<Item = f64>) -> Option<f64> {
            let (n, s) = v.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
            (n > 0).then(|| s / n as f64)
        }
        Self {
            run_id: run_id.into(),
            mode: mode.into(),
            seed: "mean".into(),
            avg_tx_latency_s: avg(rows.iter().filter_map(|r| r.avg_tx_latency_s)),
            avg_inter_block_time_s: avg(rows.iter().filter_map(|r| r.avg_inter_block_time_s)),
            throughput_tps: avg(rows.iter().map(|r| r.throughput_tps)).unwrap_or(0.0),
            blocks: avg(rows.iter().map(|r| r.blocks)).unwrap_or(0.0),
            committed_txs: avg(rows.iter().map(|r| r.committed_txs)).unwrap_or(0.0),
        }
    }
}
