//! Run orchestration and artifact export.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::chain::{Block, ProtocolId};
use crate::config::{Mode, RunConfig};
use crate::engine::TraceRecord;
use crate::error::RunError;
use crate::metrics::{self, MetricsReport, MetricsRow, TxTimes};
use crate::system::{Observation, ProtocolController, SafetyReport, System, SystemOptions};
use crate::twin::{DecisionRecord, Twin};
use crate::workload::generate_arrivals;
use crate::NodeId;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunExtras {
    pub trace: bool,
    pub observations: bool,
}

pub struct RunOutput {
    pub config: RunConfig,
    pub report: MetricsReport,
    /// Canonical chain, genesis excluded.
    pub blocks: Vec<Block>,
    pub decisions: Vec<DecisionRecord>,
    pub safety: SafetyReport,
    pub faulty: BTreeSet<NodeId>,
    pub generated_txs: usize,
    /// Longest stretch without a new block, counting both run ends.
    pub max_block_gap: f64,
    pub tx_times: TxTimes,
    pub trace: Option<Vec<TraceRecord>>,
    pub observations: Vec<Observation>,
    pub events: u64,
}

/// The live system for `cfg`, before any event has run.
pub fn build_system(cfg: &RunConfig, extras: RunExtras) -> Result<System, RunError> {
    cfg.validate()?;
    let network = Arc::new(cfg.network()?);
    let arrivals = generate_arrivals(&cfg.workload(), 0.0, cfg.duration);
    let opts = SystemOptions {
        start_time: 0.0,
        twin_interval: (cfg.mode == Mode::Dynamic).then_some(cfg.twin_interval),
        trace: extras.trace,
        observations: extras.observations,
    };
    Ok(System::new(
        cfg.sim_params()?,
        network,
        cfg.start_protocol(),
        arrivals,
        opts,
    ))
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    run_with(cfg, RunExtras::default())
}

pub fn run_with(cfg: &RunConfig, extras: RunExtras) -> Result<RunOutput, RunError> {
    if cfg.mode == Mode::Dynamic {
        let mut twin = Twin::new(cfg.twin_config()?);
        let mut out = run_controlled(cfg, extras, Some(&mut twin))?;
        out.decisions = twin.into_decisions();
        Ok(out)
    } else {
        run_controlled(cfg, extras, None)
    }
}

/// Run with an arbitrary protocol controller in place of the twin.
pub fn run_controlled(
    cfg: &RunConfig,
    extras: RunExtras,
    controller: Option<&mut dyn ProtocolController>,
) -> Result<RunOutput, RunError> {
    let mut sys = build_system(cfg, extras)?;
    sys.run_until(cfg.duration, controller);
    let blocks = sys.ledger();
    let report = metrics::report(&blocks, sys.tx_times(), cfg.duration)?;
    let mut last = 0.0;
    let mut max_gap: f64 = 0.0;
    for b in &blocks {
        max_gap = max_gap.max(b.accepted_at - last);
        last = b.accepted_at;
    }
    max_gap = max_gap.max(cfg.duration - last);
    let faulty = cfg.faults()?.faulty().clone();
    Ok(RunOutput {
        config: cfg.clone(),
        report,
        blocks,
        decisions: Vec::new(),
        safety: sys.safety().clone(),
        faulty,
        generated_txs: sys.generated_transactions(),
        max_block_gap: max_gap,
        tx_times: sys.tx_times().clone(),
        trace: sys.trace().map(<[_]>::to_vec),
        observations: sys.observations().to_vec(),
        events: sys.events_processed(),
    })
}

#[derive(Debug, Serialize)]
struct BlockRecord<'a> {
    height: u64,
    id: String,
    round: u64,
    proposer: NodeId,
    proposed_at: f64,
    accepted_at: f64,
    protocol: ProtocolId,
    next_protocol: ProtocolId,
    n_txs: usize,
    /// `(node, receipt time)` of the accepting node's quorum.
    votes: Vec<(NodeId, f64)>,
    transactions: &'a [crate::chain::TxId],
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    config: &'a RunConfig,
    metrics: &'a MetricsReport,
    faulty: &'a BTreeSet<NodeId>,
    generated_txs: usize,
    max_block_gap: f64,
    acceptances: usize,
    quorum_violations: usize,
    conflicts: usize,
    decisions: usize,
    switches: usize,
    events: u64,
}

fn ser_err(e: impl std::fmt::Display) -> RunError {
    RunError::Serialize(e.to_string())
}

impl RunOutput {
    pub fn run_id(&self) -> String {
        format!("{}-seed{}", self.config.mode, self.config.seed)
    }

    pub fn metrics_row(&self) -> MetricsRow {
        MetricsRow::new(
            self.run_id(),
            self.config.mode.as_str(),
            self.config.seed,
            &self.report,
        )
    }

    pub fn switches(&self) -> usize {
        self.decisions
            .iter()
            .filter(|d| d.decision.is_some())
            .count()
    }

    pub fn decisions_jsonl(&self) -> Result<String, RunError> {
        let mut s = String::new();
        for d in &self.decisions {
            s.push_str(&serde_json::to_string(d).map_err(ser_err)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// `metrics.csv`, `blocks.csv`, `summary.json`, plus `decisions.jsonl`
    /// in dynamic mode and `chain.json` / `trace.jsonl` on request.
    pub fn write_outputs(&self, dir: &Path, dump_chain: bool) -> Result<(), RunError> {
        fs::create_dir_all(dir)?;
        write_metrics_csv(&dir.join("metrics.csv"), &[self.metrics_row()])?;
        let mut w = csv::Writer::from_path(dir.join("blocks.csv")).map_err(ser_err)?;
        for row in &self.report.per_block {
            w.serialize(row).map_err(ser_err)?;
        }
        w.flush()?;
        if self.config.mode == Mode::Dynamic {
            fs::write(dir.join("decisions.jsonl"), self.decisions_jsonl()?)?;
        }
        let summary = Summary {
            config: &self.config,
            metrics: &self.report,
            faulty: &self.faulty,
            generated_txs: self.generated_txs,
            max_block_gap: self.max_block_gap,
            acceptances: self.safety.acceptances,
            quorum_violations: self.safety.quorum_violations,
            conflicts: self.safety.conflicts.len(),
            decisions: self.decisions.len(),
            switches: self.switches(),
            events: self.events,
        };
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary).map_err(ser_err)?,
        )?;
        if dump_chain {
            let records: Vec<BlockRecord> = self
                .blocks
                .iter()
                .map(|b| BlockRecord {
                    height: b.height,
                    id: format!("{:016x}", b.id.0),
                    round: b.round,
                    proposer: b.proposer,
                    proposed_at: b.proposed_at,
                    accepted_at: b.accepted_at,
                    protocol: b.protocol,
                    next_protocol: b.next_protocol(),
                    n_txs: b.tx_count(),
                    votes: b.votes.iter().map(|v| (v.node, v.at)).collect(),
                    transactions: &b.transactions,
                })
                .collect();
            fs::write(
                dir.join("chain.json"),
                serde_json::to_string(&records).map_err(ser_err)?,
            )?;
        }
        if let Some(trace) = &self.trace {
            let mut f = std::io::BufWriter::new(fs::File::create(dir.join("trace.jsonl"))?);
            for r in trace {
                serde_json::to_writer(&mut f, r).map_err(ser_err)?;
                f.write_all(b"\n")?;
            }
            f.flush()?;
        }
        Ok(())
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(ser_err)?;
    for r in rows {
        w.serialize(r).map_err(ser_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Every mode on every seed, with matched seeds across modes. Returns the
/// per-run rows followed by one mean row per mode. Runs execute in parallel.
pub fn compare(configs: &[RunConfig], seeds: &[u64]) -> Result<Vec<MetricsRow>, RunError> {
    let Some(first) = configs.first() else {
        return Ok(Vec::new());
    };
    for c in configs {
        if let Some(field) = first.mismatch(c) {
            return Err(RunError::MismatchedConfigs(field.into()));
        }
    }
    let modes: BTreeSet<Mode> = configs.iter().map(|c| c.mode).collect();
    let jobs: Vec<RunConfig> = modes
        .iter()
        .flat_map(|&mode| {
            seeds.iter().map(move |&seed| RunConfig {
                mode,
                seed,
                ..first.clone()
            })
        })
        .collect();
    let results = run_parallel(&jobs);
    let mut rows = Vec::new();
    for r in results {
        rows.push(r?.metrics_row());
    }
    let means: Vec<MetricsRow> = modes
        .iter()
        .map(|m| {
            let per: Vec<MetricsRow> = rows
                .iter()
                .filter(|r| r.mode == m.as_str())
                .cloned()
                .collect();
            MetricsRow::mean(format!("{m}-mean"), m.as_str(), &per)
        })
        .collect();
    rows.extend(means);
    Ok(rows)
}

/// Run each config on its own thread, bounded by available parallelism.
pub fn run_parallel(jobs: &[RunConfig]) -> Vec<Result<RunOutput, RunError>> {
    let workers = std::thread::available_parallelism()
        .map_or(4, |n| n.get())
        .min(jobs.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<RunOutput, RunError>>>> =
        jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(cfg) = jobs.get(i) else { break };
                let r = run(cfg);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every job ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: Mode) -> RunConfig {
        RunConfig {
            mode,
            duration: 50.0,
            state_period: 25.0,
            twin_interval: 12.5,
            ..RunConfig::default()
        }
    }

    #[test]
    fn baseline_run_is_conservative() {
        let out = run(&small(Mode::Ibft)).unwrap();
        assert!(out.report.blocks > 0);
        assert!(out.report.committed_txs <= out.generated_txs);
        assert!(out.report.throughput <= out.generated_txs as f64 / 50.0);
        assert!(out.safety.is_clean(), "{:?}", out.safety);
        assert!(out.decisions.is_empty());
    }

    #[test]
    fn dynamic_run_logs_one_decision_per_interval() {
        let out = run(&small(Mode::Dynamic)).unwrap();
        assert_eq!(out.decisions.len(), 4);
        assert_eq!(out.decisions[3].t, 50.0);
    }

    #[test]
    fn compare_rejects_mismatched_configs() {
        let a = small(Mode::Ibft);
        let b = RunConfig {
            tx_rate: 5.0,
            ..small(Mode::Bigfoot)
        };
        assert!(
            matches!(compare(&[a, b], &[1]), Err(RunError::MismatchedConfigs(f)) if f == "tx_rate")
        );
    }

    #[test]
    fn outputs_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_with(
            &small(Mode::Dynamic),
            RunExtras {
                trace: true,
                observations: false,
            },
        )
        .unwrap();
        out.write_outputs(dir.path(), true).unwrap();
        for f in [
            "metrics.csv",
            "blocks.csv",
            "decisions.jsonl",
            "summary.json",
            "chain.json",
            "trace.jsonl",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(csv.starts_with(
            "run_id,mode,seed,avg_tx_latency_s,avg_inter_block_time_s,throughput_tps,blocks,committed_txs"
        ));
    }
}
