//! Run configuration: flat `key = value` text with unit suffixes.
//!
//! ```text
//! # comments start with '#'
//! mode = dynamic
//! block_size = 1MB
//! bandwidths = 0.7MB/s, 1MB/s, 1.5MB/s, 2MB/s
//! round_timeout = 10s
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::chain::{BlockPolicy, ProtocolId, SystemConfig, KB, MB};
use crate::consensus::ConsensusParams;
use crate::error::ConfigError;
use crate::network::{
    FaultPattern, FaultSchedule, NetworkSchedule, OfflineWindow, ScheduledNetwork,
};
use crate::system::SimParams;
use crate::twin::{TwinConfig, TwinSchedule};
use crate::workload::{ArrivalProcess, WorkloadConfig};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ibft,
    Bigfoot,
    Dynamic,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Ibft, Mode::Bigfoot, Mode::Dynamic];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Ibft => "ibft",
            Mode::Bigfoot => "bigfoot",
            Mode::Dynamic => "dynamic",
        }
    }

    /// The fixed protocol of a baseline mode.
    pub fn fixed_protocol(&self) -> Option<ProtocolId> {
        match self {
            Mode::Ibft => Some(ProtocolId::Ibft),
            Mode::Bigfoot => Some(ProtocolId::BigFoot),
            Mode::Dynamic => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ibft" => Ok(Mode::Ibft),
            "bigfoot" => Ok(Mode::Bigfoot),
            "dynamic" => Ok(Mode::Dynamic),
            other => Err(invalid("mode", other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Faulty {
    /// `f` producers drawn from the run seed.
    Random,
    Nodes(BTreeSet<NodeId>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    /// Faulty producers are offline during every odd state period.
    OddPeriods,
    None,
    /// Explicit offline windows.
    Windows(Vec<(NodeId, f64, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub duration: f64,
    pub nodes: usize,
    pub producers: usize,
    pub f: usize,
    pub block_size: u64,
    pub block_interval: f64,
    pub header_size: u64,
    pub round_timeout: f64,
    pub fastpath_timeout: f64,
    pub base_latency: f64,
    /// Bandwidth levels in bytes per second; each node draws one per period.
    pub bandwidths: Vec<f64>,
    pub state_period: f64,
    pub twin_interval: f64,
    pub tx_rate: f64,
    pub tx_size: u64,
    pub arrival: ArrivalProcess,
    pub faulty: Faulty,
    pub fault_pattern: FaultMode,
    pub initial_protocol: ProtocolId,
    pub msg_overhead: u64,
    pub tie_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Dynamic,
            seed: 1,
            duration: 500.0,
            nodes: 10,
            producers: 10,
            f: 2,
            block_size: MB,
            block_interval: 0.1,
            header_size: KB,
            round_timeout: 10.0,
            fastpath_timeout: 0.25,
            base_latency: 0.05,
            bandwidths: vec![0.7e6, 1.0e6, 1.5e6, 2.0e6],
            state_period: 100.0,
            twin_interval: 25.0,
            tx_rate: 50.0,
            tx_size: 5 * KB,
            arrival: ArrivalProcess::Poisson,
            faulty: Faulty::Random,
            fault_pattern: FaultMode::OddPeriods,
            initial_protocol: ProtocolId::BigFoot,
            msg_overhead: KB,
            tie_tolerance: 0.05,
        }
    }
}

fn invalid(key: &str, value: &str) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
    }
}

/// Split a number from its unit suffix, e.g. `"1.5MB/s"` -> `(1.5, "MB/s")`.
fn split_unit(s: &str) -> (&str, &str) {
    let i = s
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .unwrap_or(s.len());
    (s[..i].trim(), s[i..].trim())
}

fn parse_bytes(key: &str, s: &str) -> Result<f64, ConfigError> {
    let (num, unit) = split_unit(s);
    let v: f64 = num.parse().map_err(|_| invalid(key, s))?;
    let scale = match unit.trim_end_matches("/s") {
        "" | "B" => 1.0,
        "KB" => KB as f64,
        "MB" => MB as f64,
        _ => return Err(invalid(key, s)),
    };
    let v = v * scale;
    if !(v.is_finite() && v >= 0.0) {
        return Err(invalid(key, s));
    }
    Ok(v)
}

fn parse_size(key: &str, s: &str) -> Result<u64, ConfigError> {
    let v = parse_bytes(key, s)?;
    if v.fract() != 0.0 {
        return Err(invalid(key, s));
    }
    Ok(v as u64)
}

fn parse_seconds(key: &str, s: &str) -> Result<f64, ConfigError> {
    let (num, unit) = split_unit(s);
    if !(unit.is_empty() || unit == "s") {
        return Err(invalid(key, s));
    }
    let v: f64 = num.parse().map_err(|_| invalid(key, s))?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(invalid(key, s));
    }
    Ok(v)
}

fn parse_num<T: FromStr>(key: &str, s: &str) -> Result<T, ConfigError> {
    s.parse().map_err(|_| invalid(key, s))
}

fn parse_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty())
}

/// `node:start-end`, e.g. `3:100-200`.
fn parse_window(key: &str, s: &str) -> Result<(NodeId, f64, f64), ConfigError> {
    let (node, span) = s.split_once(':').ok_or_else(|| invalid(key, s))?;
    let (a, b) = span.split_once('-').ok_or_else(|| invalid(key, s))?;
    Ok((
        parse_num(key, node.trim())?,
        parse_seconds(key, a.trim())?,
        parse_seconds(key, b.trim())?,
    ))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Set one field from its textual form. Does not re-validate.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "mode" => self.mode = v.parse()?,
            "seed" => self.seed = parse_num(key, v)?,
            "duration" => self.duration = parse_seconds(key, v)?,
            "nodes" => self.nodes = parse_num(key, v)?,
            "producers" => self.producers = parse_num(key, v)?,
            "f" => self.f = parse_num(key, v)?,
            "block_size" => self.block_size = parse_size(key, v)?,
            "block_interval" => self.block_interval = parse_seconds(key, v)?,
            "header_size" => self.header_size = parse_size(key, v)?,
            "round_timeout" => self.round_timeout = parse_seconds(key, v)?,
            "fastpath_timeout" => self.fastpath_timeout = parse_seconds(key, v)?,
            "base_latency" => self.base_latency = parse_seconds(key, v)?,
            "bandwidths" => {
                self.bandwidths = parse_list(v)
                    .map(|x| parse_bytes(key, x))
                    .collect::<Result<_, _>>()?;
            }
            "state_period" => self.state_period = parse_seconds(key, v)?,
            "twin_interval" => self.twin_interval = parse_seconds(key, v)?,
            "tx_rate" => self.tx_rate = parse_num(key, v.trim_end_matches("/s"))?,
            "tx_size" => self.tx_size = parse_size(key, v)?,
            "arrival" => {
                self.arrival = match v {
                    "poisson" => ArrivalProcess::Poisson,
                    "uniform" => ArrivalProcess::Uniform,
                    _ => return Err(invalid(key, v)),
                }
            }
            "faulty" => {
                self.faulty = if v == "random" {
                    Faulty::Random
                } else {
                    Faulty::Nodes(
                        parse_list(v)
                            .map(|x| parse_num(key, x))
                            .collect::<Result<_, _>>()?,
                    )
                }
            }
            "fault_pattern" => {
                self.fault_pattern = match v {
                    "odd_periods" => FaultMode::OddPeriods,
                    "none" => FaultMode::None,
                    _ => return Err(invalid(key, v)),
                }
            }
            "fault_windows" => {
                self.fault_pattern = FaultMode::Windows(
                    parse_list(v)
                        .map(|x| parse_window(key, x))
                        .collect::<Result<_, _>>()?,
                );
            }
            "initial_protocol" => self.initial_protocol = v.parse().map_err(|_| invalid(key, v))?,
            "msg_overhead" => self.msg_overhead = parse_size(key, v)?,
            "tie_tolerance" => self.tie_tolerance = parse_num(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system_config()?;
        self.consensus_params()?;
        self.twin_schedule()?;
        let positive = [
            ("duration", self.duration),
            ("block_interval", self.block_interval),
            ("state_period", self.state_period),
            ("tx_size", self.tx_size as f64),
            ("block_size", self.block_size as f64),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(ConfigError::Invariant(format!("{k} must be positive")));
        }
        if self.bandwidths.is_empty() || self.bandwidths.iter().any(|&b| !(b > 0.0)) {
            return Err(ConfigError::Invariant(
                "bandwidths: need at least one positive level".into(),
            ));
        }
        if !(self.tx_rate >= 0.0 && self.tx_rate.is_finite()) {
            return Err(invalid("tx_rate", &self.tx_rate.to_string()));
        }
        if self.header_size + self.tx_size > self.block_size {
            return Err(ConfigError::Invariant(
                "block_size: a block must fit its header and one transaction".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.tie_tolerance) {
            return Err(invalid("tie_tolerance", &self.tie_tolerance.to_string()));
        }
        self.faults()?;
        Ok(())
    }

    pub fn system_config(&self) -> Result<SystemConfig, ConfigError> {
        SystemConfig::new(self.nodes, self.producers, self.f)
    }

    pub fn consensus_params(&self) -> Result<ConsensusParams, ConfigError> {
        ConsensusParams::new(
            self.f,
            self.producers,
            self.round_timeout,
            self.fastpath_timeout,
        )
    }

    pub fn twin_schedule(&self) -> Result<TwinSchedule, ConfigError> {
        TwinSchedule::new(self.twin_interval, self.state_period)
    }

    pub fn block_policy(&self) -> BlockPolicy {
        BlockPolicy {
            max_block_size: self.block_size,
            min_block_interval: self.block_interval,
            header_size: self.header_size,
        }
    }

    pub fn sim_params(&self) -> Result<SimParams, ConfigError> {
        Ok(SimParams {
            system: self.system_config()?,
            policy: self.block_policy(),
            consensus: self.consensus_params()?,
            msg_overhead: self.msg_overhead,
        })
    }

    pub fn workload(&self) -> WorkloadConfig {
        WorkloadConfig {
            tx_rate: self.tx_rate,
            tx_size: self.tx_size,
            arrival: self.arrival,
            seed: self.seed,
        }
    }

    pub fn faults(&self) -> Result<FaultSchedule, ConfigError> {
        let producers: Vec<NodeId> = (0..self.producers as NodeId).collect();
        let faulty = match &self.faulty {
            Faulty::Random => FaultSchedule::random_faulty(&producers, self.f, self.seed),
            Faulty::Nodes(n) => n.clone(),
        };
        if let Some(bad) = faulty.iter().find(|n| !producers.contains(n)) {
            return Err(ConfigError::Invariant(format!(
                "faulty: node {bad} is not a producer"
            )));
        }
        let pattern = match &self.fault_pattern {
            FaultMode::None => return Ok(FaultSchedule::none()),
            FaultMode::OddPeriods => {
                if faulty.len() > self.f {
                    return Err(ConfigError::Invariant(format!(
                        "faulty: {} nodes exceed f = {}",
                        faulty.len(),
                        self.f
                    )));
                }
                FaultPattern::OddPeriods {
                    period: self.state_period,
                }
            }
            FaultMode::Windows(w) => FaultPattern::Intervals(
                w.iter()
                    .map(|&(node, start, end)| OfflineWindow { node, start, end })
                    .collect(),
            ),
        };
        let faulty = match &self.fault_pattern {
            FaultMode::Windows(w) if self.faulty == Faulty::Random => {
                w.iter().map(|x| x.0).collect()
            }
            _ => faulty,
        };
        FaultSchedule::new(faulty, pattern)
    }

    pub fn network(&self) -> Result<ScheduledNetwork, ConfigError> {
        Ok(ScheduledNetwork {
            schedule: NetworkSchedule::generate(
                self.nodes,
                &self.bandwidths,
                self.state_period,
                self.duration,
                self.base_latency,
                self.seed,
            ),
            faults: self.faults()?,
        })
    }

    pub fn twin_config(&self) -> Result<TwinConfig, ConfigError> {
        let mut t = TwinConfig::new(self.sim_params()?, self.twin_schedule()?, self.seed);
        t.base_latency = self.base_latency;
        t.fallback_bandwidth = self.bandwidths.iter().sum::<f64>() / self.bandwidths.len() as f64;
        t.fallback_tx_size = self.tx_size;
        t.arrival = self.arrival;
        t.tie_tolerance = self.tie_tolerance;
        t.initial_protocol = self.initial_protocol;
        Ok(t)
    }

    /// Protocol the chain starts with.
    pub fn start_protocol(&self) -> ProtocolId {
        self.mode.fixed_protocol().unwrap_or(self.initial_protocol)
    }

    /// First field other than `mode` and `seed` in which two configs differ.
    pub fn mismatch(&self, other: &RunConfig) -> Option<&'static str> {
        let a = Self {
            mode: Mode::Dynamic,
            seed: 0,
            ..self.clone()
        };
        let b = Self {
            mode: Mode::Dynamic,
            seed: 0,
            ..other.clone()
        };
        if a == b {
            return None;
        }
        let checks: [(&'static str, bool); 21] = [
            ("duration", a.duration == b.duration),
            ("nodes", a.nodes == b.nodes),
            ("producers", a.producers == b.producers),
            ("f", a.f == b.f),
            ("block_size", a.block_size == b.block_size),
            ("block_interval", a.block_interval == b.block_interval),
            ("header_size", a.header_size == b.header_size),
            ("round_timeout", a.round_timeout == b.round_timeout),
            ("fastpath_timeout", a.fastpath_timeout == b.fastpath_timeout),
            ("base_latency", a.base_latency == b.base_latency),
            ("bandwidths", a.bandwidths == b.bandwidths),
            ("state_period", a.state_period == b.state_period),
            ("twin_interval", a.twin_interval == b.twin_interval),
            ("tx_rate", a.tx_rate == b.tx_rate),
            ("tx_size", a.tx_size == b.tx_size),
            ("arrival", a.arrival == b.arrival),
            ("faulty", a.faulty == b.faulty),
            ("fault_pattern", a.fault_pattern == b.fault_pattern),
            ("initial_protocol", a.initial_protocol == b.initial_protocol),
            ("msg_overhead", a.msg_overhead == b.msg_overhead),
            ("tie_tolerance", a.tie_tolerance == b.tie_tolerance),
        ];
        checks.iter().find(|(_, same)| !same).map(|(k, _)| *k)
    }
}
