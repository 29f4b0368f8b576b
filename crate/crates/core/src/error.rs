use thiserror::Error;

use crate::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("event scheduled in the past: fire_time {fire_time} < now {now}")]
    PastEvent { fire_time: f64, now: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("block at height {height} has {votes} distinct votes, quorum is {quorum}")]
    InsufficientVotes {
        height: u64,
        votes: usize,
        quorum: usize,
    },
    #[error("block at height {height} does not extend local tip {tip}")]
    UnknownParent { height: u64, tip: u64 },
    #[error("node {0} is offline")]
    Offline(NodeId),
}

/// Invalid configuration. The message names the offending field.
#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {value}")]
    InvalidValue { key: String, value: String },
    #[error("{0}")]
    Invariant(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("compare: configs differ in field `{0}`, only `mode` may vary")]
    MismatchedConfigs(String),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serialize(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("total runtime must be positive")]
    ZeroRuntime,
    #[error("transaction {0} has no known creation time")]
    UnknownTransaction(u64),
}
