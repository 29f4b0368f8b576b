//! Blockchain data model: transactions, blocks, per-node replicas and pools.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::consensus::ProtocolSwitchDirective;
use crate::error::{ChainError, ConfigError};
use crate::NodeId;

pub const KB: u64 = 1_000;
pub const MB: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TxId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolId {
    Ibft,
    BigFoot,
}

impl ProtocolId {
    pub const ALL: [ProtocolId; 2] = [ProtocolId::Ibft, ProtocolId::BigFoot];

    pub fn as_str(&self) -> &'static str {
        match self {
            ProtocolId::Ibft => "ibft",
            ProtocolId::BigFoot => "bigfoot",
        }
    }
}

impl fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtocolId {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ibft" => Ok(ProtocolId::Ibft),
            "bigfoot" => Ok(ProtocolId::BigFoot),
            other => Err(ConfigError::InvalidValue {
                key: "protocol".into(),
                value: other.into(),
            }),
        }
    }
}

/// Node set and fault tolerance of the permissioned system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Total node count K.
    pub nodes: usize,
    /// Ordered block-producer ids (M of them); the order drives proposer rotation.
    pub producers: Vec<NodeId>,
    pub f: usize,
}

impl SystemConfig {
    pub fn new(nodes: usize, producers: usize, f: usize) -> Result<Self, ConfigError> {
        let cfg = Self {
            nodes,
            producers: (0..producers as NodeId).collect(),
            f,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn producer_count(&self) -> usize {
        self.producers.len()
    }

    pub fn is_producer(&self, id: NodeId) -> bool {
        self.producers.contains(&id)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = self.producers.len();
        if m > self.nodes {
            return Err(ConfigError::Invariant(format!(
                "producers: M ({m}) exceeds node count K ({})",
                self.nodes
            )));
        }
        if m < 3 * self.f + 1 {
            return Err(ConfigError::Invariant(format!(
                "M < 3f+1: producers = {m}, f = {}",
                self.f
            )));
        }
        let distinct: BTreeSet<_> = self.producers.iter().collect();
        if distinct.len() != m || self.producers.iter().any(|&p| p as usize >= self.nodes) {
            return Err(ConfigError::Invariant(
                "producers: ids must be distinct and below K".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockPolicy {
    /// Maximum block size in bytes (BS).
    pub max_block_size: u64,
    /// Minimum seconds between consecutive accepted blocks (BI).
    pub min_block_interval: f64,
    pub header_size: u64,
}

impl Default for BlockPolicy {
    fn default() -> Self {
        Self {
            max_block_size: MB,
            min_block_interval: 0.1,
            header_size: KB,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transaction {
    pub id: TxId,
    /// Broadcast time.
    pub created_at: f64,
    pub size: u64,
}

/// A timestamped validator vote as recorded in a block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Vote {
    pub node: NodeId,
    /// Receipt time at the recording node.
    pub at: f64,
    /// One-way delay of the vote message (receipt minus signed send time).
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: BlockId,
    pub height: u64,
    pub round: u64,
    pub proposer: NodeId,
    pub proposed_at: f64,
    pub transactions: Arc<[TxId]>,
    pub votes: Vec<Vote>,
    pub protocol: ProtocolId,
    pub accepted_at: f64,
    pub parent: Option<BlockId>,
    pub size: u64,
    pub switch: Option<ProtocolSwitchDirective>,
}

impl Block {
    pub fn genesis(protocol: ProtocolId) -> Self {
        Self::base(0, 0.0, protocol)
    }

    /// A finalized starting point at `height`, used as the root of a chain
    /// that does not replay history.
    pub fn base(height: u64, accepted_at: f64, protocol: ProtocolId) -> Self {
        Self {
            id: BlockId(height.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED),
            height,
            round: 0,
            proposer: 0,
            proposed_at: accepted_at,
            transactions: Arc::from(Vec::new()),
            votes: Vec::new(),
            protocol,
            accepted_at,
            parent: None,
            size: 0,
            switch: None,
        }
    }

    pub fn tx_count(&self) -> usize {
        self.transactions.len()
    }

    pub fn distinct_voters(&self) -> usize {
        self.votes
            .iter()
            .map(|v| v.node)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Protocol that runs consensus for the next height after this block.
    pub fn next_protocol(&self) -> ProtocolId {
        self.switch.map_or(self.protocol, |d| d.new_protocol)
    }

    fn digest(&self) -> BlockId {
        let mut h = DefaultHasher::new();
        self.height.hash(&mut h);
        self.round.hash(&mut h);
        self.proposer.hash(&mut h);
        self.protocol.hash(&mut h);
        self.parent.hash(&mut h);
        self.transactions.hash(&mut h);
        self.switch
            .map(|d| (d.new_protocol, d.effective_height))
            .hash(&mut h);
        BlockId(h.finish())
    }
}

#[derive(Debug, Clone, Copy)]
struct PoolKey {
    created_at: f64,
    id: TxId,
}

impl PartialEq for PoolKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for PoolKey {}

impl PartialOrd for PoolKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PoolKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.created_at
            .total_cmp(&other.created_at)
            .then(self.id.cmp(&other.id))
    }
}

/// Pending transactions, oldest first.
#[derive(Debug, Clone, Default)]
pub struct TransactionPool {
    pending: BTreeMap<PoolKey, Transaction>,
    index: HashMap<TxId, PoolKey>,
}

impl TransactionPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn contains(&self, id: TxId) -> bool {
        self.index.contains_key(&id)
    }

    /// Inserts in `created_at` order; returns false for a duplicate id.
    pub fn insert(&mut self, tx: Transaction) -> bool {
        if self.index.contains_key(&tx.id) {
            return false;
        }
        let key = PoolKey {
            created_at: tx.created_at,
            id: tx.id,
        };
        self.index.insert(tx.id, key);
        self.pending.insert(key, tx);
        true
    }

    pub fn remove(&mut self, id: TxId) -> Option<Transaction> {
        let key = self.index.remove(&id)?;
        self.pending.remove(&key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transaction> {
        self.pending.values()
    }
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub is_producer: bool,
    /// Local replica; heights are consecutive from the first entry.
    pub chain: Vec<Block>,
    pub pool: TransactionPool,
    pub current_round: u64,
    pub current_protocol: ProtocolId,
    pub online: bool,
}

impl NodeState {
    pub fn new(id: NodeId, is_producer: bool, root: Block) -> Self {
        let current_protocol = root.next_protocol();
        Self {
            id,
            is_producer,
            chain: vec![root],
            pool: TransactionPool::new(),
            current_round: 0,
            current_protocol,
            online: true,
        }
    }

    pub fn tip(&self) -> &Block {
        self.chain.last().expect("chain always has a root")
    }

    pub fn height(&self) -> u64 {
        self.tip().height
    }

    pub fn block_at(&self, height: u64) -> Option<&Block> {
        let base = self.chain[0].height;
        height
            .checked_sub(base)
            .and_then(|i| self.chain.get(i as usize))
    }
}

/// Add a broadcast transaction to a producer's pool. Offline nodes and
/// duplicate ids leave the pool unchanged.
pub fn submit_transaction(node: &mut NodeState, tx: Transaction) -> bool {
    if !node.online || !node.is_producer {
        return false;
    }
    node.pool.insert(tx)
}

/// Longest oldest-first prefix of the pool that fits in one block.
pub fn select_transactions(pool: &TransactionPool, policy: &BlockPolicy) -> Vec<Transaction> {
    let mut used = policy.header_size;
    let mut out = Vec::new();
    for tx in pool.iter() {
        if used + tx.size > policy.max_block_size {
            break;
        }
        used += tx.size;
        out.push(*tx);
    }
    out
}

/// Assemble the next block on top of the proposer's tip. The proposer's own
/// vote is included.
pub fn build_block(
    proposer: &NodeState,
    round: u64,
    policy: &BlockPolicy,
    protocol: ProtocolId,
    now: f64,
    switch: Option<ProtocolSwitchDirective>,
) -> Result<Block, ChainError> {
    if !proposer.online {
        return Err(ChainError::Offline(proposer.id));
    }
    let tip = proposer.tip();
    let txs = select_transactions(&proposer.pool, policy);
    let size = policy.header_size + txs.iter().map(|t| t.size).sum::<u64>();
    let height = tip.height + 1;
    let mut block = Block {
        id: BlockId(0),
        height,
        round,
        proposer: proposer.id,
        proposed_at: now,
        transactions: txs.iter().map(|t| t.id).collect(),
        votes: vec![Vote {
            node: proposer.id,
            at: now,
            delay: 0.0,
        }],
        protocol,
        accepted_at: f64::NAN,
        parent: Some(tip.id),
        size,
        switch: switch.map(|d| ProtocolSwitchDirective {
            effective_height: height + 1,
            ..d
        }),
    };
    block.id = block.digest();
    Ok(block)
}

/// Append a committed block to a node's replica.
///
/// Requires `quorum` distinct votes and the node's tip as parent. Included
/// transactions leave the pool, the round advances past the block's round,
/// and any protocol directive carried by the block takes effect for the next
/// height.
pub fn accept_block(
    node: &mut NodeState,
    mut block: Block,
    quorum: usize,
    now: f64,
) -> Result<(), ChainError> {
    let votes = block.distinct_voters();
    if votes < quorum {
        return Err(ChainError::InsufficientVotes {
            height: block.height,
            votes,
            quorum,
        });
    }
    let tip = node.tip();
    if block.height != tip.height + 1 || block.parent != Some(tip.id) {
        return Err(ChainError::UnknownParent {
            height: block.height,
            tip: tip.height,
        });
    }
    for id in block.transactions.iter() {
        node.pool.remove(*id);
    }
    node.current_round = node.current_round.max(block.round + 1);
    node.current_protocol = block.protocol;
    if let Some(directive) = block.switch {
        crate::consensus::apply_switch(node, directive);
    }
    block.accepted_at = now;
    node.chain.push(block);
    Ok(())
}
