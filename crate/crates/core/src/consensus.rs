//! IBFT and BigFoot round state machines, round change and protocol switching.
//!
//! Transitions take the current state, one input and the local time, and
//! return the outputs the caller must act on (broadcasts, timers, block
//! acceptance). Nothing here touches the event queue or the network.
//!
//! Vote accounting follows one convention for both protocols: the proposer's
//! pre-prepare counts as its vote, so `n` replies from other validators mean
//! `n + 1` validator votes.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;

use crate::chain::{Block, BlockId, NodeState, ProtocolId, Transaction, Vote};
use crate::engine::EventHandle;
use crate::error::ConfigError;
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusParams {
    pub f: usize,
    /// 2f+1.
    pub quorum: usize,
    /// 3f+1.
    pub total_required: usize,
    /// Prepare replies needed for a BigFoot fast-path commit: one from every
    /// other producer.
    pub fast_path_replies: usize,
    pub round_timeout: f64,
    pub fastpath_timeout: f64,
}

impl ConsensusParams {
    pub fn new(
        f: usize,
        producers: usize,
        round_timeout: f64,
        fastpath_timeout: f64,
    ) -> Result<Self, ConfigError> {
        if producers < 3 * f + 1 {
            return Err(ConfigError::Invariant(format!(
                "M < 3f+1: producers = {producers}, f = {f}"
            )));
        }
        if !(fastpath_timeout > 0.0 && fastpath_timeout < round_timeout) {
            return Err(ConfigError::Invariant(format!(
                "fastpath_timeout must satisfy 0 < fastpath_timeout ({fastpath_timeout}) < round_timeout ({round_timeout})"
            )));
        }
        Ok(Self {
            f,
            quorum: 2 * f + 1,
            total_required: 3 * f + 1,
            fast_path_replies: producers - 1,
            round_timeout,
            fastpath_timeout,
        })
    }

    /// Replies that let a BigFoot node abandon the fast path for the fallback.
    pub fn fallback_replies(&self) -> usize {
        2 * self.f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProtocolSwitchDirective {
    pub new_protocol: ProtocolId,
    /// First height decided under `new_protocol`.
    pub effective_height: u64,
}

/// Round-robin proposer selection.
pub fn proposer_for(round: u64, producers: &[NodeId]) -> NodeId {
    assert!(!producers.is_empty(), "no producers");
    producers[(round % producers.len() as u64) as usize]
}

/// Adopt the protocol named by a directive carried in an accepted block.
/// Idempotent; a directive naming the current protocol changes nothing.
pub fn apply_switch(node: &mut NodeState, directive: ProtocolSwitchDirective) {
    node.current_protocol = directive.new_protocol;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteMsg {
    pub height: u64,
    pub round: u64,
    pub block: BlockId,
    /// Sender's signed timestamp.
    pub sent_at: f64,
}

#[derive(Debug, Clone)]
pub struct SyncPayload {
    pub blocks: Vec<Block>,
    pub round: u64,
    pub pending: Vec<Transaction>,
}

#[derive(Debug, Clone)]
pub enum Message {
    PrePrepare(Arc<Block>),
    Prepare(VoteMsg),
    Commit(VoteMsg),
    RoundChange { height: u64, target_round: u64 },
    SyncRequest { tip_height: u64 },
    SyncResponse(Arc<SyncPayload>),
}

impl Message {
    /// Wire size: fixed protocol overhead plus payload.
    pub fn size(&self, overhead: u64, header_size: u64) -> u64 {
        match self {
            Message::PrePrepare(b) => overhead + b.size,
            Message::SyncResponse(p) => overhead + header_size * p.blocks.len() as u64,
            _ => overhead,
        }
    }

    /// `(height, round)` for messages bound to one consensus instance.
    pub fn slot(&self) -> Option<(u64, u64)> {
        match self {
            Message::PrePrepare(b) => Some((b.height, b.round)),
            Message::Prepare(v) | Message::Commit(v) => Some((v.height, v.round)),
            _ => None,
        }
    }

    pub fn height(&self) -> Option<u64> {
        match self {
            Message::RoundChange { height, .. } => Some(*height),
            _ => self.slot().map(|s| s.0),
        }
    }
}

/// Phase tags. IBFT uses `PrePrepared`/`Prepared`, BigFoot uses
/// `FastPath`/`FallbackPath`; the declaration order is the progress order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Phase {
    Idle,
    PrePrepared,
    FastPath,
    Prepared,
    FallbackPath,
    Committed,
}

#[derive(Debug)]
pub enum Output {
    Broadcast(Message),
    StartFastPathTimer,
    /// Commit the proposal with this certificate.
    Accept(Vec<Vote>),
    EnterRound(u64),
}

/// Static facts a transition needs about the local node and round.
#[derive(Debug, Clone, Copy)]
pub struct ReplicaCtx<'a> {
    pub me: NodeId,
    pub is_producer: bool,
    pub producers: &'a [NodeId],
    pub params: &'a ConsensusParams,
}

impl ReplicaCtx<'_> {
    fn proposer(&self, round: u64) -> NodeId {
        proposer_for(round, self.producers)
    }

    fn is_validator(&self, node: NodeId) -> bool {
        self.producers.contains(&node)
    }
}

#[derive(Debug, Clone)]
pub struct RoundState {
    pub height: u64,
    pub round: u64,
    pub protocol: ProtocolId,
    pub phase: Phase,
    pub proposal: Option<Arc<Block>>,
    pub proposer_vote: Option<Vote>,
    prepares: BTreeMap<NodeId, (BlockId, Vote)>,
    commits: BTreeMap<NodeId, (BlockId, Vote)>,
    sent_commit: bool,
    fastpath_expired: bool,
    pub timeout_handle: Option<EventHandle>,
    pub fastpath_handle: Option<EventHandle>,
}

impl RoundState {
    pub fn new(height: u64, round: u64, protocol: ProtocolId) -> Self {
        Self {
            height,
            round,
            protocol,
            phase: Phase::Idle,
            proposal: None,
            proposer_vote: None,
            prepares: BTreeMap::new(),
            commits: BTreeMap::new(),
            sent_commit: false,
            fastpath_expired: false,
            timeout_handle: None,
            fastpath_handle: None,
        }
    }

    /// Prepare replies (excluding the proposer's implicit vote).
    pub fn prepare_replies(&self) -> usize {
        self.prepares.len()
    }

    pub fn commit_count(&self) -> usize {
        self.commits.len()
    }

    pub fn sent_commit(&self) -> bool {
        self.sent_commit
    }

    fn prepare_votes(&self) -> usize {
        self.prepares.len() + usize::from(self.proposer_vote.is_some())
    }

    fn set_phase(&mut self, phase: Phase) {
        debug_assert!(
            phase >= self.phase,
            "phase regression {:?} -> {:?}",
            self.phase,
            phase
        );
        self.phase = phase;
    }

    /// The local node is the proposer and has just built `block`.
    pub fn on_own_proposal(&mut self, ctx: &ReplicaCtx, block: Arc<Block>, t: f64) -> Vec<Output> {
        let mut out = vec![Output::Broadcast(Message::PrePrepare(block.clone()))];
        self.install_proposal(ctx, block, t, 0.0, &mut out);
        out
    }

    pub fn on_message(
        &mut self,
        ctx: &ReplicaCtx,
        from: NodeId,
        msg: &Message,
        t: f64,
    ) -> Vec<Output> {
        match self.protocol {
            ProtocolId::Ibft => ibft_on_message(self, ctx, from, msg, t),
            ProtocolId::BigFoot => bigfoot_on_message(self, ctx, from, msg, t),
        }
    }

    fn install_proposal(
        &mut self,
        ctx: &ReplicaCtx,
        block: Arc<Block>,
        t: f64,
        delay: f64,
        out: &mut Vec<Output>,
    ) {
        let id = block.id;
        self.proposer_vote = Some(Vote {
            node: block.proposer,
            at: t,
            delay,
        });
        self.prepares.retain(|_, (b, _)| *b == id);
        self.commits.retain(|_, (b, _)| *b == id);
        self.proposal = Some(block);
        self.set_phase(match self.protocol {
            ProtocolId::Ibft => Phase::PrePrepared,
            ProtocolId::BigFoot => Phase::FastPath,
        });
        let proposer = ctx.proposer(self.round);
        if ctx.is_producer && ctx.me != proposer {
            self.prepares.insert(
                ctx.me,
                (
                    id,
                    Vote {
                        node: ctx.me,
                        at: t,
                        delay: 0.0,
                    },
                ),
            );
            out.push(Output::Broadcast(Message::Prepare(VoteMsg {
                height: self.height,
                round: self.round,
                block: id,
                sent_at: t,
            })));
        }
        if self.protocol == ProtocolId::BigFoot {
            out.push(Output::StartFastPathTimer);
        }
    }

    fn accept_pre_prepare(
        &mut self,
        ctx: &ReplicaCtx,
        from: NodeId,
        block: &Arc<Block>,
        t: f64,
    ) -> Option<Vec<Output>> {
        let valid = self.proposal.is_none()
            && from == ctx.proposer(self.round)
            && block.proposer == from
            && block.height == self.height
            && block.round == self.round
            && block.protocol == self.protocol;
        if !valid {
            return None;
        }
        let mut out = Vec::new();
        self.install_proposal(ctx, block.clone(), t, t - block.proposed_at, &mut out);
        Some(out)
    }

    /// Record a Prepare or Commit; false for duplicates and non-validators.
    fn record_vote(
        &mut self,
        ctx: &ReplicaCtx,
        from: NodeId,
        v: &VoteMsg,
        t: f64,
        commit: bool,
    ) -> bool {
        if !ctx.is_validator(from) || v.height != self.height || v.round != self.round {
            return false;
        }
        if self.proposal.as_ref().is_some_and(|b| b.id != v.block) {
            return false;
        }
        if !commit && from == ctx.proposer(self.round) {
            return false;
        }
        let map = if commit {
            &mut self.commits
        } else {
            &mut self.prepares
        };
        if map.contains_key(&from) {
            return false;
        }
        map.insert(
            from,
            (
                v.block,
                Vote {
                    node: from,
                    at: t,
                    delay: t - v.sent_at,
                },
            ),
        );
        true
    }

    fn send_commit(&mut self, ctx: &ReplicaCtx, t: f64, out: &mut Vec<Output>) {
        if !ctx.is_producer || self.sent_commit {
            return;
        }
        let Some(block) = self.proposal.as_ref() else {
            return;
        };
        let id = block.id;
        self.sent_commit = true;
        self.commits.insert(
            ctx.me,
            (
                id,
                Vote {
                    node: ctx.me,
                    at: t,
                    delay: 0.0,
                },
            ),
        );
        out.push(Output::Broadcast(Message::Commit(VoteMsg {
            height: self.height,
            round: self.round,
            block: id,
            sent_at: t,
        })));
    }

    fn commit_certificate(&self) -> Vec<Vote> {
        self.commits.values().map(|(_, v)| *v).collect()
    }

    fn fast_certificate(&self) -> Vec<Vote> {
        self.proposer_vote
            .into_iter()
            .chain(self.prepares.values().map(|(_, v)| *v))
            .collect()
    }

    fn try_commit_quorum(&mut self, ctx: &ReplicaCtx, out: &mut Vec<Output>) {
        if self.phase != Phase::Committed
            && self.proposal.is_some()
            && self.commits.len() >= ctx.params.quorum
        {
            self.set_phase(Phase::Committed);
            out.push(Output::Accept(self.commit_certificate()));
        }
    }
}

fn ibft_check(state: &mut RoundState, ctx: &ReplicaCtx, t: f64, out: &mut Vec<Output>) {
    if state.proposal.is_none() || state.phase == Phase::Committed {
        return;
    }
    if state.phase < Phase::Prepared && state.prepare_votes() >= ctx.params.quorum {
        state.set_phase(Phase::Prepared);
        state.send_commit(ctx, t, out);
    }
    state.try_commit_quorum(ctx, out);
}

/// IBFT: pre-prepare, prepare, commit; 2f+1 votes at each voting step.
pub fn ibft_on_message(
    state: &mut RoundState,
    ctx: &ReplicaCtx,
    from: NodeId,
    msg: &Message,
    t: f64,
) -> Vec<Output> {
    let mut out = Vec::new();
    match msg {
        Message::PrePrepare(block) => match state.accept_pre_prepare(ctx, from, block, t) {
            Some(o) => out = o,
            None => return out,
        },
        Message::Prepare(v) => {
            if !state.record_vote(ctx, from, v, t, false) {
                return out;
            }
        }
        Message::Commit(v) => {
            if !state.record_vote(ctx, from, v, t, true) {
                return out;
            }
        }
        _ => return out,
    }
    ibft_check(state, ctx, t, &mut out);
    out
}

fn bigfoot_check(state: &mut RoundState, ctx: &ReplicaCtx, t: f64, out: &mut Vec<Output>) {
    if state.proposal.is_none() || state.phase == Phase::Committed {
        return;
    }
    if state.phase == Phase::FastPath && state.prepare_replies() >= ctx.params.fast_path_replies {
        state.set_phase(Phase::Committed);
        out.push(Output::Accept(state.fast_certificate()));
        return;
    }
    if state.phase == Phase::FastPath
        && state.fastpath_expired
        && state.prepare_replies() >= ctx.params.fallback_replies()
    {
        state.set_phase(Phase::FallbackPath);
        state.send_commit(ctx, t, out);
    }
    state.try_commit_quorum(ctx, out);
}

/// BigFoot: a fast path that commits on prepare replies from every other
/// validator, and a fallback commit phase entered when the fast-path timer
/// expires with at least 2f replies.
pub fn bigfoot_on_message(
    state: &mut RoundState,
    ctx: &ReplicaCtx,
    from: NodeId,
    msg: &Message,
    t: f64,
) -> Vec<Output> {
    let mut out = Vec::new();
    match msg {
        Message::PrePrepare(block) => match state.accept_pre_prepare(ctx, from, block, t) {
            Some(o) => out = o,
            None => return out,
        },
        Message::Prepare(v) => {
            if !state.record_vote(ctx, from, v, t, false) {
                return out;
            }
        }
        Message::Commit(v) => {
            if !state.record_vote(ctx, from, v, t, true) {
                return out;
            }
        }
        _ => return out,
    }
    bigfoot_check(state, ctx, t, &mut out);
    out
}

pub fn bigfoot_on_fastpath_timeout(
    state: &mut RoundState,
    ctx: &ReplicaCtx,
    t: f64,
) -> Vec<Output> {
    let mut out = Vec::new();
    state.fastpath_handle = None;
    if state.protocol != ProtocolId::BigFoot || state.phase != Phase::FastPath {
        return out;
    }
    state.fastpath_expired = true;
    bigfoot_check(state, ctx, t, &mut out);
    out
}

/// Round-change bookkeeping for one height.
#[derive(Debug, Clone, Default)]
pub struct RoundChangeState {
    pub height: u64,
    requests: BTreeMap<u64, BTreeSet<NodeId>>,
    sent: Option<u64>,
}

impl RoundChangeState {
    pub fn new(height: u64) -> Self {
        Self {
            height,
            ..Self::default()
        }
    }

    pub fn requests_for(&self, target: u64) -> usize {
        self.requests.get(&target).map_or(0, BTreeSet::len)
    }

    fn request(&mut self, ctx: &ReplicaCtx, target: u64, out: &mut Vec<Output>) {
        if !ctx.is_producer || self.sent.is_some_and(|s| s >= target) {
            return;
        }
        self.sent = Some(target);
        self.requests.entry(target).or_default().insert(ctx.me);
        out.push(Output::Broadcast(Message::RoundChange {
            height: self.height,
            target_round: target,
        }));
    }

    fn check(&mut self, ctx: &ReplicaCtx, current_round: u64, out: &mut Vec<Output>) {
        let ready = self
            .requests
            .iter()
            .rev()
            .find(|(&target, votes)| target > current_round && votes.len() >= ctx.params.quorum)
            .map(|(&target, _)| target);
        if let Some(target) = ready {
            self.requests.retain(|&r, _| r > target);
            out.push(Output::EnterRound(target));
        }
    }

    /// The local round timer fired without a commit: ask to move past it.
    pub fn on_round_timeout(&mut self, ctx: &ReplicaCtx, current_round: u64) -> Vec<Output> {
        let mut out = Vec::new();
        let target = self.sent.unwrap_or(current_round).max(current_round) + 1;
        self.request(ctx, target, &mut out);
        self.check(ctx, current_round, &mut out);
        out
    }

    pub fn on_round_change(
        &mut self,
        ctx: &ReplicaCtx,
        from: NodeId,
        target: u64,
        current_round: u64,
    ) -> Vec<Output> {
        let mut out = Vec::new();
        if target <= current_round || !ctx.is_validator(from) {
            return out;
        }
        self.requests.entry(target).or_default().insert(from);
        // f+1 requests include at least one correct node: join them
        if self.requests_for(target) > ctx.params.f {
            self.request(ctx, target, &mut out);
        }
        self.check(ctx, current_round, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_block, BlockPolicy};

    fn params(f: usize, m: usize) -> ConsensusParams {
        ConsensusParams::new(f, m, 10.0, 1.0).unwrap()
    }

    fn block(proposer: NodeId, round: u64, protocol: ProtocolId) -> Arc<Block> {
        let node = NodeState::new(proposer, true, Block::genesis(protocol));
        Arc::new(build_block(&node, round, &BlockPolicy::default(), protocol, 0.0, None).unwrap())
    }

    fn vote(b: &Block, sent_at: f64) -> VoteMsg {
        VoteMsg {
            height: b.height,
            round: b.round,
            block: b.id,
            sent_at,
        }
    }

    fn accepted(out: &[Output]) -> Option<usize> {
        out.iter().find_map(|o| match o {
            Output::Accept(v) => Some(v.len()),
            _ => None,
        })
    }

    fn broadcasts(out: &[Output]) -> Vec<&Message> {
        out.iter()
            .filter_map(|o| match o {
                Output::Broadcast(m) => Some(m),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn proposer_rotation() {
        let p: Vec<NodeId> = (0..10).collect();
        assert_eq!(proposer_for(0, &p), 0);
        assert_eq!(proposer_for(10, &p), 0);
        assert_eq!(proposer_for(3, &p), 3);
    }

    #[test]
    fn params_validation() {
        let p = params(2, 10);
        assert_eq!((p.quorum, p.total_required, p.fast_path_replies), (5, 7, 9));
        assert!(ConsensusParams::new(2, 7, 10.0, 10.0).is_err());
        assert!(ConsensusParams::new(2, 6, 10.0, 1.0).is_err());
    }

    #[test]
    fn ibft_prepare_then_commit_at_quorum() {
        let p = params(2, 7);
        let producers: Vec<NodeId> = (0..7).collect();
        let ctx = ReplicaCtx {
            me: 1,
            is_producer: true,
            producers: &producers,
            params: &p,
        };
        let b = block(0, 0, ProtocolId::Ibft);
        let mut s = RoundState::new(1, 0, ProtocolId::Ibft);
        let out = s.on_message(&ctx, 0, &Message::PrePrepare(b.clone()), 1.0);
        assert!(matches!(broadcasts(&out)[..], [Message::Prepare(_)]));
        assert_eq!(s.phase, Phase::PrePrepared);
        // proposer + self + 2 others = 4 votes, below 5
        for from in 2..4 {
            let out = s.on_message(&ctx, from, &Message::Prepare(vote(&b, 1.0)), 2.0);
            assert!(out.is_empty());
        }
        let out = s.on_message(&ctx, 4, &Message::Prepare(vote(&b, 1.0)), 2.0);
        assert!(matches!(broadcasts(&out)[..], [Message::Commit(_)]));
        assert_eq!(s.phase, Phase::Prepared);
        for from in 2..5 {
            let out = s.on_message(&ctx, from, &Message::Commit(vote(&b, 2.0)), 3.0);
            assert!(accepted(&out).is_none());
        }
        // duplicate commit ignored
        assert!(s
            .on_message(&ctx, 4, &Message::Commit(vote(&b, 2.0)), 3.0)
            .is_empty());
        let out = s.on_message(&ctx, 5, &Message::Commit(vote(&b, 2.0)), 3.0);
        assert_eq!(accepted(&out), Some(5));
        assert_eq!(s.phase, Phase::Committed);
    }

    #[test]
    fn ibft_ignores_wrong_proposer_and_stale_round() {
        let p = params(2, 7);
        let producers: Vec<NodeId> = (0..7).collect();
        let ctx = ReplicaCtx {
            me: 1,
            is_producer: true,
            producers: &producers,
            params: &p,
        };
        let mut s = RoundState::new(1, 0, ProtocolId::Ibft);
        let wrong = block(3, 0, ProtocolId::Ibft);
        assert!(s
            .on_message(&ctx, 3, &Message::PrePrepare(wrong), 1.0)
            .is_empty());
        assert!(s.proposal.is_none());
        let stale = block(6, 6, ProtocolId::Ibft);
        assert!(s
            .on_message(&ctx, 6, &Message::PrePrepare(stale.clone()), 1.0)
            .is_empty());
        assert!(s
            .on_message(&ctx, 2, &Message::Prepare(vote(&stale, 0.0)), 1.0)
            .is_empty());
        assert_eq!(s.prepare_replies(), 0);
    }

    #[test]
    fn commits_before_pre_prepare_are_counted() {
        let p = params(2, 7);
        let producers: Vec<NodeId> = (0..7).collect();
        let ctx = ReplicaCtx {
            me: 6,
            is_producer: true,
            producers: &producers,
            params: &p,
        };
        let b = block(0, 0, ProtocolId::Ibft);
        let mut s = RoundState::new(1, 0, ProtocolId::Ibft);
        for from in 0..5 {
            s.on_message(&ctx, from, &Message::Commit(vote(&b, 1.0)), 1.5);
        }
        let out = s.on_message(&ctx, 0, &Message::PrePrepare(b), 2.0);
        assert!(accepted(&out).is_some());
    }

    #[test]
    fn bigfoot_fast_path_needs_every_other_validator() {
        let p = params(2, 7);
        let producers: Vec<NodeId> = (0..7).collect();
        let ctx = ReplicaCtx {
            me: 1,
            is_producer: true,
            producers: &producers,
            params: &p,
        };
        let b = block(0, 0, ProtocolId::BigFoot);
        let mut s = RoundState::new(1, 0, ProtocolId::BigFoot);
        let out = s.on_message(&ctx, 0, &Message::PrePrepare(b.clone()), 1.0);
        assert!(out.iter().any(|o| matches!(o, Output::StartFastPathTimer)));
        assert_eq!(s.phase, Phase::FastPath);
        for from in 2..6 {
            let out = s.on_message(&ctx, from, &Message::Prepare(vote(&b, 1.0)), 1.2);
            assert!(accepted(&out).is_none());
        }
        // 6th reply (3f) commits: proposer + 6 = 7 votes, no commit messages
        let out = s.on_message(&ctx, 6, &Message::Prepare(vote(&b, 1.0)), 1.2);
        assert_eq!(accepted(&out), Some(7));
        assert!(broadcasts(&out).is_empty());
        assert!(!s.sent_commit());
    }

    #[test]
    fn bigfoot_fallback_after_timeout() {
        let p = params(2, 7);
        let producers: Vec<NodeId> = (0..7).collect();
        let ctx = ReplicaCtx {
            me: 1,
            is_producer: true,
            producers: &producers,
            params: &p,
        };
        let b = block(0, 0, ProtocolId::BigFoot);
        let mut s = RoundState::new(1, 0, ProtocolId::BigFoot);
        s.on_message(&ctx, 0, &Message::PrePrepare(b.clone()), 1.0);
        for from in 2..5 {
            s.on_message(&ctx, from, &Message::Prepare(vote(&b, 1.0)), 1.2);
        }
        assert_eq!(s.prepare_replies(), 4);
        let out = bigfoot_on_fastpath_timeout(&mut s, &ctx, 2.0);
        assert_eq!(s.phase, Phase::FallbackPath);
        assert!(matches!(broadcasts(&out)[..], [Message::Commit(_)]));
        for from in [0, 2, 3] {
            assert!(
                accepted(&s.on_message(&ctx, from, &Message::Commit(vote(&b, 2.0)), 2.5)).is_none()
            );
        }
        let out = s.on_message(&ctx, 4, &Message::Commit(vote(&b, 2.0)), 2.5);
        assert_eq!(accepted(&out), Some(5));
    }

    #[test]
    fn bigfoot_waits_below_fallback_threshold() {
        let p = params(2, 7);
        let producers: Vec<NodeId> = (0..7).collect();
        let ctx = ReplicaCtx {
            me: 1,
            is_producer: true,
            producers: &producers,
            params: &p,
        };
        let b = block(0, 0, ProtocolId::BigFoot);
        let mut s = RoundState::new(1, 0, ProtocolId::BigFoot);
        s.on_message(&ctx, 0, &Message::PrePrepare(b.clone()), 1.0);
        s.on_message(&ctx, 2, &Message::Prepare(vote(&b, 1.0)), 1.2);
        assert!(bigfoot_on_fastpath_timeout(&mut s, &ctx, 2.0).is_empty());
        assert_eq!(s.phase, Phase::FastPath);
    }

    #[test]
    fn round_change_needs_quorum() {
        let p = params(2, 7);
        let producers: Vec<NodeId> = (0..7).collect();
        let ctx = ReplicaCtx {
            me: 1,
            is_producer: true,
            producers: &producers,
            params: &p,
        };
        let mut rc = RoundChangeState::new(1);
        let out = rc.on_round_timeout(&ctx, 0);
        assert!(matches!(
            broadcasts(&out)[..],
            [Message::RoundChange {
                target_round: 1,
                ..
            }]
        ));
        for from in 2..5 {
            let out = rc.on_round_change(&ctx, from, 1, 0);
            assert!(!out.iter().any(|o| matches!(o, Output::EnterRound(_))));
        }
        let out = rc.on_round_change(&ctx, 5, 1, 0);
        assert!(out.iter().any(|o| matches!(o, Output::EnterRound(1))));
    }

    #[test]
    fn round_change_joins_after_f_plus_one() {
        let p = params(2, 7);
        let producers: Vec<NodeId> = (0..7).collect();
        let ctx = ReplicaCtx {
            me: 1,
            is_producer: true,
            producers: &producers,
            params: &p,
        };
        let mut rc = RoundChangeState::new(1);
        assert!(rc.on_round_change(&ctx, 2, 1, 0).is_empty());
        assert!(rc.on_round_change(&ctx, 3, 1, 0).is_empty());
        let out = rc.on_round_change(&ctx, 4, 1, 0);
        assert_eq!(broadcasts(&out).len(), 1);
        assert_eq!(rc.requests_for(1), 4);
    }

    #[test]
    fn switch_directive_applies_once() {
        let mut n = NodeState::new(0, true, Block::genesis(ProtocolId::Ibft));
        let d = ProtocolSwitchDirective {
            new_protocol: ProtocolId::BigFoot,
            effective_height: 2,
        };
        apply_switch(&mut n, d);
        assert_eq!(n.current_protocol, ProtocolId::BigFoot);
        apply_switch(&mut n, d);
        assert_eq!(n.current_protocol, ProtocolId::BigFoot);
    }
}
