//! The simulated blockchain: producer replicas driven by the event engine.
//!
//! One `System` is the live physical system; the twin builds short-lived
//! instances of the same type for its what-if runs. Everything a run touches
//! (clock, queue, replicas, ledger) lives inside the instance.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use crate::chain::{
    accept_block, build_block, submit_transaction, Block, BlockId, BlockPolicy, NodeState,
    ProtocolId, SystemConfig, Transaction, TxId, Vote, KB,
};
use crate::consensus::{
    bigfoot_on_fastpath_timeout, proposer_for, ConsensusParams, Message, Output, Phase,
    ProtocolSwitchDirective, ReplicaCtx, RoundChangeState, RoundState, SyncPayload, VoteMsg,
};
use crate::engine::{Engine, EventHandle, EventKind, SimEvent, Target, TraceRecord};
use crate::network::{broadcast, NetworkModel};
use crate::NodeId;

/// Static parameters shared by the live system and every what-if instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub system: SystemConfig,
    pub policy: BlockPolicy,
    pub consensus: ConsensusParams,
    /// Per-message protocol overhead in bytes, excluding payload.
    pub msg_overhead: u64,
}

impl SimParams {
    pub fn new(system: SystemConfig, policy: BlockPolicy, consensus: ConsensusParams) -> Self {
        Self {
            system,
            policy,
            consensus,
            msg_overhead: KB,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Payload {
    Deliver { from: NodeId, msg: Message },
    RoundTimeout { height: u64, round: u64 },
    FastPathTimeout { height: u64, round: u64 },
    TxArrival(Transaction),
    ProposeTick { height: u64, round: u64 },
    TwinBoundary { interval: u64 },
    StateChange,
}

/// What the twin receives at each interval boundary: the transactions
/// broadcast and the blocks accepted during `[start, end)`. Block votes are
/// the proposer-side timestamped prepare votes.
#[derive(Debug, Clone)]
pub struct IntervalFeed {
    pub interval: u64,
    pub start: f64,
    pub end: f64,
    pub transactions: Vec<Transaction>,
    pub blocks: Vec<Block>,
}

/// Decides, once per interval, which protocol the chain should run next.
/// `None` keeps the current protocol.
pub trait ProtocolController {
    fn on_interval(&mut self, feed: IntervalFeed) -> Option<ProtocolId>;
}

/// Replays a fixed list of decisions, one per interval.
#[derive(Debug, Clone, Default)]
pub struct ScriptedController {
    pub decisions: Vec<Option<ProtocolId>>,
    pub feeds_seen: usize,
}

impl ProtocolController for ScriptedController {
    fn on_interval(&mut self, feed: IntervalFeed) -> Option<ProtocolId> {
        self.feeds_seen += 1;
        self.decisions
            .get(feed.interval as usize - 1)
            .copied()
            .flatten()
    }
}

/// Raw occurrences recorded for independent re-derivation of metrics.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    TxCreated {
        id: TxId,
        t: f64,
        size: u64,
    },
    BlockAccepted {
        node: NodeId,
        height: u64,
        block: BlockId,
        txs: Arc<[TxId]>,
        voters: usize,
        t: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SafetyReport {
    pub acceptances: usize,
    pub quorum_violations: usize,
    /// `(height, first block, conflicting block)`.
    pub conflicts: Vec<(u64, BlockId, BlockId)>,
    /// Transactions committed in more than one height.
    pub duplicate_txs: usize,
    /// Events that fired at a node while it was offline.
    pub offline_events: usize,
}

impl SafetyReport {
    pub fn is_clean(&self) -> bool {
        self.quorum_violations == 0
            && self.conflicts.is_empty()
            && self.duplicate_txs == 0
            && self.offline_events == 0
    }
}

#[derive(Debug, Default)]
struct Ledger {
    /// First accepted copy per height; `accepted_at` is the earliest acceptance.
    blocks: BTreeMap<u64, Block>,
    committed: HashMap<TxId, u64>,
    safety: SafetyReport,
}

#[derive(Debug, Clone, Copy)]
struct LastCommit {
    height: u64,
    round: u64,
    block: BlockId,
    sent_commit: bool,
}

struct Replica {
    state: NodeState,
    round: RoundState,
    rc: RoundChangeState,
    propose_handle: Option<EventHandle>,
    buffered: BTreeMap<u64, Vec<(NodeId, Message)>>,
    last_commit: Option<LastCommit>,
    timed_out: bool,
    sync_pending: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SystemOptions {
    pub start_time: f64,
    pub twin_interval: Option<f64>,
    pub trace: bool,
    pub observations: bool,
}

impl Default for SystemOptions {
    fn default() -> Self {
        Self {
            start_time: 0.0,
            twin_interval: None,
            trace: false,
            observations: true,
        }
    }
}

/// Starting point for a what-if run: a tip and a backlog, no history.
#[derive(Debug, Clone)]
pub struct ChainSummary {
    pub tip_height: u64,
    pub tip_accepted_at: f64,
    pub round: u64,
    /// Time left on the round timer at `start_time`.
    pub round_timer_remaining: f64,
    pub backlog: Vec<Transaction>,
}

pub struct System {
    params: Arc<SimParams>,
    network: Arc<dyn NetworkModel>,
    engine: Engine<Payload>,
    replicas: Vec<Replica>,
    ledger: Ledger,
    proposals: BTreeMap<BlockId, (NodeId, Vec<Vote>)>,
    tx_times: HashMap<TxId, f64>,
    generated: usize,
    observations: Option<Vec<Observation>>,
    pending_directive: Option<ProtocolId>,
    twin_interval: Option<f64>,
    feed_txs: Vec<Transaction>,
    feed_height: u64,
    last_boundary: f64,
    start_time: f64,
}

impl System {
    pub fn new(
        params: SimParams,
        network: Arc<dyn NetworkModel>,
        initial_protocol: ProtocolId,
        arrivals: Vec<Transaction>,
        opts: SystemOptions,
    ) -> Self {
        let root = Block::base(0, opts.start_time, initial_protocol);
        let mut sys = Self::empty(params, network, root, opts);
        let t = opts.start_time;
        for n in 0..sys.replicas.len() as NodeId {
            if sys.replicas[n as usize].state.online {
                sys.enter_round(n, 1, 0, t, None);
            }
        }
        sys.schedule_arrivals(arrivals);
        sys
    }

    /// A system that starts from a summarized tip instead of genesis.
    pub fn from_summary(
        params: SimParams,
        network: Arc<dyn NetworkModel>,
        protocol: ProtocolId,
        summary: &ChainSummary,
        arrivals: Vec<Transaction>,
        opts: SystemOptions,
    ) -> Self {
        let root = Block::base(summary.tip_height, summary.tip_accepted_at, protocol);
        let mut sys = Self::empty(params, network, root, opts);
        sys.feed_height = summary.tip_height;
        let t = opts.start_time;
        for tx in &summary.backlog {
            sys.tx_times.insert(tx.id, tx.created_at);
        }
        for n in 0..sys.replicas.len() as NodeId {
            let r = &mut sys.replicas[n as usize];
            if !r.state.online {
                continue;
            }
            for tx in &summary.backlog {
                submit_transaction(&mut r.state, *tx);
            }
            r.state.current_round = summary.round;
            sys.enter_round(
                n,
                summary.tip_height + 1,
                summary.round,
                t,
                Some(summary.round_timer_remaining.max(0.0)),
            );
        }
        sys.schedule_arrivals(arrivals);
        sys
    }

    fn empty(
        params: SimParams,
        network: Arc<dyn NetworkModel>,
        root: Block,
        opts: SystemOptions,
    ) -> Self {
        let params = Arc::new(params);
        let t = opts.start_time;
        let mut engine = Engine::starting_at(t);
        if opts.trace {
            engine.enable_trace();
        }
        let replicas = (0..params.system.nodes as NodeId)
            .map(|id| {
                let mut state = NodeState::new(id, params.system.is_producer(id), root.clone());
                state.online = network.is_online(id, t);
                Replica {
                    round: RoundState::new(root.height + 1, 0, state.current_protocol),
                    rc: RoundChangeState::new(root.height + 1),
                    state,
                    propose_handle: None,
                    buffered: BTreeMap::new(),
                    last_commit: None,
                    timed_out: false,
                    sync_pending: false,
                }
            })
            .collect();
        let mut sys = Self {
            params,
            network,
            engine,
            replicas,
            ledger: Ledger::default(),
            proposals: BTreeMap::new(),
            tx_times: HashMap::new(),
            generated: 0,
            observations: opts.observations.then(Vec::new),
            pending_directive: None,
            twin_interval: opts.twin_interval,
            feed_txs: Vec::new(),
            feed_height: root.height,
            last_boundary: t,
            start_time: t,
        };
        if let Some(next) = sys.network.next_state_change(t) {
            sys.schedule(
                next,
                EventKind::StateChangeBoundary,
                Target::System,
                Payload::StateChange,
            );
        }
        if let Some(ti) = opts.twin_interval {
            sys.schedule(
                t + ti,
                EventKind::TwinIntervalBoundary,
                Target::Twin,
                Payload::TwinBoundary { interval: 1 },
            );
        }
        sys
    }

    fn schedule_arrivals(&mut self, arrivals: Vec<Transaction>) {
        for tx in arrivals {
            self.schedule(
                tx.created_at,
                EventKind::TxArrival,
                Target::System,
                Payload::TxArrival(tx),
            );
        }
    }

    fn schedule(
        &mut self,
        t: f64,
        kind: EventKind,
        target: Target,
        payload: Payload,
    ) -> EventHandle {
        self.engine
            .schedule(t, kind, target, payload)
            .expect("simulation logic scheduled an event in the past")
    }

    pub fn now(&self) -> f64 {
        self.engine.now()
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.replicas[id as usize].state
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeState> {
        self.replicas.iter().map(|r| &r.state)
    }

    pub fn round_state(&self, id: NodeId) -> &RoundState {
        &self.replicas[id as usize].round
    }

    /// Canonical chain above the root, one entry per height, each stamped
    /// with its earliest acceptance time.
    pub fn ledger(&self) -> Vec<Block> {
        self.ledger.blocks.values().cloned().collect()
    }

    pub fn ledger_height(&self) -> u64 {
        self.ledger
            .blocks
            .keys()
            .next_back()
            .copied()
            .unwrap_or_else(|| self.root_height())
    }

    fn root_height(&self) -> u64 {
        self.replicas[0].state.chain[0].height
    }

    /// Proposer-side prepare votes collected for `block`.
    pub fn proposer_votes(&self, block: BlockId) -> Option<&[Vote]> {
        self.proposals.get(&block).map(|(_, v)| v.as_slice())
    }

    pub fn tx_times(&self) -> &HashMap<TxId, f64> {
        &self.tx_times
    }

    pub fn generated_transactions(&self) -> usize {
        self.generated
    }

    pub fn safety(&self) -> &SafetyReport {
        &self.ledger.safety
    }

    pub fn observations(&self) -> &[Observation] {
        self.observations.as_deref().unwrap_or(&[])
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.engine.trace()
    }

    pub fn events_processed(&self) -> u64 {
        self.engine.processed()
    }

    pub fn pending_directive(&self) -> Option<ProtocolId> {
        self.pending_directive
    }

    /// Queue a protocol switch to ride on the next proposed block.
    pub fn actuate(&mut self, directive: Option<ProtocolId>) {
        self.pending_directive = directive;
    }

    /// Process every event up to `t_end`. Returns the number handled.
    pub fn run_until(
        &mut self,
        t_end: f64,
        mut controller: Option<&mut dyn ProtocolController>,
    ) -> usize {
        let mut n = 0;
        while let Some(ev) = self.engine.pop_next(t_end) {
            self.handle(ev, &mut controller);
            n += 1;
        }
        self.engine.advance_to(t_end);
        n
    }

    fn handle(
        &mut self,
        ev: SimEvent<Payload>,
        controller: &mut Option<&mut dyn ProtocolController>,
    ) {
        let t = ev.fire_time;
        if let Target::Node(n) = ev.target {
            if !self.replicas[n as usize].state.online {
                self.ledger.safety.offline_events += 1;
                return;
            }
        }
        match (ev.target, ev.payload) {
            (Target::Node(n), Payload::Deliver { from, msg }) => self.deliver(n, from, msg, t),
            (Target::Node(n), Payload::RoundTimeout { height, round }) => {
                self.on_round_timeout(n, height, round, t)
            }
            (Target::Node(n), Payload::FastPathTimeout { height, round }) => {
                let r = &mut self.replicas[n as usize];
                if r.round.height == height && r.round.round == round {
                    let params = self.params.clone();
                    let ctx = ctx_for(&params, n, r.state.is_producer);
                    let out = bigfoot_on_fastpath_timeout(&mut r.round, &ctx, t);
                    self.apply_outputs(n, out, t);
                }
            }
            (Target::Node(n), Payload::ProposeTick { height, round }) => {
                self.try_propose(n, height, round, t)
            }
            (_, Payload::TxArrival(tx)) => self.on_tx(tx),
            (_, Payload::StateChange) => self.on_state_change(t),
            (_, Payload::TwinBoundary { interval }) => {
                self.on_twin_boundary(interval, t, controller)
            }
            (target, payload) => unreachable!("event {payload:?} for {target:?}"),
        }
    }

    fn on_tx(&mut self, tx: Transaction) {
        self.generated += 1;
        self.tx_times.insert(tx.id, tx.created_at);
        if let Some(obs) = self.observations.as_mut() {
            obs.push(Observation::TxCreated {
                id: tx.id,
                t: tx.created_at,
                size: tx.size,
            });
        }
        self.feed_txs.push(tx);
        for r in &mut self.replicas {
            submit_transaction(&mut r.state, tx);
        }
    }

    fn on_twin_boundary(
        &mut self,
        interval: u64,
        t: f64,
        controller: &mut Option<&mut dyn ProtocolController>,
    ) {
        let blocks: Vec<Block> = self
            .ledger
            .blocks
            .range(self.feed_height + 1..)
            .map(|(_, b)| {
                let mut b = b.clone();
                if let Some((_, votes)) = self.proposals.get(&b.id) {
                    b.votes = votes.clone();
                }
                b
            })
            .collect();
        if let Some(last) = blocks.last() {
            self.feed_height = last.height;
        }
        let feed = IntervalFeed {
            interval,
            start: self.last_boundary,
            end: t,
            transactions: std::mem::take(&mut self.feed_txs),
            blocks,
        };
        self.last_boundary = t;
        if let Some(ctrl) = controller.as_deref_mut() {
            let decision = ctrl.on_interval(feed);
            self.actuate(decision);
        }
        if let Some(ti) = self.twin_interval {
            self.schedule(
                t + ti,
                EventKind::TwinIntervalBoundary,
                Target::Twin,
                Payload::TwinBoundary {
                    interval: interval + 1,
                },
            );
        }
    }

    fn on_state_change(&mut self, t: f64) {
        for n in 0..self.replicas.len() as NodeId {
            let online = self.network.is_online(n, t);
            let was = self.replicas[n as usize].state.online;
            if was && !online {
                self.go_offline(n);
            } else if !was && online {
                self.come_online(n, t);
            }
        }
        if let Some(next) = self.network.next_state_change(t) {
            self.schedule(
                next,
                EventKind::StateChangeBoundary,
                Target::System,
                Payload::StateChange,
            );
        }
    }

    fn cancel_timers(&mut self, n: NodeId) {
        let r = &mut self.replicas[n as usize];
        for h in [
            r.round.timeout_handle.take(),
            r.round.fastpath_handle.take(),
            r.propose_handle.take(),
        ]
        .into_iter()
        .flatten()
        {
            self.engine.cancel(h);
        }
    }

    fn go_offline(&mut self, n: NodeId) {
        self.cancel_timers(n);
        let r = &mut self.replicas[n as usize];
        r.state.online = false;
        r.buffered.clear();
        r.sync_pending = false;
    }

    fn come_online(&mut self, n: NodeId, t: f64) {
        let r = &mut self.replicas[n as usize];
        r.state.online = true;
        let (height, round) = (r.state.height() + 1, r.state.current_round);
        self.enter_round(n, height, round, t, None);
        self.request_sync(n, None, t);
    }

    /// Ask an online peer for the blocks this node is missing.
    fn request_sync(&mut self, n: NodeId, peer: Option<NodeId>, t: f64) {
        if self.replicas[n as usize].sync_pending {
            return;
        }
        let k = self.replicas.len() as NodeId;
        let peer = peer.or_else(|| {
            (1..k)
                .map(|i| (n + i) % k)
                .find(|&p| self.params.system.is_producer(p) && self.network.is_online(p, t))
        });
        if let Some(p) = peer {
            self.replicas[n as usize].sync_pending = true;
            let tip_height = self.replicas[n as usize].state.height();
            self.unicast(n, p, Message::SyncRequest { tip_height }, t);
        }
    }

    fn unicast(&mut self, from: NodeId, to: NodeId, msg: Message, t: f64) {
        let size = msg.size(self.params.msg_overhead, self.params.policy.header_size);
        let at = t + self.network.message_delay(size, from, to, t);
        if self.network.is_online(to, at) {
            self.schedule(
                at,
                EventKind::MessageDelivery,
                Target::Node(to),
                Payload::Deliver { from, msg },
            );
        }
    }

    fn broadcast(&mut self, from: NodeId, msg: Message, t: f64) {
        let size = msg.size(self.params.msg_overhead, self.params.policy.header_size);
        let peers = 0..self.replicas.len() as NodeId;
        for (to, at) in broadcast(self.network.as_ref(), from, peers, size, t) {
            self.schedule(
                at,
                EventKind::MessageDelivery,
                Target::Node(to),
                Payload::Deliver {
                    from,
                    msg: msg.clone(),
                },
            );
        }
    }

    /// Start consensus instance `(height, round)` at node `n`.
    fn enter_round(&mut self, n: NodeId, height: u64, round: u64, t: f64, timer: Option<f64>) {
        self.cancel_timers(n);
        let timeout = timer.unwrap_or(self.params.consensus.round_timeout);
        let r = &mut self.replicas[n as usize];
        r.round = RoundState::new(height, round, r.state.current_protocol);
        if r.rc.height != height {
            r.rc = RoundChangeState::new(height);
        }
        r.state.current_round = round;
        r.timed_out = false;
        let tip_at = r.state.tip().accepted_at;
        let is_producer = r.state.is_producer;
        let handle = self.schedule(
            t + timeout,
            EventKind::RoundTimeout,
            Target::Node(n),
            Payload::RoundTimeout { height, round },
        );
        self.replicas[n as usize].round.timeout_handle = Some(handle);
        if is_producer && proposer_for(round, &self.params.system.producers) == n {
            let at = t.max(tip_at + self.params.policy.min_block_interval);
            let h = self.schedule(
                at,
                EventKind::BlockIntervalTick,
                Target::Node(n),
                Payload::ProposeTick { height, round },
            );
            self.replicas[n as usize].propose_handle = Some(h);
        }
        self.replay(n, t);
    }

    fn replay(&mut self, n: NodeId, t: f64) {
        let r = &mut self.replicas[n as usize];
        let height = r.round.height;
        r.buffered.retain(|&h, _| h >= height);
        if let Some(msgs) = r.buffered.remove(&height) {
            for (from, msg) in msgs {
                if !self.replicas[n as usize].state.online {
                    break;
                }
                self.deliver(n, from, msg, t);
            }
        }
    }

    fn try_propose(&mut self, n: NodeId, height: u64, round: u64, t: f64) {
        let r = &mut self.replicas[n as usize];
        r.propose_handle = None;
        if r.round.height != height || r.round.round != round || r.round.proposal.is_some() {
            return;
        }
        let switch = self
            .pending_directive
            .filter(|&p| p != r.state.current_protocol)
            .map(|p| ProtocolSwitchDirective {
                new_protocol: p,
                effective_height: height + 1,
            });
        let Ok(block) = build_block(
            &r.state,
            round,
            &self.params.policy,
            r.state.current_protocol,
            t,
            switch,
        ) else {
            return;
        };
        let block = Arc::new(block);
        self.proposals.insert(block.id, (n, block.votes.clone()));
        let params = self.params.clone();
        let r = &mut self.replicas[n as usize];
        let ctx = ctx_for(&params, n, r.state.is_producer);
        let out = r.round.on_own_proposal(&ctx, block, t);
        self.apply_outputs(n, out, t);
    }

    fn on_round_timeout(&mut self, n: NodeId, height: u64, round: u64, t: f64) {
        let params = self.params.clone();
        let r = &mut self.replicas[n as usize];
        if r.round.height != height || r.round.round != round || r.round.phase == Phase::Committed {
            return;
        }
        r.round.timeout_handle = None;
        r.timed_out = true;
        let behind = r.buffered.keys().any(|&h| h > height);
        let ctx = ctx_for(&params, n, r.state.is_producer);
        let out = r.rc.on_round_timeout(&ctx, round);
        let h = self.schedule(
            t + params.consensus.round_timeout,
            EventKind::RoundTimeout,
            Target::Node(n),
            Payload::RoundTimeout { height, round },
        );
        self.replicas[n as usize].round.timeout_handle = Some(h);
        if behind {
            self.request_sync(n, None, t);
        }
        self.apply_outputs(n, out, t);
    }

    fn deliver(&mut self, n: NodeId, from: NodeId, msg: Message, t: f64) {
        let params = self.params.clone();
        match msg {
            Message::SyncRequest { tip_height } => {
                let me = &self.replicas[n as usize].state;
                let blocks: Vec<Block> = (tip_height + 1..=me.height())
                    .filter_map(|h| me.block_at(h).cloned())
                    .collect();
                let payload = SyncPayload {
                    blocks,
                    round: me.current_round,
                    pending: me.pool.iter().copied().collect(),
                };
                self.unicast(n, from, Message::SyncResponse(Arc::new(payload)), t);
            }
            Message::SyncResponse(payload) => self.on_sync(n, &payload, t),
            Message::RoundChange {
                height,
                target_round,
            } => {
                let r = &mut self.replicas[n as usize];
                if height > r.round.height {
                    r.buffered.entry(height).or_default().push((from, msg));
                } else if height == r.round.height {
                    let ctx = ctx_for(&params, n, r.state.is_producer);
                    let out =
                        r.rc.on_round_change(&ctx, from, target_round, r.round.round);
                    self.apply_outputs(n, out, t);
                }
            }
            Message::PrePrepare(_) | Message::Prepare(_) | Message::Commit(_) => {
                if let Message::Prepare(v) = &msg {
                    self.record_proposer_vote(n, from, v, t);
                }
                let (height, round) = msg.slot().expect("slotted message");
                let r = &mut self.replicas[n as usize];
                if height < r.round.height {
                    self.help_late_commit(n, &msg, t);
                    return;
                }
                if height > r.round.height || round > r.round.round {
                    let far_behind =
                        height > r.round.height + 1 || (height > r.round.height && r.timed_out);
                    r.buffered.entry(height).or_default().push((from, msg));
                    if far_behind {
                        self.request_sync(n, Some(from), t);
                    }
                    return;
                }
                if round < r.round.round {
                    return;
                }
                let ctx = ctx_for(&params, n, r.state.is_producer);
                let out = r.round.on_message(&ctx, from, &msg, t);
                self.apply_outputs(n, out, t);
            }
        }
    }

    fn record_proposer_vote(&mut self, n: NodeId, from: NodeId, v: &VoteMsg, t: f64) {
        if let Some((proposer, votes)) = self.proposals.get_mut(&v.block) {
            if *proposer == n && !votes.iter().any(|x| x.node == from) {
                votes.push(Vote {
                    node: from,
                    at: t,
                    delay: t - v.sent_at,
                });
            }
        }
    }

    /// A node that committed on the fast path answers a late fallback commit
    /// so the peers behind it can still assemble a commit quorum.
    fn help_late_commit(&mut self, n: NodeId, msg: &Message, t: f64) {
        let Message::Commit(v) = msg else { return };
        let r = &mut self.replicas[n as usize];
        let Some(last) = r.last_commit.as_mut() else {
            return;
        };
        if !r.state.is_producer
            || last.sent_commit
            || last.height != v.height
            || last.round != v.round
            || last.block != v.block
        {
            return;
        }
        last.sent_commit = true;
        let reply = Message::Commit(VoteMsg {
            height: v.height,
            round: v.round,
            block: v.block,
            sent_at: t,
        });
        self.broadcast(n, reply, t);
    }

    fn on_sync(&mut self, n: NodeId, payload: &SyncPayload, t: f64) {
        let quorum = self.params.consensus.quorum;
        let r = &mut self.replicas[n as usize];
        r.sync_pending = false;
        let before = (r.round.height, r.round.round);
        let mut accepted = Vec::new();
        for b in &payload.blocks {
            if b.height == r.state.height() + 1
                && accept_block(&mut r.state, b.clone(), quorum, t).is_ok()
            {
                accepted.push(r.state.tip().clone());
            }
        }
        for tx in &payload.pending {
            submit_transaction(&mut r.state, *tx);
        }
        let height = r.state.height() + 1;
        let round = r.state.current_round.max(payload.round);
        for b in &accepted {
            self.record_acceptance(n, b, t);
        }
        if (height, round) != before {
            self.enter_round(n, height, round, t, None);
        }
    }

    fn apply_outputs(&mut self, n: NodeId, outputs: Vec<Output>, t: f64) {
        for o in outputs {
            if !self.replicas[n as usize].state.online {
                return;
            }
            match o {
                Output::Broadcast(msg) => self.broadcast(n, msg, t),
                Output::StartFastPathTimer => {
                    let r = &self.replicas[n as usize];
                    let (height, round) = (r.round.height, r.round.round);
                    let at = t + self.params.consensus.fastpath_timeout;
                    let h = self.schedule(
                        at,
                        EventKind::FastPathTimeout,
                        Target::Node(n),
                        Payload::FastPathTimeout { height, round },
                    );
                    self.replicas[n as usize].round.fastpath_handle = Some(h);
                }
                Output::Accept(cert) => self.commit(n, cert, t),
                Output::EnterRound(round) => {
                    let height = self.replicas[n as usize].round.height;
                    self.enter_round(n, height, round, t, None);
                }
            }
        }
    }

    fn commit(&mut self, n: NodeId, cert: Vec<Vote>, t: f64) {
        let quorum = self.params.consensus.quorum;
        let r = &mut self.replicas[n as usize];
        let Some(proposal) = r.round.proposal.clone() else {
            return;
        };
        let mut block = (*proposal).clone();
        block.votes = cert;
        r.last_commit = Some(LastCommit {
            height: block.height,
            round: block.round,
            block: block.id,
            sent_commit: r.round.sent_commit(),
        });
        if let Err(e) = accept_block(&mut r.state, block, quorum, t) {
            log::error!("node {n} failed to accept a committed block: {e}");
            self.ledger.safety.quorum_violations += 1;
            return;
        }
        let tip = r.state.tip().clone();
        let next_round = r.state.current_round;
        self.record_acceptance(n, &tip, t);
        self.enter_round(n, tip.height + 1, next_round, t, None);
    }

    fn record_acceptance(&mut self, n: NodeId, block: &Block, t: f64) {
        let quorum = self.params.consensus.quorum;
        let ledger = &mut self.ledger;
        ledger.safety.acceptances += 1;
        if block.distinct_voters() < quorum {
            ledger.safety.quorum_violations += 1;
        }
        if let Some(obs) = self.observations.as_mut() {
            obs.push(Observation::BlockAccepted {
                node: n,
                height: block.height,
                block: block.id,
                txs: block.transactions.clone(),
                voters: block.distinct_voters(),
                t,
            });
        }
        match ledger.blocks.get(&block.height) {
            Some(first) => {
                if first.id != block.id {
                    ledger
                        .safety
                        .conflicts
                        .push((block.height, first.id, block.id));
                }
            }
            None => {
                for id in block.transactions.iter() {
                    if ledger.committed.insert(*id, block.height).is_some() {
                        ledger.safety.duplicate_txs += 1;
                    }
                }
                let mut first = block.clone();
                first.accepted_at = t;
                ledger.blocks.insert(block.height, first);
                if self.pending_directive == Some(block.next_protocol()) && block.switch.is_some() {
                    self.pending_directive = None;
                }
            }
        }
    }

    /// Protocol in force for the next undecided height, per the ledger.
    pub fn current_protocol(&self) -> ProtocolId {
        self.ledger
            .blocks
            .values()
            .next_back()
            .map(Block::next_protocol)
            .unwrap_or(self.replicas[0].state.chain[0].protocol)
    }

    /// Heights at which each protocol decided, for auditing switches.
    pub fn protocol_by_height(&self) -> BTreeMap<u64, ProtocolId> {
        self.ledger
            .blocks
            .iter()
            .map(|(&h, b)| (h, b.protocol))
            .collect()
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    /// Nodes online at the current instant.
    pub fn online_nodes(&self) -> BTreeSet<NodeId> {
        self.replicas
            .iter()
            .filter(|r| r.state.online)
            .map(|r| r.state.id)
            .collect()
    }
}

fn ctx_for(params: &SimParams, me: NodeId, is_producer: bool) -> ReplicaCtx<'_> {
    ReplicaCtx {
        me,
        is_producer,
        producers: &params.system.producers,
        params: &params.consensus,
    }
}
