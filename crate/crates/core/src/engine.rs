//! Deterministic discrete-event core.
//!
//! A single virtual clock and a priority queue of timestamped events. Events
//! fire in `(fire_time, seq)` order, where `seq` is the insertion counter, so
//! two events scheduled for the same instant are delivered FIFO. The engine
//! owns no domain logic; callers pop events and dispatch them.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::Serialize;

use crate::error::EngineError;
use crate::NodeId;

/// Comparison slack for virtual time.
pub const TIME_EPSILON: f64 = 1e-9;

/// Category of a scheduled occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EventKind {
    MessageDelivery,
    RoundTimeout,
    FastPathTimeout,
    TxArrival,
    BlockIntervalTick,
    TwinIntervalBoundary,
    StateChangeBoundary,
}

/// Who an event is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Node(NodeId),
    Twin,
    System,
}

impl Serialize for Target {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Target::Node(id) => s.serialize_str(&format!("node:{id}")),
            Target::Twin => s.serialize_str("twin"),
            Target::System => s.serialize_str("system"),
        }
    }
}

/// Handle returned by [`Engine::schedule`]; used to cancel pending events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seq(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub fire_time: f64,
    pub seq: u64,
    pub kind: EventKind,
    pub target: Target,
    pub payload: P,
}

/// One processed event, as written to the optional trace dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: f64,
    pub seq: u64,
    pub kind: EventKind,
    pub target: Target,
}

struct Queued<P>(SimEvent<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap: reverse so the earliest (time, seq) pops first
        other
            .0
            .fire_time
            .total_cmp(&self.0.fire_time)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

/// Virtual clock plus event queue.
pub struct Engine<P> {
    now: f64,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
    pending: HashSet<u64>,
    processed: u64,
    last_popped: Option<(f64, u64)>,
    trace: Option<Vec<TraceRecord>>,
}

impl<P> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Engine<P> {
    pub fn new() -> Self {
        Self::starting_at(0.0)
    }

    /// An engine whose clock begins at `t0` instead of zero.
    pub fn starting_at(t0: f64) -> Self {
        Self {
            now: t0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            pending: HashSet::new(),
            processed: 0,
            last_popped: None,
            trace: None,
        }
    }

    pub fn enable_trace(&mut self) {
        if self.trace.is_none() {
            self.trace = Some(Vec::new());
        }
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Option<Vec<TraceRecord>> {
        self.trace.take()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Enqueue an event. Times within [`TIME_EPSILON`] below the clock are
    /// snapped to `now`; anything earlier is a logic error.
    pub fn schedule(
        &mut self,
        fire_time: f64,
        kind: EventKind,
        target: Target,
        payload: P,
    ) -> Result<EventHandle, EngineError> {
        if !fire_time.is_finite() || fire_time < self.now - TIME_EPSILON {
            return Err(EngineError::PastEvent {
                fire_time,
                now: self.now,
            });
        }
        let fire_time = fire_time.max(self.now);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.insert(seq);
        self.queue.push(Queued(SimEvent {
            fire_time,
            seq,
            kind,
            target,
            payload,
        }));
        Ok(EventHandle(seq))
    }

    /// Returns true iff the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.pending.remove(&handle.0)
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.pending.contains(&handle.0)
    }

    /// Pop the next live event with `fire_time <= t_end`, advancing the clock.
    pub fn pop_next(&mut self, t_end: f64) -> Option<SimEvent<P>> {
        loop {
            let head = self.queue.peek()?;
            if head.0.fire_time > t_end + TIME_EPSILON {
                return None;
            }
            let Queued(ev) = self.queue.pop().expect("peeked");
            if !self.pending.remove(&ev.seq) {
                continue;
            }
            if let Some(last) = self.last_popped {
                debug_assert!(
                    (ev.fire_time, ev.seq) > last,
                    "event order violated: {:?} after {:?}",
                    (ev.fire_time, ev.seq),
                    last
                );
            }
            self.last_popped = Some((ev.fire_time, ev.seq));
            self.now = ev.fire_time;
            self.processed += 1;
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceRecord {
                    t: ev.fire_time,
                    seq: ev.seq,
                    kind: ev.kind,
                    target: ev.target,
                });
            }
            return Some(ev);
        }
    }

    /// Move the clock forward without processing anything.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Process every event with `fire_time <= t_end`, then set the clock to
    /// `t_end`. Returns the number of events handled.
    pub fn run_until<F>(&mut self, t_end: f64, mut handler: F) -> usize
    where
        F: FnMut(&mut Self, SimEvent<P>),
    {
        let mut n = 0;
        while let Some(ev) = self.pop_next(t_end) {
            handler(self, ev);
            n += 1;
        }
        self.advance_to(t_end);
        n
    }
}
