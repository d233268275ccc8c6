//! Discrete-event core: a virtual clock and a future-event set totally
//! ordered by `(fire_at, seq)`.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::time::SimTime;

/// Identifies the simulation entity an event is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Short stable tag used in event traces.
pub trait EventKind {
    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Clone)]
pub struct Event<K> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: EntityId,
    pub kind: K,
}

impl<K> PartialEq for Event<K> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<K> Eq for Event<K> {}

impl<K> PartialOrd for Event<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Event<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.fire_at, self.seq).cmp(&(other.fire_at, other.seq))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("cannot schedule at {fire_at}, clock is already at {now}")]
    SchedulingInPast { fire_at: SimTime, now: SimTime },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunStats {
    pub dispatched: u64,
    pub clock: SimTime,
}

pub struct Engine<K> {
    now: SimTime,
    next_seq: u64,
    dispatched: u64,
    queue: BinaryHeap<Reverse<Event<K>>>,
    cancelled: HashSet<u64>,
}

impl<K> Default for Engine<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> Engine<K> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            dispatched: 0,
            queue: BinaryHeap::new(),
            cancelled: HashSet::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Number of live (not cancelled) events still queued.
    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    pub fn schedule(
        &mut self,
        target: EntityId,
        kind: K,
        fire_at: SimTime,
    ) -> Result<EventHandle, EngineError> {
        if fire_at < self.now {
            return Err(EngineError::SchedulingInPast {
                fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event {
            fire_at,
            seq,
            target,
            kind,
        }));
        Ok(EventHandle(seq))
    }

    /// Cancels a pending event. Returns false if it already fired or was cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        let live = self.queue.iter().any(|Reverse(e)| e.seq == handle.0);
        live && self.cancelled.insert(handle.0)
    }

    /// Pops the next live event with `fire_at <= t_end` and advances the clock to it.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<K>> {
        loop {
            let head = self.queue.peek()?;
            if head.0.fire_at > t_end {
                return None;
            }
            let Reverse(ev) = self.queue.pop()?;
            if self.cancelled.remove(&ev.seq) {
                continue;
            }
            debug_assert!(ev.fire_at >= self.now);
            self.now = ev.fire_at;
            self.dispatched += 1;
            return Some(ev);
        }
    }

    /// Dispatches every event with `fire_at <= t_end` in `(fire_at, seq)` order,
    /// then leaves the clock at `t_end`.
    pub fn run_until<E, F>(&mut self, t_end: SimTime, mut handler: F) -> Result<RunStats, E>
    where
        F: FnMut(&mut Self, Event<K>) -> Result<(), E>,
    {
        let start = self.dispatched;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev)?;
        }
        if t_end > self.now {
            self.now = t_end;
        }
        Ok(RunStats {
            dispatched: self.dispatched - start,
            clock: self.now,
        })
    }
}
