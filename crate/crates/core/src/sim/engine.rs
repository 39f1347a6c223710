use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use thiserror::Error;

/// Simulated time in integer ticks.
pub type Tick = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("negative delay {0}")]
pub struct NegativeDelay(pub i64);

struct Scheduled<E> {
    time: Tick,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Event queue ordered by `(time, insertion seq)`.
pub struct Engine<E> {
    now: Tick,
    seq: u64,
    queue: BinaryHeap<Reverse<Scheduled<E>>>,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Self {
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn schedule(&mut self, delay: i64, event: E) -> Result<(), NegativeDelay> {
        if delay < 0 {
            return Err(NegativeDelay(delay));
        }
        self.schedule_after(delay as Tick, event);
        Ok(())
    }

    pub fn schedule_after(&mut self, delay: Tick, event: E) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Scheduled {
            time: self.now + delay,
            seq,
            event,
        }));
    }

    pub fn peek_time(&self) -> Option<Tick> {
        self.queue.peek().map(|Reverse(s)| s.time)
    }

    /// Removes the earliest event and moves the clock to it.
    pub fn pop(&mut self) -> Option<(Tick, E)> {
        let Reverse(s) = self.queue.pop()?;
        self.now = s.time;
        Some((s.time, s.event))
    }

    /// Moves the clock forward; never backward.
    pub fn advance_to(&mut self, t: Tick) {
        debug_assert!(self.peek_time().is_none_or(|next| next >= t));
        self.now = self.now.max(t);
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}
