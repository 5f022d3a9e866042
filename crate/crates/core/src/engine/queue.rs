use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{EngineError, NodeId, SimTime};

/// Sequence number assigned at insertion; doubles as a handle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle(pub u64);

#[derive(Debug, Clone)]
pub struct Event<K> {
    pub fire_time: SimTime,
    pub target: NodeId,
    pub kind: K,
    pub handle: EventHandle,
}

struct Entry<K>(Event<K>);

impl<K> PartialEq for Entry<K> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<K> Eq for Entry<K> {}

impl<K> Entry<K> {
    fn key(&self) -> (SimTime, EventHandle) {
        (self.0.fire_time, self.0.handle)
    }
}

impl<K> PartialOrd for Entry<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Entry<K> {
    // BinaryHeap is a max-heap; invert so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

/// Priority queue ordered by `(fire_time, insertion sequence)`.
pub struct Scheduler<K> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<K>>,
}

impl<K> Default for Scheduler<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> Scheduler<K> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(
        &mut self,
        fire_time: SimTime,
        target: NodeId,
        kind: K,
    ) -> Result<EventHandle, EngineError> {
        if fire_time < self.now {
            return Err(EngineError::PastEvent {
                fire: fire_time,
                now: self.now,
            });
        }
        let handle = EventHandle(self.next_seq);
        self.next_seq += 1;
        self.heap.push(Entry(Event {
            fire_time,
            target,
            kind,
            handle,
        }));
        Ok(handle)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.0.fire_time)
    }

    /// Removes the next event and advances the clock to its fire time.
    pub fn pop(&mut self) -> Option<Event<K>> {
        let Entry(ev) = self.heap.pop()?;
        debug_assert!(ev.fire_time >= self.now);
        self.now = ev.fire_time;
        Some(ev)
    }

    /// Moves the clock forward without executing anything (used to close a run).
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_tick_fires_in_insertion_order() {
        let mut q = Scheduler::new();
        q.schedule(SimTime(5), NodeId(0), "a").unwrap();
        q.schedule(SimTime(5), NodeId(1), "b").unwrap();
        q.schedule(SimTime(3), NodeId(2), "c").unwrap();
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.kind).collect();
        assert_eq!(order, vec!["c", "a", "b"]);
    }

    #[test]
    fn schedule_at_now_fires_after_earlier_same_tick_events() {
        let mut q = Scheduler::new();
        q.schedule(SimTime(10), NodeId(0), 1).unwrap();
        q.schedule(SimTime(10), NodeId(0), 2).unwrap();
        let first = q.pop().unwrap();
        assert_eq!(first.kind, 1);
        // inserted while executing tick 10
        q.schedule(q.now(), NodeId(0), 3).unwrap();
        assert_eq!(q.pop().unwrap().kind, 2);
        assert_eq!(q.pop().unwrap().kind, 3);
    }

    #[test]
    fn rejects_past_event() {
        let mut q = Scheduler::new();
        q.schedule(SimTime(10), NodeId(0), ()).unwrap();
        q.pop();
        let err = q.schedule(SimTime(9), NodeId(0), ()).unwrap_err();
        assert!(err.to_string().contains("past event"));
    }
}
