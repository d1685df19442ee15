use std::collections::BTreeMap;

use crate::time::Timestamp;

/// Identifies a queued event; ordering is the firing order.
pub type EventKey = (Timestamp, u64);

/// Priority queue of timed events. Equal deadlines fire in insertion order.
#[derive(Debug, Clone)]
pub struct EventQueue<E> {
    events: BTreeMap<EventKey, E>,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            events: BTreeMap::new(),
            next_seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at: Timestamp, event: E) -> EventKey {
        let key = (at, self.next_seq);
        self.next_seq += 1;
        self.events.insert(key, event);
        key
    }

    pub fn pop(&mut self) -> Option<(Timestamp, E)> {
        self.events.pop_first().map(|((t, _), e)| (t, e))
    }

    pub fn next_time(&self) -> Option<Timestamp> {
        self.events.first_key_value().map(|((t, _), _)| *t)
    }

    pub fn cancel(&mut self, key: EventKey) -> Option<E> {
        self.events.remove(&key)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_deadlines_fire_in_insertion_order() {
        let mut q = EventQueue::new();
        q.push(Timestamp(5), "b");
        let k = q.push(Timestamp(1), "x");
        q.push(Timestamp(5), "c");
        q.push(Timestamp(1), "a");
        assert_eq!(q.cancel(k), Some("x"));
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).collect();
        assert_eq!(order, [(Timestamp(1), "a"), (Timestamp(5), "b"), (Timestamp(5), "c")]);
    }
}
