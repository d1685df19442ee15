use std::collections::{BTreeMap, BTreeSet};

use crate::lifecycle::TimerKind;
use crate::time::Timestamp;

/// Deadline-ordered timers, at most one per (hostname, kind).
///
/// Ties break by hostname, then by the declaration order of [`TimerKind`].
#[derive(Debug, Clone, Default)]
pub struct TimerWheel {
    order: BTreeSet<(Timestamp, String, TimerKind)>,
    by_key: BTreeMap<(String, TimerKind), Timestamp>,
}

impl TimerWheel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets (or replaces) the timer for `(host, kind)`.
    pub fn schedule(&mut self, host: &str, kind: TimerKind, deadline: Timestamp) {
        self.cancel(host, kind);
        self.order.insert((deadline, host.to_string(), kind));
        self.by_key.insert((host.to_string(), kind), deadline);
    }

    pub fn cancel(&mut self, host: &str, kind: TimerKind) -> bool {
        match self.by_key.remove(&(host.to_string(), kind)) {
            Some(d) => {
                self.order.remove(&(d, host.to_string(), kind));
                true
            }
            None => false,
        }
    }

    pub fn cancel_all(&mut self, host: &str) {
        for k in TimerKind::ALL {
            self.cancel(host, k);
        }
    }

    pub fn deadline(&self, host: &str, kind: TimerKind) -> Option<Timestamp> {
        self.by_key.get(&(host.to_string(), kind)).copied()
    }

    pub fn next_deadline(&self) -> Option<Timestamp> {
        self.order.first().map(|(d, ..)| *d)
    }

    /// Removes and returns the earliest timer due at or before `now`.
    pub fn pop_due(&mut self, now: Timestamp) -> Option<(Timestamp, String, TimerKind)> {
        let first = self.order.first()?;
        if first.0 > now {
            return None;
        }
        let entry = self.order.pop_first().expect("non-empty");
        self.by_key.remove(&(entry.1.clone(), entry.2));
        Some(entry)
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }
}
