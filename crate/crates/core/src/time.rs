//! Integer-microsecond time used by every component.
//!
//! Virtual (simulated) and wall-clock runs share the same representation: a
//! [`Timestamp`] is microseconds since the start of a run. Durations are plain
//! [`std::time::Duration`] values and are truncated to whole microseconds when
//! added to a timestamp.

use std::fmt;
use std::ops::{Add, Sub};
use std::time::Duration;

/// Microseconds since the start of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_micros(us: u64) -> Self {
        Timestamp(us)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    /// Time elapsed since `earlier`, saturating at zero.
    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration::from_micros(self.0.saturating_sub(earlier.0))
    }
}

/// Whole microseconds of `d`, saturating at `u64::MAX`.
pub fn micros(d: Duration) -> u64 {
    u64::try_from(d.as_micros()).unwrap_or(u64::MAX)
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0.saturating_add(micros(rhs)))
    }
}

impl Sub<Timestamp> for Timestamp {
    type Output = Duration;

    fn sub(self, rhs: Timestamp) -> Duration {
        self.since(rhs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Formats a duration in the largest unit that represents it exactly
/// (`m`, `s`, `ms`, or `us`), the same dialect [`parse_duration`] accepts.
pub fn format_duration(d: Duration) -> String {
    let us = micros(d);
    if us != 0 && us % 60_000_000 == 0 {
        format!("{}m", us / 60_000_000)
    } else if us != 0 && us % 1_000_000 == 0 {
        format!("{}s", us / 1_000_000)
    } else if us % 1_000 == 0 {
        format!("{}ms", us / 1_000)
    } else {
        format!("{}us", us)
    }
}

/// Parses `<integer><unit>` with unit one of `us`, `ms`, `s`, `m`. No floats.
pub fn parse_duration(text: &str) -> Option<Duration> {
    let text = text.trim();
    let split = text.find(|c: char| !c.is_ascii_digit())?;
    let (digits, unit) = text.split_at(split);
    if digits.is_empty() {
        return None;
    }
    let value: u64 = digits.parse().ok()?;
    let scale = match unit {
        "us" => 1,
        "ms" => 1_000,
        "s" => 1_000_000,
        "m" => 60_000_000,
        _ => return None,
    };
    Some(Duration::from_micros(value.checked_mul(scale)?))
}
