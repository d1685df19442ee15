//! Canonical, line-delimited event trace.
//!
//! Every record serializes to exactly one line:
//!
//! ```text
//! t=<int>us seq=<int> ch=<orch|app> kind=<ident> host=<name> inst=<int> <k=v ...>
//! ```
//!
//! Detail keys are sorted, so two traces are semantically equal iff they are
//! byte-equal.

mod diff;
mod metrics;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

use crate::time::Timestamp;

pub use diff::{diff_traces, Divergence};
pub use metrics::{compute_metrics, HostMetrics, LatencyHistogram, MetricsReport, HISTOGRAM_EDGES_US};

/// Record kinds permitted on the app-visible channel.
pub const APP_KINDS: [&str; 5] = ["connected", "connection-failed", "connection-reset", "data", "listening"];

/// Placeholder host for records that concern no particular host.
pub const NO_HOST: &str = "-";

/// Env var that forces a flush after every streamed record.
pub const UNBUFFERED_ENV: &str = "IM_TRACE_UNBUFFERED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Orch,
    App,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Orch => "orch",
            Channel::App => "app",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: Timestamp,
    pub seq: u64,
    pub channel: Channel,
    pub kind: String,
    pub host: String,
    pub inst: u64,
    pub details: BTreeMap<String, String>,
}

impl TraceRecord {
    pub fn detail(&self, key: &str) -> Option<&str> {
        self.details.get(key).map(String::as_str)
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={}us seq={} ch={} kind={} host={} inst={}",
            self.time.0,
            self.seq,
            self.channel.as_str(),
            self.kind,
            self.host,
            self.inst
        )?;
        for (k, v) in &self.details {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("trace line {line}: (time, seq) does not increase")]
    OutOfOrder { line: usize },
    #[error("trace is truncated after `{last}`")]
    Truncated { last: String },
    #[error("trace is empty")]
    Empty,
}

/// Values must survive whitespace splitting; anything that would not is
/// replaced with `_`.
fn clean(v: &str) -> String {
    if v.is_empty() {
        return "_".into();
    }
    v.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect()
}

/// Parses one canonical line.
pub fn parse_record(line: &str, lineno: usize) -> Result<TraceRecord, TraceError> {
    let bad = |m: &str| TraceError::Malformed {
        line: lineno,
        message: m.to_string(),
    };
    let mut fields = line.split(' ');
    let mut take = |key: &str| -> Result<&str, TraceError> {
        let f = fields.next().ok_or_else(|| bad(&format!("missing `{key}`")))?;
        f.strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| bad(&format!("expected `{key}=`, found `{f}`")))
    };
    let time = take("t")?
        .strip_suffix("us")
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad time"))?;
    let seq = take("seq")?.parse().map_err(|_| bad("bad seq"))?;
    let channel = match take("ch")? {
        "orch" => Channel::Orch,
        "app" => Channel::App,
        other => return Err(bad(&format!("bad channel `{other}`"))),
    };
    let kind = take("kind")?.to_string();
    let host = take("host")?.to_string();
    let inst = take("inst")?.parse().map_err(|_| bad("bad inst"))?;
    let mut details = BTreeMap::new();
    let mut prev: Option<String> = None;
    for f in fields {
        let (k, v) = f.split_once('=').ok_or_else(|| bad(&format!("bad detail `{f}`")))?;
        if prev.as_deref().is_some_and(|p| p >= k) {
            return Err(bad("detail keys not sorted"));
        }
        prev = Some(k.to_string());
        details.insert(k.to_string(), v.to_string());
    }
    if kind.is_empty() || host.is_empty() {
        return Err(bad("empty kind or host"));
    }
    Ok(TraceRecord {
        time: Timestamp(time),
        seq,
        channel,
        kind,
        host,
        inst,
        details,
    })
}

/// Parses a whole trace and checks ordering.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out: Vec<TraceRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let r = parse_record(line, i + 1)?;
        if let Some(prev) = out.last() {
            if r.time < prev.time || r.seq <= prev.seq {
                return Err(TraceError::OutOfOrder { line: i + 1 });
            }
        }
        out.push(r);
    }
    Ok(out)
}

pub fn render_trace(records: &[TraceRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    s
}

/// Collects records, assigning sequence numbers, and optionally streams them
/// to a writer as they are produced.
pub struct Trace {
    records: Vec<TraceRecord>,
    next_seq: u64,
    last_time: Timestamp,
    stream: Option<Box<dyn Write + Send>>,
    unbuffered: bool,
}

impl fmt::Debug for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Trace")
            .field("records", &self.records.len())
            .field("next_seq", &self.next_seq)
            .finish()
    }
}

impl Default for Trace {
    fn default() -> Self {
        Trace::new()
    }
}

impl Trace {
    pub fn new() -> Self {
        Trace {
            records: Vec::new(),
            next_seq: 1,
            last_time: Timestamp::ZERO,
            stream: None,
            unbuffered: false,
        }
    }

    /// Also write each record to `w`. Flushes per record when
    /// `IM_TRACE_UNBUFFERED=1`.
    pub fn stream_to(&mut self, w: Box<dyn Write + Send>) {
        self.unbuffered = std::env::var(UNBUFFERED_ENV).is_ok_and(|v| v == "1");
        self.stream = Some(w);
    }

    pub fn push(
        &mut self,
        time: Timestamp,
        channel: Channel,
        kind: &str,
        host: &str,
        inst: u64,
        details: impl IntoIterator<Item = (impl Into<String>, impl AsRef<str>)>,
    ) {
        // Wall-clock backends may observe slightly out-of-order instants.
        let time = time.max(self.last_time);
        self.last_time = time;
        let record = TraceRecord {
            time,
            seq: self.next_seq,
            channel,
            kind: clean(kind),
            host: clean(host),
            inst,
            details: details
                .into_iter()
                .map(|(k, v)| (clean(&k.into()), clean(v.as_ref())))
                .collect(),
        };
        self.next_seq += 1;
        if let Some(w) = self.stream.as_mut() {
            let _ = writeln!(w, "{record}");
            if self.unbuffered {
                let _ = w.flush();
            }
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }

    pub fn render(&self) -> String {
        render_trace(&self.records)
    }

    pub fn flush(&mut self) -> io::Result<()> {
        match self.stream.as_mut() {
            Some(w) => w.flush(),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_line() {
        let mut t = Trace::new();
        t.push(Timestamp(201_000), Channel::App, "connected", "ext/1", 0, [("peer", "web-1"), ("conn", "1")]);
        assert_eq!(
            t.render(),
            "t=201000us seq=1 ch=app kind=connected host=ext/1 inst=0 conn=1 peer=web-1\n"
        );
    }

    #[test]
    fn rejects_unsorted_and_out_of_order() {
        assert!(parse_record("t=1us seq=1 ch=orch kind=x host=a inst=0 b=1 a=2", 1).is_err());
        assert!(parse_trace("t=5us seq=2 ch=orch kind=x host=a inst=0\nt=4us seq=3 ch=orch kind=x host=a inst=0\n").is_err());
        assert!(parse_trace("t=5us seq=2 ch=orch kind=x host=a inst=0\nt=5us seq=2 ch=orch kind=x host=a inst=0\n").is_err());
        assert!(parse_record("t=5 seq=2 ch=orch kind=x host=a inst=0", 1).is_err());
        assert!(parse_record("t=5us seq=2 ch=net kind=x host=a inst=0", 1).is_err());
    }

    #[test]
    fn whitespace_in_values_is_cleaned() {
        let mut t = Trace::new();
        t.push(Timestamp(0), Channel::Orch, "note", "h", 1, [("why", "two words")]);
        assert_eq!(t.records()[0].detail("why"), Some("two_words"));
    }

    fn arb_record() -> impl Strategy<Value = TraceRecord> {
        (
            any::<u32>(),
            1u64..1_000_000,
            any::<bool>(),
            "[a-z-]{1,12}",
            "[a-z0-9./-]{1,10}",
            0u64..50,
            proptest::collection::btree_map("[a-z_]{1,6}", "[a-z0-9./:-]{1,8}", 0..5),
        )
            .prop_map(|(t, seq, app, kind, host, inst, details)| TraceRecord {
                time: Timestamp(u64::from(t)),
                seq,
                channel: if app { Channel::App } else { Channel::Orch },
                kind,
                host,
                inst,
                details,
            })
    }

    proptest! {
        #[test]
        fn serialization_round_trips(r in arb_record()) {
            prop_assert_eq!(parse_record(&r.to_string(), 1).unwrap(), r);
        }
    }
}
